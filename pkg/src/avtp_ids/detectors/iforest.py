"""Isolation forest: random axis-aligned splits isolate anomalies in few
steps, so short average path lengths mean high scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from ..nn.checkpoint import CheckpointError, read_container, write_container

DEFAULT_TREES = 100
DEFAULT_PSI = 256
_EULER = 0.5772156649015329


def harmonic(m) -> np.ndarray:
    """H(m) = 1 + 1/2 + ... + 1/m, for real m >= 0 via digamma."""
    m = np.asarray(m, dtype=np.float64)
    return digamma(m + 1.0) + _EULER


def c_factor(m) -> np.ndarray:
    """Average path length of an unsuccessful BST search among ``m`` points:
    2 H(m-1) - 2 (m-1)/m, with c(1) = c(0) = 0."""
    m = np.asarray(m, dtype=np.float64)
    safe = np.maximum(m, 2.0)
    out = 2.0 * harmonic(safe - 1.0) - 2.0 * (safe - 1.0) / safe
    out = np.where(m > 1, out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class IsolationTree:
    """Flat node arrays; a leaf has ``feature == -1`` and stores its size."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def leaves(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = x[active, self.feature[nd]] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def path_length(self, x: np.ndarray) -> np.ndarray:
        leaf = self.leaves(x)
        return self.depth[leaf] + c_factor(self.size[leaf])


def build_tree(x: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(d):
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (size, 0), (depth, d)):
            arr.append(v)
        return len(feature) - 1

    stack = [(np.arange(len(x)), 0, new_node(0))]
    while stack:
        rows, d, node = stack.pop()
        size[node] = len(rows)
        if d >= height_limit or len(rows) <= 1:
            continue
        sub = x[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if varying.size == 0:
            continue
        q = int(varying[rng.integers(varying.size)])
        p = rng.uniform(lo[q], hi[q])
        if p <= lo[q]:
            # uniform() may return the lower end; keep both children non-empty.
            p = np.nextafter(lo[q], hi[q])
        mask = sub[:, q] < p
        feature[node], threshold[node] = q, p
        left[node], right[node] = new_node(d + 1), new_node(d + 1)
        stack.append((rows[~mask], d + 1, right[node]))
        stack.append((rows[mask], d + 1, left[node]))
    return IsolationTree(np.array(feature, dtype=np.int64), np.array(threshold),
                         np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                         np.array(size, dtype=np.int64), np.array(depth, dtype=np.int64))


@dataclass(frozen=True)
class IsoForest:
    trees: tuple
    psi: int
    n_trees: int
    seed: int
    n_features: int = 0

    higher_is_anomalous = True

    def mean_path_length(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        total = np.zeros(len(x))
        for t in self.trees:
            total += t.path_length(x)
        return total / len(self.trees)

    def score(self, x: np.ndarray) -> np.ndarray:
        """s(x) = 2^(-E[h(x)] / c(psi)), in (0, 1); high is anomalous."""
        return score_from_depth(self.mean_path_length(x), self.psi)

    anomaly_score = score

    def save(self, path) -> int:
        offsets = np.cumsum([0] + [len(t.feature) for t in self.trees])
        cat = {f: np.concatenate([getattr(t, f) for t in self.trees])
               for f in ("feature", "threshold", "left", "right", "size", "depth")}
        meta = {"psi": self.psi, "n_trees": self.n_trees, "seed": self.seed,
                "n_features": self.n_features}
        return write_container(path, "iforest", meta,
                               [("offsets", offsets.astype(np.int64))] + list(cat.items()))

    @classmethod
    def load(cls, path) -> "IsoForest":
        kind, meta, a = read_container(path)
        if kind != "iforest":
            raise CheckpointError(f"{path}: holds {kind!r}, not an isolation forest")
        off = a["offsets"]
        trees = tuple(
            IsolationTree(*(a[f][off[i] : off[i + 1]] for f in
                            ("feature", "threshold", "left", "right", "size", "depth")))
            for i in range(len(off) - 1)
        )
        return cls(trees, int(meta["psi"]), int(meta["n_trees"]), int(meta["seed"]),
                   int(meta.get("n_features", 0)))


def score_from_depth(mean_depth, psi: int):
    return np.power(2.0, -np.asarray(mean_depth) / c_factor(psi))


def iforest_fit(x: np.ndarray, n_trees: int = DEFAULT_TREES, psi: int | None = None,
                seed: int = 0) -> IsoForest:
    """``psi`` defaults to min(256, n); each tree draws its own subsample
    without replacement and stops at depth ceil(log2 psi)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if x.ndim != 2 or n < 2:
        raise ValueError("need at least two training vectors")
    psi = min(DEFAULT_PSI, n) if psi is None else int(psi)
    if not 2 <= psi <= n:
        raise ValueError(f"subsample size must lie in [2, n={n}], got {psi}")
    if n_trees < 1:
        raise ValueError("need at least one tree")
    rng = np.random.default_rng(seed)
    limit = math.ceil(math.log2(psi))
    trees = tuple(build_tree(x[rng.choice(n, psi, replace=False)], limit, rng) for _ in range(n_trees))
    return IsoForest(trees, psi, n_trees, seed, x.shape[1])


def iforest_score(model: IsoForest, x: np.ndarray) -> np.ndarray:
    return model.score(x)
