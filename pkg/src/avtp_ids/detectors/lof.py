"""Local outlier factor over Euclidean distance with exactly ``k`` neighbours
(ties broken by training order)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.checkpoint import CheckpointError, read_container, write_container

DEFAULT_K = 20
_CHUNK = 512


def _sq_norms(x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, x)


def knn(train: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool = False):
    """Indices and exact distances of the ``k`` nearest training rows.

    Candidates come from the expanded squared distance; the returned
    distances are recomputed directly so duplicates give exactly 0.
    """
    tn = _sq_norms(train)
    n_q = len(queries)
    idx = np.empty((n_q, k), dtype=np.int64)
    dist = np.empty((n_q, k))
    for s in range(0, n_q, _CHUNK):
        q = queries[s : s + _CHUNK]
        d2 = _sq_norms(q)[:, None] + tn[None, :] - 2.0 * (q @ train.T)
        np.maximum(d2, 0.0, out=d2)
        if exclude_self:
            rows = np.arange(len(q))
            d2[rows, s + rows] = np.inf
        # Slack of a few extra candidates absorbs rounding in d2.
        m = min(k + 8, d2.shape[1])
        cand = np.argpartition(d2, m - 1, axis=1)[:, :m] if m < d2.shape[1] else np.tile(np.arange(d2.shape[1]), (len(q), 1))
        exact = np.sqrt(((q[:, None, :] - train[cand]) ** 2).sum(-1))
        if exclude_self:
            exact[cand == (s + np.arange(len(q)))[:, None]] = np.inf
        order = np.lexsort((cand, exact), axis=1)[:, :k]
        idx[s : s + _CHUNK] = np.take_along_axis(cand, order, 1)
        dist[s : s + _CHUNK] = np.take_along_axis(exact, order, 1)
    return idx, dist


def _lrd(neigh_idx: np.ndarray, neigh_dist: np.ndarray, k_distance: np.ndarray) -> np.ndarray:
    reach = np.maximum(k_distance[neigh_idx], neigh_dist)
    total = reach.sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(total > 0, neigh_idx.shape[1] / np.where(total > 0, total, 1.0), np.inf)


def _lof(own_lrd: np.ndarray, neigh_lrd: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = neigh_lrd.mean(axis=1) / own_lrd
    return np.where(np.isinf(own_lrd), 1.0, ratio)


@dataclass(frozen=True)
class LofModel:
    train: np.ndarray
    k: int
    k_distance: np.ndarray
    lrd: np.ndarray
    train_scores: np.ndarray

    higher_is_anomalous = True

    def score(self, x: np.ndarray) -> np.ndarray:
        """LOF of query points against the training set (about 1 for inliers)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        idx, dist = knn(self.train, x, self.k)
        return _lof(_lrd(idx, dist, self.k_distance), self.lrd[idx])

    anomaly_score = score

    def save(self, path) -> int:
        return write_container(path, "lof", {"k": self.k},
                               [("train", self.train), ("k_distance", self.k_distance),
                                ("lrd", self.lrd), ("train_scores", self.train_scores)])

    @classmethod
    def load(cls, path) -> "LofModel":
        kind, meta, a = read_container(path)
        if kind != "lof":
            raise CheckpointError(f"{path}: holds {kind!r}, not a lof model")
        return cls(a["train"], int(meta["k"]), a["k_distance"], a["lrd"], a["train_scores"])


def lof_fit(x: np.ndarray, k: int = DEFAULT_K) -> LofModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("training data must be a matrix")
    if not 1 <= k < len(x):
        raise ValueError(f"need 1 <= k < n, got k={k}, n={len(x)}")
    idx, dist = knn(x, x, k, exclude_self=True)
    k_distance = dist[:, -1].copy()
    lrd = _lrd(idx, dist, k_distance)
    scores = _lof(lrd, lrd[idx])
    return LofModel(x, k, k_distance, lrd, scores)


def lof_score(model: LofModel, x: np.ndarray) -> np.ndarray:
    return model.score(x)
