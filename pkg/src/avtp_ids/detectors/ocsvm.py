"""nu-one-class SVM with an RBF kernel, trained by sequential minimal
optimisation on the dual

    min 1/2 a^T K a   s.t.  0 <= a_i <= 1/(nu n),  sum a_i = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial.distance import cdist

from ..nn.checkpoint import CheckpointError, read_container, write_container

DEFAULT_NU = 0.05
DEFAULT_CAP = 10_000
KKT_TOL = 1e-9


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    d2 = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
    return np.exp(-gamma * d2)


def default_gamma(x: np.ndarray) -> float:
    """1 / (d * var(X)), falling back to 1 / d for constant data."""
    x = np.asarray(x, dtype=np.float64)
    var = float(x.var())
    return 1.0 / (x.shape[1] * var) if var > 0 else 1.0 / x.shape[1]


@numba.njit(cache=True)
def _smo(K, alpha, C, tol, max_iter):
    n = K.shape[0]
    G = K @ alpha
    it = 0
    while it < max_iter:
        # i may grow (alpha_i < C) and should have the smallest gradient;
        # j may shrink (alpha_j > 0) and should have the largest.
        i, j = -1, -1
        gi, gj = np.inf, -np.inf
        for t in range(n):
            if alpha[t] < C and G[t] < gi:
                gi, i = G[t], t
            if alpha[t] > 0.0 and G[t] > gj:
                gj, j = G[t], t
        if i < 0 or j < 0 or gj - gi <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        delta = (gj - gi) / eta if eta > 1e-15 else np.inf
        room_i = C - alpha[i]
        room_j = alpha[j]
        delta = min(delta, room_i, room_j)
        alpha[i] += delta
        alpha[j] -= delta
        # Land exactly on the bounds so free/bound tests stay exact.
        if delta == room_i:
            alpha[i] = C
        if delta == room_j:
            alpha[j] = 0.0
        for t in range(n):
            G[t] += delta * (K[t, i] - K[t, j])
        it += 1
    return G, it


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray
    rho: float
    gamma: float
    nu: float
    n_train: int
    iterations: int = 0
    degenerate: bool = False

    higher_is_anomalous = False

    def decision(self, x: np.ndarray) -> np.ndarray:
        """d(x) = sum_i alpha_i K(x_i, x) - rho; lower is more anomalous."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty(len(x))
        for s in range(0, len(x), 2048):
            out[s : s + 2048] = rbf_kernel(x[s : s + 2048], self.support_vectors, self.gamma) @ self.alpha
        return out - self.rho

    score = decision

    def anomaly_score(self, x: np.ndarray) -> np.ndarray:
        return -self.decision(x)

    def save(self, path) -> int:
        meta = {"rho": self.rho, "gamma": self.gamma, "nu": self.nu, "n_train": self.n_train,
                "iterations": self.iterations, "degenerate": self.degenerate}
        return write_container(path, "ocsvm", meta,
                               [("support_vectors", self.support_vectors), ("alpha", self.alpha)])

    @classmethod
    def load(cls, path) -> "OcsvmModel":
        kind, meta, arrays = read_container(path)
        if kind != "ocsvm":
            raise CheckpointError(f"{path}: holds {kind!r}, not an ocsvm")
        return cls(arrays["support_vectors"], arrays["alpha"], meta["rho"], meta["gamma"],
                   meta["nu"], meta["n_train"], meta["iterations"], meta["degenerate"])


def _smo_solve(K: np.ndarray, C: float, tol: float, max_iter: int):
    n = len(K)
    # Uniform start: feasible for every nu and symmetric under permutations.
    alpha = np.full(n, 1.0 / n)
    _, iters = _smo(K, alpha, C, tol, max_iter)
    # Fresh gradient: the incremental one accumulates rounding.
    return alpha, K @ alpha, iters


def _offset(alpha: np.ndarray, G: np.ndarray, C: float) -> float:
    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        return float(G[free].mean())
    # No free multipliers: any rho between the bound groups satisfies KKT.
    lo = G[alpha >= C].max() if (alpha >= C).any() else G.min()
    hi = G[alpha <= 0.0].min() if (alpha <= 0.0).any() else G.max()
    return float(0.5 * (lo + hi))


def ocsvm_fit(x: np.ndarray, nu: float = DEFAULT_NU, gamma: float | None = None,
              tol: float = KKT_TOL, max_iter: int = 10_000_000, cap: int | None = DEFAULT_CAP,
              seed: int = 0) -> OcsvmModel:
    """Fit on the rows of ``x``; more than ``cap`` rows are subsampled
    uniformly (seeded) first."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("need at least two training vectors")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    if cap is not None and len(x) > cap:
        idx = np.sort(np.random.default_rng(seed).choice(len(x), cap, replace=False))
        x = x[idx]
    gamma = default_gamma(x) if gamma is None else float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n = len(x)
    C = 1.0 / (nu * n)
    if np.all(x == x[0]):
        # Every kernel entry is 1: the objective is constant on the simplex.
        alpha = np.full(n, 1.0 / n)
        return OcsvmModel(x, alpha, 1.0, gamma, nu, n, 0, True)
    K = rbf_kernel(x, x, gamma)
    alpha, G, iters = _smo_solve(K, C, tol, max_iter)
    rho = _offset(alpha, G, C)
    keep = alpha > 0.0
    return OcsvmModel(x[keep], alpha[keep], rho, gamma, nu, n, int(iters), False)


def ocsvm_score(model: OcsvmModel, x: np.ndarray) -> np.ndarray:
    return model.decision(x)
