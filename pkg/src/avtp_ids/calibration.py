"""Reconstruction-error thresholds: beta = mu + alpha * sigma for alpha in
{-2, -1.5, ..., 2}, chosen by F1 on a labeled validation capture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import confusion, f1_score, precision, recall

ALPHAS = tuple(np.round(np.arange(-2.0, 2.0 + 1e-9, 0.5), 1))


@dataclass(frozen=True)
class ErrorStats:
    mu: float
    sigma: float


@dataclass
class ThresholdSweep:
    stats: ErrorStats
    alphas: tuple
    betas: np.ndarray
    f1: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    best: int

    @property
    def beta(self) -> float:
        return float(self.betas[self.best])

    @property
    def alpha(self) -> float:
        return float(self.alphas[self.best])

    def table(self) -> list[dict]:
        return [
            {"alpha": float(a), "beta": float(b), "precision": float(p), "recall": float(r), "f1": float(f)}
            for a, b, p, r, f in zip(self.alphas, self.betas, self.precision, self.recall, self.f1)
        ]


def error_stats(errors) -> ErrorStats:
    """Population mean and standard deviation."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no errors to summarise")
    return ErrorStats(float(e.mean()), float(e.std()))


def classify(errors, beta: float):
    """1 (abnormal) where the error exceeds ``beta``; a tie is normal."""
    if not np.isfinite(beta):
        raise ValueError("threshold must be finite")
    out = (np.asarray(errors) > beta).astype(np.uint8)
    return int(out) if out.ndim == 0 else out


def candidates(stats: ErrorStats, alphas=ALPHAS) -> np.ndarray:
    return np.array([stats.mu + a * stats.sigma for a in alphas])


def sweep_and_select(stats: ErrorStats, errors, labels, alphas=ALPHAS) -> ThresholdSweep:
    """Score every candidate by F1; the best wins, ties go to the smaller beta."""
    labels = np.asarray(labels)
    if labels.size == 0 or np.all(labels == labels.flat[0]):
        raise ValueError("validation labels must contain both classes")
    betas = candidates(stats, alphas)
    f1s, ps, rs = [], [], []
    for b in betas:
        cm = confusion(classify(errors, b), labels)
        ps.append(precision(cm))
        rs.append(recall(cm))
        f1s.append(f1_score(cm))
    f1s = np.array(f1s)
    # Among equal F1 values pick the smallest beta (sigma may be 0, so
    # compare thresholds rather than alphas).
    top = np.flatnonzero(f1s == f1s.max())
    best = int(top[np.argmin(betas[top])])
    return ThresholdSweep(stats, tuple(alphas), betas, f1s, np.array(ps), np.array(rs), best)
