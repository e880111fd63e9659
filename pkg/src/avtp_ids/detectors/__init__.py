"""Classical baselines over flattened windows: one-class SVM, local outlier
factor and isolation forest, plus validation-based binarisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.checkpoint import read_container
from .iforest import IsoForest, c_factor, harmonic, iforest_fit, iforest_score
from .lof import LofModel, knn, lof_fit, lof_score
from .ocsvm import OcsvmModel, default_gamma, ocsvm_fit, ocsvm_score, rbf_kernel

DETECTORS = ("ocsvm", "lof", "iforest")
_CLASSES = {"ocsvm": OcsvmModel, "lof": LofModel, "iforest": IsoForest}


@dataclass(frozen=True)
class ClassicalThreshold:
    cut: float
    higher_is_anomalous: bool
    f1: float
    degenerate: bool = False

    def predict(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        out = s > self.cut if self.higher_is_anomalous else s < self.cut
        return out.astype(np.uint8)


def classical_threshold(scores, labels, higher_is_anomalous: bool = True) -> ClassicalThreshold:
    """Scan every observed score as a cut and keep the best validation F1.

    A window is flagged when its score lies strictly beyond the cut in the
    anomalous direction; equal F1 values keep the cut flagging more windows.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("one label per score expected")
    if y.all() or not y.any():
        raise ValueError("validation labels must contain both classes")
    if np.isnan(s).any():
        raise ValueError("scores contain nan")
    a = s if higher_is_anomalous else -s
    cuts = np.unique(a)
    pos = np.sort(a[y])
    neg = np.sort(a[~y])
    tp = len(pos) - np.searchsorted(pos, cuts, side="right")
    fp = len(neg) - np.searchsorted(neg, cuts, side="right")
    fn = len(pos) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    best = int(np.argmax(f1))
    cut = float(cuts[best]) if higher_is_anomalous else float(-cuts[best])
    return ClassicalThreshold(cut, higher_is_anomalous, float(f1[best]), len(cuts) == 1)


def fit_detector(kind: str, x: np.ndarray, seed: int = 0, **options):
    if kind == "ocsvm":
        return ocsvm_fit(x, seed=seed, **options)
    if kind == "lof":
        return lof_fit(x, **options)
    if kind == "iforest":
        return iforest_fit(x, seed=seed, **options)
    raise ValueError(f"unknown detector {kind!r}; expected one of {DETECTORS}")


def load_detector(path):
    kind, _, _ = read_container(path)
    if kind not in _CLASSES:
        raise ValueError(f"{path}: holds {kind!r}, not a classical detector")
    return _CLASSES[kind].load(path)


__all__ = [
    "DETECTORS", "ClassicalThreshold", "IsoForest", "LofModel", "OcsvmModel",
    "c_factor", "classical_threshold", "default_gamma", "fit_detector", "harmonic",
    "iforest_fit", "iforest_score", "knn", "load_detector", "lof_fit", "lof_score",
    "ocsvm_fit", "ocsvm_score", "rbf_kernel",
]
