"""Confusion matrices, precision/recall/F1, latency benchmarks and reports."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CSV_FIELDS = ["dataset", "detector", "w", "beta", "precision", "recall", "f1",
              "tp", "fp", "tn", "fn", "latency_mean_s", "latency_std_s",
              "params", "model_bytes"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with abnormal (1) as the positive class."""
    p = np.asarray(predictions).astype(bool).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions for {y.size} labels")
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    return ConfusionMatrix(tp, fp, int(p.size) - tp - fp - fn, fn)


def precision(cm: ConfusionMatrix) -> float:
    d = cm.tp + cm.fp
    return cm.tp / d if d else 0.0


def recall(cm: ConfusionMatrix) -> float:
    d = cm.tp + cm.fn
    return cm.tp / d if d else 0.0


def f1_from(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def f1_score(cm: ConfusionMatrix) -> float:
    return f1_from(precision(cm), recall(cm))


@dataclass
class Timing:
    per_batch_mean_s: float
    per_batch_std_s: float
    per_window_mean_s: float
    per_window_std_s: float
    repetitions: int
    batch_size: int
    n_windows: int


def benchmark_inference(score_fn, windows: np.ndarray, repetitions: int = 5,
                        batch_size: int = 16) -> Timing:
    """Wall-clock latency of ``score_fn`` over ``windows`` in 16-window batches.

    One untimed warm-up pass precedes the timed repetitions; std is the
    sample standard deviation over repetitions.
    """
    n = len(windows)
    if n == 0:
        raise ValueError("no windows to benchmark")
    if repetitions < 2:
        raise ValueError("need at least two repetitions for a standard deviation")
    batches = [windows[s : s + batch_size] for s in range(0, n, batch_size)]
    for b in batches:
        score_fn(b)
    per_batch, per_window = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for b in batches:
            score_fn(b)
        dt = time.perf_counter() - t0
        per_batch.append(dt / len(batches))
        per_window.append(dt / n)
    return Timing(statistics.fmean(per_batch), statistics.stdev(per_batch),
                  statistics.fmean(per_window), statistics.stdev(per_window),
                  repetitions, batch_size, n)


@dataclass
class EvalReport:
    dataset: str
    detector: str
    w: int
    beta: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    latency_mean_s: float = float("nan")
    latency_std_s: float = float("nan")
    params: int = 0
    model_bytes: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, dataset, detector, w, beta, predictions, labels, **kw):
        cm = confusion(predictions, labels)
        p, r = precision(cm), recall(cm)
        return cls(dataset, detector, w, float(beta), p, r, f1_from(p, r),
                   cm.tp, cm.fp, cm.tn, cm.fn, **kw)

    @property
    def matrix(self) -> ConfusionMatrix:
        return ConfusionMatrix(self.tp, self.fp, self.tn, self.fn)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def _jsonable(v):
    # Non-finite floats are stored as strings so the file stays strict JSON.
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _unjson(v):
    if v in ("nan", "inf", "-inf"):
        return float(v)
    if isinstance(v, dict):
        return {k: _unjson(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_unjson(x) for x in v]
    return v


REPORT_SCHEMA = {
    "type": "object",
    "required": ["reports"],
    "properties": {
        "reports": {
            "type": "array",
            "items": {
                "type": "object",
                "required": CSV_FIELDS,
                "properties": {
                    "dataset": {"type": "string"},
                    "detector": {"type": "string"},
                    "w": {"type": "integer"},
                    "precision": {"type": "number", "minimum": 0, "maximum": 1},
                    "recall": {"type": "number", "minimum": 0, "maximum": 1},
                    "f1": {"type": "number", "minimum": 0, "maximum": 1},
                    "tp": {"type": "integer", "minimum": 0},
                    "fp": {"type": "integer", "minimum": 0},
                    "tn": {"type": "integer", "minimum": 0},
                    "fn": {"type": "integer", "minimum": 0},
                },
            },
        }
    },
}


def emit_report(reports, path, fmt: str | None = None) -> None:
    """Write one or more reports as JSON (``{"reports": [...]}``) or CSV."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "json")
    if fmt == "json":
        doc = {"reports": [_jsonable(asdict(r)) for r in reports]}
        path.write_text(json.dumps(doc, indent=2))
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            out = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            out.writeheader()
            for r in reports:
                out.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report(path) -> list[EvalReport]:
    path = Path(path)
    if path.suffix == ".csv":
        out = []
        with path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                kw = {}
                for k, v in row.items():
                    if k in ("dataset", "detector"):
                        kw[k] = v
                    elif k in ("w", "tp", "fp", "tn", "fn", "params", "model_bytes"):
                        kw[k] = int(v)
                    else:
                        kw[k] = float(v)
                out.append(EvalReport(**kw))
        return out
    doc = json.loads(path.read_text())
    return [EvalReport(**_unjson(r)) for r in doc["reports"]]
