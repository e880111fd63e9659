"""Fit the three classical baselines on benign windows and binarise their
scores on a labeled validation capture."""

import numpy as np

from avtp_ids.detectors import classical_threshold, fit_detector
from avtp_ids.evaluation import confusion, f1_score
from avtp_ids.synth import StreamConfig, attacked_capture, gen_stream
from avtp_ids.windows import WindowSet, window_labels

W = 16


def windows(frames, truth=None):
    feats = np.stack([np.frombuffer(f.data[:58], np.uint8) for f in frames])
    return WindowSet(feats, W, labels=None if truth is None else window_labels(truth, W))


benign = windows(gen_stream(StreamConfig(seed=1, n_frames=3000)))
caps = {}
for name, seed, phase in (("val", 2, 100_000), ("test", 3, 200_000)):
    att = attacked_capture(StreamConfig(seed=seed, n_frames=2000, first_frame=phase), n_bursts=8)
    caps[name] = windows(att.frames, att.truth)

for kind in ("ocsvm", "lof", "iforest"):
    det = fit_detector(kind, benign.flat(), seed=0)
    th = classical_threshold(det.anomaly_score(caps["val"].flat()), caps["val"].labels)
    pred = th.predict(det.anomaly_score(caps["test"].flat()))
    print(f"{kind:<8} validation F1 {th.f1:.3f}  test F1 {f1_score(confusion(pred, caps['test'].labels)):.3f}")
