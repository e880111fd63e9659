"""Sliding windows over packet streams, replay-set labeling and encodings.

A window of length ``w`` starting at packet ``k`` covers packets
``k .. k+w-1`` (slide 1). It is abnormal when any of its packets' 58-byte
prefix belongs to the replay set. Bytes are scaled by 1/255.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nn.checkpoint import read_container, write_container

N_FEATURES = 58
WINDOW_SIZES = (8, 16, 24, 32, 40)


class InsufficientDataError(ValueError):
    pass


class ReplaySet:
    """The set R of replayed packets, matched on exact 58-byte prefixes."""

    def __init__(self, prefixes=()):
        self._members: set[bytes] = set()
        for p in prefixes:
            self.add(p)

    def add(self, prefix) -> None:
        b = bytes(np.asarray(prefix, dtype=np.uint8).tobytes()) if not isinstance(prefix, bytes) else prefix
        if len(b) < N_FEATURES:
            raise ValueError(f"replay prefix has {len(b)} bytes, need {N_FEATURES}")
        self._members.add(b[:N_FEATURES])

    def __contains__(self, prefix) -> bool:
        b = prefix if isinstance(prefix, bytes) else np.asarray(prefix, dtype=np.uint8).tobytes()
        return b[:N_FEATURES] in self._members

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self):
        return iter(sorted(self._members))

    def mask(self, features: np.ndarray) -> np.ndarray:
        """Boolean membership of every row of a ``[N, 58]`` uint8 matrix."""
        features = np.ascontiguousarray(features, dtype=np.uint8)
        return np.fromiter((r.tobytes() in self._members for r in features),
                           dtype=bool, count=len(features))

    def save(self, path) -> None:
        """Raw file of concatenated 58-byte prefixes, sorted."""
        Path(path).write_bytes(b"".join(self))

    @classmethod
    def load(cls, path) -> "ReplaySet":
        data = Path(path).read_bytes()
        if len(data) % N_FEATURES:
            raise ValueError(f"{path}: size {len(data)} is not a multiple of {N_FEATURES}")
        return cls(data[k : k + N_FEATURES] for k in range(0, len(data), N_FEATURES))


@dataclass(frozen=True)
class Window:
    start_index: int
    w: int
    packets: tuple
    label: int = 0

    def features(self) -> np.ndarray:
        return np.stack([p.features for p in self.packets])


def _check_w(w: int, allowed=WINDOW_SIZES) -> None:
    if allowed is not None and w not in allowed:
        raise ValueError(f"window length must be one of {allowed}, got {w}")


def build_windows(packets, w: int, replay_set: ReplaySet | None = None,
                  allowed=WINDOW_SIZES) -> list[Window]:
    """All ``len(packets) - w + 1`` windows, optionally labeled against R."""
    _check_w(w, allowed)
    if len(packets) < w:
        raise InsufficientDataError(f"{len(packets)} packets cannot fill a window of {w}")
    packets = tuple(packets)
    for k in range(1, len(packets)):
        if packets[k].index != packets[k - 1].index + 1:
            raise ValueError("packets must be consecutive by index")
    out = []
    for k in range(len(packets) - w + 1):
        win = Window(packets[k].index, w, packets[k : k + w])
        if replay_set is not None:
            win = Window(win.start_index, w, win.packets, label_window(win, replay_set))
        out.append(win)
    return out


def label_window(window: Window, replay_set: ReplaySet) -> int:
    if len(replay_set) == 0:
        raise ValueError("replay set is empty")
    return int(any(p.features.tobytes() in replay_set for p in window.packets))


def to_image(window: Window) -> np.ndarray:
    """``w x 58`` matrix; row r is packet r, column c byte c, scaled to [0, 1]."""
    return window.features().astype(np.float64) / 255.0


def to_flat(window: Window) -> np.ndarray:
    return to_image(window).reshape(-1)


class WindowSet:
    """Array-backed windows over one capture: the bulk path for training.

    Holds the ``[N, 58]`` uint8 feature matrix once; encodings are produced
    on demand for a subset of window indices.
    """

    def __init__(self, features: np.ndarray, w: int, labels=None, allowed=WINDOW_SIZES):
        _check_w(w, allowed)
        features = np.ascontiguousarray(features, dtype=np.uint8)
        if features.ndim != 2 or features.shape[1] != N_FEATURES:
            raise ValueError(f"features must be [N, {N_FEATURES}], got {features.shape}")
        if len(features) < w:
            raise InsufficientDataError(f"{len(features)} packets cannot fill a window of {w}")
        self.features = features
        self.w = w
        n = len(features) - w + 1
        self.labels = np.zeros(n, dtype=np.uint8) if labels is None else np.asarray(labels, dtype=np.uint8)
        if len(self.labels) != n:
            raise ValueError("one label per window expected")
        self._view = sliding_window_view(features, (w, N_FEATURES))[:, 0]

    @classmethod
    def from_packets(cls, packets, w: int, replay_set: ReplaySet | None = None,
                     allowed=WINDOW_SIZES) -> "WindowSet":
        from .pcap import feature_matrix

        feats = feature_matrix(packets)
        ws = cls(feats, w, allowed=allowed)
        if replay_set is not None:
            ws.labels = window_labels(replay_set.mask(feats), w)
        return ws

    def __len__(self) -> int:
        return len(self.labels)

    def raw(self, idx=None) -> np.ndarray:
        """``[n, w, 58]`` uint8 windows."""
        return self._view if idx is None else self._view[idx]

    def sequences(self, idx=None) -> np.ndarray:
        return self.raw(idx).astype(np.float64) / 255.0

    def images(self, idx=None) -> np.ndarray:
        return self.sequences(idx)[:, None]

    def flat(self, idx=None) -> np.ndarray:
        seq = self.sequences(idx)
        return seq.reshape(len(seq), -1)

    def encode(self, kind: str, idx=None) -> np.ndarray:
        """Model input for ``kind`` in {"cae", "lstmae", "flat"}."""
        if kind == "cae":
            return self.images(idx)
        if kind == "lstmae":
            return self.sequences(idx)
        if kind == "flat":
            return self.flat(idx)
        raise ValueError(f"unknown encoding {kind!r}")

    def save(self, path) -> int:
        """Cached dataset: header {w, count} plus labels and byte matrices."""
        return write_container(path, "windows", {"w": self.w, "count": len(self)},
                               [("labels", self.labels), ("windows", np.ascontiguousarray(self._view))])

    @classmethod
    def load(cls, path) -> "WindowSet":
        kind, meta, arrays = read_container(path)
        if kind != "windows":
            raise ValueError(f"{path}: holds {kind!r}, not windows")
        mats = arrays["windows"]
        w = int(meta["w"])
        # Windows overlap, so the packet stream is row 0 of every window plus
        # the tail of the last one.
        feats = np.concatenate([mats[:, 0], mats[-1, 1:]]) if len(mats) else mats
        ws = cls(feats, w, labels=arrays["labels"], allowed=None)
        if not np.array_equal(ws.raw(), mats):
            raise ValueError(f"{path}: windows are not a slide-1 sequence")
        return ws


def window_labels(packet_abnormal: np.ndarray, w: int) -> np.ndarray:
    """Window k is 1 iff any of packets k..k+w-1 is abnormal."""
    flags = np.asarray(packet_abnormal, dtype=np.int64)
    csum = np.concatenate([[0], np.cumsum(flags)])
    return (csum[w:] - csum[:-w] > 0).astype(np.uint8)


def split_train_val(n_or_windows, fraction: float = 0.9, seed: int = 0):
    """Deterministic disjoint split; ``fraction`` is the training share.

    Accepts a count or a sequence and returns two sorted index arrays.
    """
    n = n_or_windows if isinstance(n_or_windows, (int, np.integer)) else len(n_or_windows)
    if n == 0:
        raise ValueError("cannot split an empty window set")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    n_train = min(max(n_train, 1), n - 1) if n > 1 else n
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
