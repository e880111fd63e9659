"""Deterministic AVTP-like talker streams and replay-attack injection.

Frames imitate an IEC 61883-4 (MPEG-TS) stream carried over IEEE 1722 on a
VLAN: a tagged Ethernet header, the AVTP stream header with an incrementing
8-bit sequence number and a presentation timestamp, a CIP header with a data
block counter, a source-packet timestamp and the first TS packet header.
The remainder of the frame is seeded random payload. Byte offsets::

     0..5   destination MAC        6..11  talker MAC
    12..15  802.1Q tag (0x8100, PCP/VID)   16..17 ethertype 0x22F0
    18      subtype 0x00           19     sv|tv flags
    20      sequence number        21     reserved|tu
    22..29  stream id              30..33 AVTP timestamp (ns, mod 2^32)
    34..37  gateway info           38..39 stream data length
    40..41  tag/channel/tcode/sy   42..49 CIP header (DBC at 45)
    50..53  source packet header   54..57 TS header (continuity counter in 57)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pcap import AVTP_ETHERTYPE, VLAN_TPID, RawFrame, write_pcap
from .windows import N_FEATURES, ReplaySet

# Source-packet timestamps tick at 31.25 MHz (one tick per 32 ns).
_SPH_SHIFT = 5
_TS_PID = 0x0100


@dataclass(frozen=True)
class StreamConfig:
    seed: int = 0
    n_frames: int = 1000
    stream_id: bytes = bytes.fromhex("0011223344550001")
    talker_mac: bytes = bytes.fromhex("001122334455")
    listener_mac: bytes = bytes.fromhex("91e0f0000e80")
    vlan_id: int = 2
    pcp: int = 3
    frame_len: int = 438
    period_ns: int = 1 << 17
    start_ns: int = 1_600_000_000 * 10**9
    first_frame: int = 0
    jitter_us: int = 3
    sph_jitter_ticks: int = 0
    presentation_offset_ns: int = 2_000_000

    def __post_init__(self):
        if self.frame_len < N_FEATURES:
            raise ValueError(f"frame_len must be at least {N_FEATURES}")
        if self.period_ns <= 0:
            raise ValueError("period must be positive")
        if len(self.stream_id) != 8 or len(self.talker_mac) != 6 or len(self.listener_mac) != 6:
            raise ValueError("stream id is 8 octets, MACs 6")


def _frame_bytes(cfg: StreamConfig, k: int, sph_jitter: int, payload: bytes) -> bytes:
    frame_no = cfg.first_frame + k
    t_ns = cfg.start_ns + frame_no * cfg.period_ns
    tci = (cfg.pcp << 13) | cfg.vlan_id
    eth = cfg.listener_mac + cfg.talker_mac + struct.pack("!HHH", VLAN_TPID, tci, AVTP_ETHERTYPE)
    avtp_ts = (t_ns + cfg.presentation_offset_ns) & 0xFFFFFFFF
    data_len = cfg.frame_len - 42
    hdr = struct.pack(
        "!BBBB8sIIHBB",
        0x00, 0x81, frame_no & 0xFF, 0x00, cfg.stream_id, avtp_ts, 0, data_len & 0xFFFF,
        0x5F, 0xA0,
    )
    dbc = (frame_no * 8) & 0xFF
    cip = bytes([0x3F, 0x06, 0xC4, dbc, 0xA0, 0x80, 0xFF, 0xFF])
    sph = ((t_ns >> _SPH_SHIFT) + sph_jitter) & 0x01FFFFFF
    ts_hdr = bytes([0x47, (_TS_PID >> 8) & 0x1F, _TS_PID & 0xFF, 0x10 | (frame_no & 0x0F)])
    frame = eth + hdr + cip + struct.pack("!I", sph) + ts_hdr
    return frame + payload[: cfg.frame_len - len(frame)]


def gen_stream(cfg: StreamConfig) -> list[RawFrame]:
    """``cfg.n_frames`` consecutive talker frames; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_frames
    jitter = rng.integers(0, cfg.jitter_us + 1, size=n)
    sph_jitter = rng.integers(-cfg.sph_jitter_ticks, cfg.sph_jitter_ticks + 1, size=n)
    payload_len = cfg.frame_len - N_FEATURES
    frames = []
    for k in range(n):
        payload = rng.integers(0, 256, size=payload_len, dtype=np.uint8).tobytes()
        data = _frame_bytes(cfg, k, int(sph_jitter[k]), payload)
        # Capture clock: microsecond ticks with bounded arrival jitter.
        t_us = (cfg.start_ns + (cfg.first_frame + k) * cfg.period_ns) // 1000 + int(jitter[k])
        frames.append(RawFrame(t_us // 10**6, (t_us % 10**6) * 1000, data))
    return frames


@dataclass(frozen=True)
class AttackPlan:
    """Replay ``segment_len`` frames starting at ``segment_start`` (indices
    into the legitimate stream), inserting copy ``j`` (cycling through the
    segment) before legitimate frame ``positions[j]``."""

    segment_start: int = 0
    segment_len: int = 36
    positions: tuple = ()

    def __post_init__(self):
        if self.segment_len < 1:
            raise ValueError("replay segment needs at least one frame")
        if list(self.positions) != sorted(self.positions):
            raise ValueError("injection positions must be non-decreasing")


@dataclass
class AttackResult:
    frames: list
    replay_set: ReplaySet
    injected: np.ndarray
    original: np.ndarray = field(default=None)

    @property
    def truth(self) -> np.ndarray:
        """Packets whose prefix is in R: injected copies and their originals."""
        return self.injected | self.original


def burst_positions(n_frames: int, n_bursts: int, burst_len: int = 36, spacing: int = 1,
                    start: int = 0, seed: int = 0) -> tuple:
    """Positions for ``n_bursts`` non-overlapping bursts of ``burst_len``
    injections, one copy every ``spacing`` legitimate frames, placed at
    seeded random offsets in ``[start, n_frames)``."""
    span = burst_len * spacing
    free = n_frames - start - n_bursts * span
    if free < 0:
        raise ValueError("bursts do not fit in the stream")
    rng = np.random.default_rng(seed)
    gaps = np.sort(rng.integers(0, free + 1, size=n_bursts))
    positions = []
    for b, gap in enumerate(gaps):
        base = start + int(gap) + b * span
        positions.extend(base + spacing * j for j in range(burst_len))
    return tuple(positions)


def inject_replay(stream: list[RawFrame], plan: AttackPlan) -> AttackResult:
    """Insert byte-identical copies of the replay segment into ``stream``.

    Injected copies take the capture time of the legitimate frame they
    precede. The replay set holds the 58-byte prefixes of the segment.
    """
    seg_end = plan.segment_start + plan.segment_len
    if plan.segment_start < 0 or seg_end > len(stream):
        raise ValueError("replay segment lies outside the stream")
    if plan.positions and plan.positions[0] < seg_end:
        raise ValueError("injections must come after the replay segment")
    if plan.positions and plan.positions[-1] > len(stream):
        raise ValueError("injection position beyond stream end")
    segment = stream[plan.segment_start : seg_end]
    replay = ReplaySet(f.data[:N_FEATURES] for f in segment)
    out, injected, original = [], [], []
    pos_iter = iter(enumerate(plan.positions))
    nxt = next(pos_iter, None)
    for k in range(len(stream) + 1):
        while nxt is not None and nxt[1] == k:
            j, _ = nxt
            src = segment[j % plan.segment_len]
            ref = stream[k] if k < len(stream) else stream[-1]
            out.append(RawFrame(ref.ts_sec, ref.ts_nsec, src.data))
            injected.append(True)
            original.append(False)
            nxt = next(pos_iter, None)
        if k < len(stream):
            out.append(stream[k])
            injected.append(False)
            original.append(plan.segment_start <= k < seg_end)
    return AttackResult(out, replay, np.array(injected), np.array(original))


def crop(result: AttackResult, start: int) -> AttackResult:
    """Drop the first ``start`` output frames (e.g. the recording period, so
    that the attacked capture holds no originals of the replayed frames)."""
    return AttackResult(result.frames[start:], result.replay_set,
                        result.injected[start:], result.original[start:])


def attacked_capture(cfg: StreamConfig, n_bursts: int, burst_len: int = 36,
                     spacing: int = 1, seed: int | None = None) -> AttackResult:
    """A legitimate stream whose first ``burst_len`` frames are recorded by
    the attacker and replayed in ``n_bursts`` bursts later on; the recording
    period is cropped from the returned capture."""
    stream = gen_stream(cfg)
    positions = burst_positions(len(stream), n_bursts, burst_len, spacing,
                                start=burst_len, seed=cfg.seed if seed is None else seed)
    result = inject_replay(stream, AttackPlan(0, burst_len, positions))
    return crop(result, burst_len)


def write_ground_truth(result: AttackResult, path) -> None:
    """Sidecar of injected-frame ordinals, one per line."""
    idx = np.flatnonzero(result.injected)
    Path(path).write_text("".join(f"{i}\n" for i in idx))


def read_ground_truth(path, n_frames: int) -> np.ndarray:
    mask = np.zeros(n_frames, dtype=bool)
    text = Path(path).read_text().split()
    if text:
        mask[np.array([int(t) for t in text])] = True
    return mask


def write_capture(result_or_frames, path) -> None:
    frames = result_or_frames.frames if isinstance(result_or_frames, AttackResult) else result_or_frames
    write_pcap(frames, path)


def read_kv_config(path) -> dict:
    """``key = value`` lines (``#`` comments) into a dict of strings."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_from_kv(kv: dict) -> StreamConfig:
    ints = {"seed", "n_frames", "vlan_id", "pcp", "frame_len", "period_ns", "start_ns",
            "first_frame", "jitter_us", "sph_jitter_ticks", "presentation_offset_ns"}
    hexes = {"stream_id", "talker_mac", "listener_mac"}
    kwargs = {}
    for key, value in kv.items():
        if key in ints:
            kwargs[key] = int(value, 0)
        elif key in hexes:
            kwargs[key] = bytes.fromhex(value.replace(":", ""))
    return StreamConfig(**kwargs)
