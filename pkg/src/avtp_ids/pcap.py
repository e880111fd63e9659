"""Classic pcap reading and writing, Ethernet/802.1Q decoding and AVTP
frame selection.

Only the classic libpcap format is handled (microsecond and nanosecond
magics, either byte order). pcapng is not supported.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

AVTP_ETHERTYPE = 0x22F0
VLAN_TPID = 0x8100
LINKTYPE_ETHERNET = 1
FEATURE_BYTES = 58

_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1_000),  # microsecond, little-endian
    b"\xa1\xb2\xc3\xd4": (">", 1_000),
    b"\x4d\x3c\xb2\xa1": ("<", 1),  # nanosecond
    b"\xa1\xb2\x3c\x4d": (">", 1),
}


class UnsupportedFormatError(ValueError):
    pass


class TruncatedCaptureError(ValueError):
    """A record header or body ends before the file does."""


class MalformedFrameError(ValueError):
    pass


@dataclass(frozen=True)
class RawFrame:
    ts_sec: int
    ts_nsec: int
    data: bytes

    def __post_init__(self):
        if len(self.data) < 14:
            raise MalformedFrameError(f"frame of {len(self.data)} bytes is shorter than an Ethernet header")
        if self.ts_sec < 0 or self.ts_nsec < 0:
            raise ValueError("negative timestamp")

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_nsec * 1e-9


@dataclass(frozen=True)
class VlanTag:
    tpid: int
    pcp: int
    dei: int
    vid: int


@dataclass(frozen=True)
class EthernetHeader:
    dst_mac: bytes
    src_mac: bytes
    ethertype: int
    vlan: VlanTag | None = None

    @property
    def length(self) -> int:
        return 18 if self.vlan else 14


@dataclass(frozen=True)
class AvtpPacket:
    index: int
    ts_sec: int
    ts_nsec: int
    features: np.ndarray
    full_bytes: bytes

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_nsec * 1e-9


@dataclass
class CaptureStats:
    total_frames: int = 0
    avtp_frames: int = 0
    non_avtp_frames: int = 0
    truncated_frames: int = 0
    truncated_file: bool = False

    def consistent(self) -> bool:
        return self.total_frames == self.avtp_frames + self.non_avtp_frames + self.truncated_frames


@dataclass
class CaptureReader:
    """Iterator over the records of a classic pcap file.

    After exhaustion, ``truncated`` tells whether the file ended mid-record;
    iterating with ``strict=True`` raises :class:`TruncatedCaptureError`
    instead. Records shorter than an Ethernet header are skipped and counted
    in ``short_records``.
    """

    path: Path
    strict: bool = False
    truncated: bool = field(default=False, init=False)
    short_records: int = field(default=0, init=False)
    linktype: int = field(default=LINKTYPE_ETHERNET, init=False)

    def __iter__(self) -> Iterator[RawFrame]:
        data = Path(self.path).read_bytes()
        if len(data) < 24 or data[:4] not in _MAGICS:
            raise UnsupportedFormatError(f"{self.path}: not a classic pcap file")
        endian, tick_ns = _MAGICS[data[:4]]
        _, _, _, _, _, self.linktype = struct.unpack_from(endian + "HHiIII", data, 4)
        rec = struct.Struct(endian + "IIII")
        pos = 24
        while pos < len(data):
            if pos + 16 > len(data):
                yield from self._truncate("record header")
                return
            ts_sec, ts_frac, incl_len, _orig = rec.unpack_from(data, pos)
            pos += 16
            if pos + incl_len > len(data):
                yield from self._truncate("record body")
                return
            if incl_len < 14:
                self.short_records += 1
            else:
                yield RawFrame(ts_sec, ts_frac * tick_ns, data[pos : pos + incl_len])
            pos += incl_len

    def _truncate(self, what):
        self.truncated = True
        if self.strict:
            raise TruncatedCaptureError(f"{self.path}: truncated {what}")
        return iter(())


def open_capture(path, strict: bool = False) -> CaptureReader:
    """Frames of ``path`` in file order. Raises on a bad global header at
    iteration start; see :class:`CaptureReader` for truncation handling."""
    return CaptureReader(Path(path), strict=strict)


def parse_ethernet(frame) -> EthernetHeader:
    data = frame.data if isinstance(frame, RawFrame) else bytes(frame)
    if len(data) < 14:
        raise MalformedFrameError(f"{len(data)}-byte frame has no Ethernet header")
    (ethertype,) = struct.unpack_from("!H", data, 12)
    vlan = None
    if ethertype == VLAN_TPID:
        if len(data) < 18:
            raise MalformedFrameError("802.1Q tag cut short")
        (tci, ethertype) = struct.unpack_from("!HH", data, 14)
        vlan = VlanTag(VLAN_TPID, tci >> 13, (tci >> 12) & 1, tci & 0x0FFF)
    return EthernetHeader(data[0:6], data[6:12], ethertype, vlan)


def filter_avtp(frame: RawFrame, header: EthernetHeader, index: int = 0,
                stats: CaptureStats | None = None) -> AvtpPacket | None:
    """AVTP packet for an IEEE 1722 frame of at least 58 octets, else None.

    Short AVTP frames are counted in ``stats.truncated_frames``: padding them
    would invent feature values.
    """
    if header.ethertype != AVTP_ETHERTYPE:
        if stats is not None:
            stats.non_avtp_frames += 1
        return None
    if len(frame.data) < FEATURE_BYTES:
        if stats is not None:
            stats.truncated_frames += 1
        return None
    if stats is not None:
        stats.avtp_frames += 1
    features = np.frombuffer(frame.data, dtype=np.uint8, count=FEATURE_BYTES).copy()
    features.flags.writeable = False
    return AvtpPacket(index, frame.ts_sec, frame.ts_nsec, features, frame.data)


def ingest(path, strict: bool = False) -> tuple[list[AvtpPacket], CaptureStats]:
    """All AVTP packets of a capture, indexed 0.. in record order."""
    stats = CaptureStats()
    packets: list[AvtpPacket] = []
    reader = open_capture(path, strict=strict)
    for frame in reader:
        stats.total_frames += 1
        try:
            header = parse_ethernet(frame)
        except MalformedFrameError:
            stats.truncated_frames += 1
            continue
        pkt = filter_avtp(frame, header, len(packets), stats)
        if pkt is not None:
            packets.append(pkt)
    stats.total_frames += reader.short_records
    stats.truncated_frames += reader.short_records
    stats.truncated_file = reader.truncated
    return packets, stats


def feature_matrix(packets: list[AvtpPacket]) -> np.ndarray:
    """``[N, 58]`` uint8 matrix of packet feature prefixes."""
    if not packets:
        return np.zeros((0, FEATURE_BYTES), dtype=np.uint8)
    return np.stack([p.features for p in packets])


def write_pcap(frames, path, snaplen: int = 65535) -> None:
    """Write frames as a little-endian microsecond pcap (linktype Ethernet).

    ``frames`` holds :class:`RawFrame` objects or ``(ts_sec, ts_nsec, bytes)``
    tuples; nanoseconds are truncated to microseconds.
    """
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        for fr in frames:
            if isinstance(fr, RawFrame):
                sec, nsec, data = fr.ts_sec, fr.ts_nsec, fr.data
            else:
                sec, nsec, data = fr
            fh.write(struct.pack("<IIII", sec, nsec // 1000, len(data), len(data)))
            fh.write(data)
