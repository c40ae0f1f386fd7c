"""Time-tagged detection records and their file formats.

A stream holds the four detector channels of the link as column arrays
(time in integer picoseconds, channel code, trial and mode tags) plus a
header tying it to the generating configuration and seed.

Binary layout (little endian): a 64-byte header

    magic 8s = b"AFCLEVTS", version u16, channel_count u16, reserved u32,
    seed u64, duration f64, record_count u64, config digest 32s (raw sha256)

followed by ``record_count`` packed records ``<QBIH``:
u64 time_ps, u8 channel, u32 trial, u16 mode (15 bytes each).
Times must be non-decreasing; readers reject anything else.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "CH_HERALD_PLUS",
    "CH_HERALD_MINUS",
    "CH_READOUT_1",
    "CH_READOUT_2",
    "CHANNEL_NAMES",
    "EventRecord",
    "EventStream",
    "StreamFormatError",
    "write_stream",
    "read_stream",
    "write_csv",
]

CH_HERALD_PLUS = 0
CH_HERALD_MINUS = 1
CH_READOUT_1 = 2
CH_READOUT_2 = 3

CHANNEL_NAMES = {
    CH_HERALD_PLUS: "herald_plus",
    CH_HERALD_MINUS: "herald_minus",
    CH_READOUT_1: "readout_1",
    CH_READOUT_2: "readout_2",
}

_MAGIC = b"AFCLEVTS"
_VERSION = 1
_HEADER = struct.Struct("<8sHHIQdQ32s")
_RECORD = struct.Struct("<QBIH")


class StreamFormatError(ValueError):
    """Raised for malformed, truncated or inconsistent stream files."""


class EventRecord(NamedTuple):
    time_ps: int
    channel: int
    trial: int
    mode: int


@dataclass
class EventStream:
    """Ordered detection events plus provenance header."""

    seed: int
    duration: float
    config_digest: str
    time_ps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint64))
    channel: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))
    trial: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint32))
    mode: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint16))
    version: int = _VERSION

    def __len__(self) -> int:
        return int(self.time_ps.size)

    def records(self) -> Iterator[EventRecord]:
        for i in range(len(self)):
            yield EventRecord(
                int(self.time_ps[i]),
                int(self.channel[i]),
                int(self.trial[i]),
                int(self.mode[i]),
            )

    def channel_times(self, channel: int) -> np.ndarray:
        return self.time_ps[self.channel == channel]

    def check_monotonic(self) -> None:
        if len(self) > 1 and np.any(np.diff(self.time_ps.astype(np.int64)) < 0):
            raise StreamFormatError("non-monotonic timestamps")

    def with_tags(self, trial: np.ndarray, mode: np.ndarray) -> "EventStream":
        return EventStream(
            seed=self.seed,
            duration=self.duration,
            config_digest=self.config_digest,
            time_ps=self.time_ps,
            channel=self.channel,
            trial=trial.astype(np.uint32),
            mode=mode.astype(np.uint16),
            version=self.version,
        )


def write_stream(stream: EventStream, path: str | Path) -> None:
    """Write a stream to its binary format (lossless)."""
    stream.check_monotonic()
    n = len(stream)
    digest = bytes.fromhex(stream.config_digest)
    if len(digest) != 32:
        raise StreamFormatError("config digest must be 32 bytes of hex")
    header = _HEADER.pack(
        _MAGIC, stream.version, 4, 0, stream.seed, stream.duration, n, digest
    )
    body = np.zeros(n, dtype=np.dtype([("t", "<u8"), ("c", "u1"), ("r", "<u4"), ("m", "<u2")]))
    body["t"] = stream.time_ps
    body["c"] = stream.channel
    body["r"] = stream.trial
    body["m"] = stream.mode
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_stream(path: str | Path) -> EventStream:
    """Read and validate a binary stream file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise StreamFormatError("unexpected end of stream: header truncated")
    magic, version, channels, _, seed, duration, count, digest = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise StreamFormatError("not an event-stream file (bad magic)")
    if version != _VERSION:
        raise StreamFormatError(f"unsupported stream version {version}")
    if channels != 4:
        raise StreamFormatError(f"unexpected channel count {channels}")
    expected = _HEADER.size + count * _RECORD.size
    if len(raw) < expected:
        raise StreamFormatError("unexpected end of stream: records truncated")
    body = np.frombuffer(
        raw,
        dtype=np.dtype([("t", "<u8"), ("c", "u1"), ("r", "<u4"), ("m", "<u2")]),
        count=count,
        offset=_HEADER.size,
    )
    stream = EventStream(
        seed=seed,
        duration=duration,
        config_digest=digest.hex(),
        time_ps=body["t"].copy(),
        channel=body["c"].copy(),
        trial=body["r"].copy(),
        mode=body["m"].copy(),
        version=version,
    )
    stream.check_monotonic()
    return stream


def write_csv(stream: EventStream, path: str | Path) -> None:
    """Export a stream as CSV with header time_ps,channel,trial,mode."""
    with open(path, "w") as fh:
        fh.write("time_ps,channel,trial,mode\n")
        for t, c, r, m in zip(stream.time_ps, stream.channel, stream.trial, stream.mode):
            fh.write(f"{int(t)},{int(c)},{int(r)},{int(m)}\n")
