"""Event-stream data model and file formats."""

import numpy as np
import pytest

from afclink.events import (
    CH_HERALD_PLUS,
    CH_READOUT_1,
    EventStream,
    StreamFormatError,
    read_stream,
    write_csv,
    write_stream,
)

DIGEST = "ab" * 32


def sample_stream(n=50, seed=3):
    rng = np.random.default_rng(seed)
    times = np.sort(rng.integers(0, 10**12, n).astype(np.uint64))
    return EventStream(
        seed=42,
        duration=1.0,
        config_digest=DIGEST,
        time_ps=times,
        channel=rng.integers(0, 4, n).astype(np.uint8),
        trial=rng.integers(0, 1000, n).astype(np.uint32),
        mode=rng.integers(0, 62, n).astype(np.uint16),
    )


def test_round_trip(tmp_path):
    stream = sample_stream()
    path = tmp_path / "events.bin"
    write_stream(stream, path)
    back = read_stream(path)
    assert back.seed == stream.seed
    assert back.duration == stream.duration
    assert back.config_digest == stream.config_digest
    assert np.array_equal(back.time_ps, stream.time_ps)
    assert np.array_equal(back.channel, stream.channel)
    assert np.array_equal(back.trial, stream.trial)
    assert np.array_equal(back.mode, stream.mode)


def test_truncated_file_rejected(tmp_path):
    stream = sample_stream()
    path = tmp_path / "events.bin"
    write_stream(stream, path)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(StreamFormatError, match="unexpected end of stream"):
        read_stream(path)
    path.write_bytes(data[:30])
    with pytest.raises(StreamFormatError, match="unexpected end of stream"):
        read_stream(path)


def test_bad_magic_rejected(tmp_path):
    stream = sample_stream()
    path = tmp_path / "events.bin"
    write_stream(stream, path)
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(StreamFormatError, match="magic"):
        read_stream(path)


def test_version_mismatch_rejected(tmp_path):
    stream = sample_stream()
    path = tmp_path / "events.bin"
    write_stream(stream, path)
    data = bytearray(path.read_bytes())
    data[8] = 99  # version field
    path.write_bytes(bytes(data))
    with pytest.raises(StreamFormatError, match="version"):
        read_stream(path)


def test_non_monotonic_rejected_on_write_and_read(tmp_path):
    stream = sample_stream()
    shuffled = EventStream(
        seed=stream.seed,
        duration=stream.duration,
        config_digest=stream.config_digest,
        time_ps=stream.time_ps[::-1].copy(),
        channel=stream.channel,
        trial=stream.trial,
        mode=stream.mode,
    )
    with pytest.raises(StreamFormatError, match="non-monotonic"):
        write_stream(shuffled, tmp_path / "bad.bin")
    # craft a file with swapped record times
    good = tmp_path / "good.bin"
    write_stream(stream, good)
    raw = bytearray(good.read_bytes())
    rec = 15
    header = len(raw) - rec * len(stream)
    first = raw[header : header + rec]
    raw[header : header + rec] = raw[header + rec : header + 2 * rec]
    raw[header + rec : header + 2 * rec] = first
    bad = tmp_path / "swapped.bin"
    bad.write_bytes(bytes(raw))
    if stream.time_ps[0] != stream.time_ps[1]:
        with pytest.raises(StreamFormatError, match="non-monotonic"):
            read_stream(bad)


def test_csv_export(tmp_path):
    stream = sample_stream(n=4)
    path = tmp_path / "events.csv"
    write_csv(stream, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "time_ps,channel,trial,mode"
    assert len(lines) == 5
    cells = lines[1].split(",")
    assert int(cells[0]) == int(stream.time_ps[0])


def test_channel_times_selects_channel():
    stream = sample_stream(n=200, seed=9)
    heralds = stream.channel_times(CH_HERALD_PLUS)
    assert np.all(np.isin(heralds, stream.time_ps[stream.channel == CH_HERALD_PLUS]))
    readout = stream.channel_times(CH_READOUT_1)
    assert heralds.size + readout.size <= len(stream)
