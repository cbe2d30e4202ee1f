import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atsunet.audio_io import AudioBuffer, WavError, frame_stream, read_wav, to_pcm16, write_wav


def _wav_bytes(ints, channels=1, rate=16000, fmt=1, bits=16, extra_chunks=()):
    pcm = np.asarray(ints, dtype="<i2").tobytes()
    body = struct.pack("<4sIHHIIHH", b"fmt ", 16, fmt, channels, rate, rate * 2 * channels, 2 * channels, bits)
    for cid, payload in extra_chunks:
        body += struct.pack("<4sI", cid, len(payload)) + payload + (b"\0" if len(payload) % 2 else b"")
    body += struct.pack("<4sI", b"data", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


def test_read_scaling(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes([0, 16384, -32768]))
    buf = read_wav(p)
    assert buf.samples.tolist() == [0.0, 0.5, -1.0]
    assert buf.sample_rate == 16000


def test_one_second_file(tmp_path):
    p = tmp_path / "a.wav"
    write_wav(p, AudioBuffer(np.zeros(16000)))
    buf = read_wav(p)
    assert len(buf) == 16000 and buf.sample_rate == 16000


def test_junk_and_list_chunks_are_skipped(tmp_path):
    ints = [1, -2, 300, -32768, 32767]
    plain, junky = tmp_path / "plain.wav", tmp_path / "junk.wav"
    plain.write_bytes(_wav_bytes(ints))
    junky.write_bytes(_wav_bytes(ints, extra_chunks=[(b"JUNK", b"\0" * 27), (b"LIST", b"INFOabcd")]))
    np.testing.assert_array_equal(read_wav(plain).samples, read_wav(junky).samples)


def test_stereo_takes_channel_zero(tmp_path):
    p = tmp_path / "s.wav"
    p.write_bytes(_wav_bytes([100, -5, 200, -6], channels=2))
    with pytest.warns(UserWarning, match="channel 0"):
        buf = read_wav(p)
    np.testing.assert_array_equal(buf.samples * 32768, [100, 200])


@pytest.mark.parametrize(
    "blob, msg",
    [
        (b"RIFX0000WAVE", "RIFF"),
        (_wav_bytes([1, 2], fmt=3), "unsupported codec"),
        (_wav_bytes([], rate=16000), "empty"),
        (_wav_bytes([1, 2], rate=44100), "sample rate"),
    ],
)
def test_read_errors(tmp_path, blob, msg):
    p = tmp_path / "bad.wav"
    p.write_bytes(blob)
    with pytest.raises(WavError, match=msg):
        read_wav(p)


def test_write_saturates_and_rounds():
    assert to_pcm16([0.0]).tolist() == [0]
    assert to_pcm16([1.5, -2.0]).tolist() == [32767, -32768]
    assert to_pcm16([0.5 / 32768 * 0.9]).tolist() == [0]


def test_write_rejects_nonfinite():
    with pytest.raises(ValueError):
        AudioBuffer([0.0, np.nan])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 400), elements=st.floats(-1, 1 - 2**-15)))
def test_wav_round_trip_bound(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("rt") / "x.wav"
    write_wav(p, AudioBuffer(x))
    back = read_wav(p).samples
    assert np.max(np.abs(back - x)) <= 1 / 32768


def test_frame_offsets_4096():
    x = np.arange(4096, dtype=float) + 1
    frames = list(frame_stream(AudioBuffer(x)))
    assert len(frames) == 4
    for k, f in enumerate(frames):
        start = 1024 * k
        valid = min(2048, 4096 - start)
        np.testing.assert_array_equal(f[:valid], x[start : start + valid])
        assert np.all(f[valid:] == 0)


def test_frame_counts():
    assert len(list(frame_stream(AudioBuffer(np.ones(2048))))) == 2
    frames = list(frame_stream(AudioBuffer(np.ones(2048))))
    assert np.all(frames[1][1024:] == 0)
    offsets = list(range(0, 16000, 1024))
    assert len(list(frame_stream(AudioBuffer(np.ones(16000))))) == len(offsets) == 16


def test_overlap_coverage():
    n = 10000
    x = np.arange(1, n + 1, dtype=float)
    counts = np.zeros(n + 1, dtype=int)
    for f in frame_stream(AudioBuffer(x)):
        idx = f[f > 0].astype(int)
        counts[idx] += 1
    counts = counts[1:]
    assert np.all(counts[:1024] == 1)
    assert np.all(counts[1024:] == 2)


def test_frame_errors():
    with pytest.raises(ValueError):
        list(frame_stream(AudioBuffer(np.ones(10)), frame_len=0))
    with pytest.raises(ValueError):
        list(frame_stream(AudioBuffer(np.ones(10)), frame_len=2048, hop=512))
