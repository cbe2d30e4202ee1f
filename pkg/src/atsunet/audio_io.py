"""16-bit PCM WAV reading/writing and half-overlap framing."""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
FRAME_LEN = 2048
HOP = 1024

_PCM = 1
_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Raised for malformed or unsupported WAV files."""


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, body
        # chunks are word aligned
        pos += 8 + size + (size & 1)


def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> AudioBuffer:
    """Read a PCM 16-bit WAV file into an AudioBuffer.

    The RIFF chunk list is walked, so LIST/JUNK/fact chunks anywhere before
    or after ``data`` are skipped. Multi-channel files keep channel 0 only.
    Pass ``expected_rate=None`` to accept any sample rate.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _EXTENSIBLE and len(body) >= 26:
                # sub-format GUID starts with the real format code
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            pcm = body
            break
    if fmt is None:
        raise WavError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise WavError(f"{path}: missing data chunk")

    code, channels, rate, _, block_align, bits = fmt
    if code != _PCM or bits != 16:
        raise WavError(f"{path}: unsupported codec (format {code}, {bits} bit); need PCM 16-bit")
    if channels < 1 or block_align != 2 * channels:
        raise WavError(f"{path}: inconsistent block alignment")
    n = len(pcm) // block_align
    if n == 0:
        raise WavError(f"{path}: empty data chunk")
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")

    ints = np.frombuffer(pcm[: n * block_align], dtype="<i2").reshape(n, channels)
    if channels > 1:
        warnings.warn(f"{path}: {channels} channels, using channel 0", stacklevel=2)
    return AudioBuffer(ints[:, 0].astype(np.float64) / 32768.0, rate)


def to_pcm16(samples) -> np.ndarray:
    """Scale to int16 with round-to-nearest and saturation."""
    x = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, buf: AudioBuffer) -> None:
    pcm = to_pcm16(buf.samples).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, _PCM, 1, buf.sample_rate, 2 * buf.sample_rate, 2, 16,
        b"data", len(pcm),
    )
    Path(path).write_bytes(header + pcm)


def n_frames(n_samples: int, hop: int = HOP) -> int:
    return max(1, math.ceil(n_samples / hop))


def frame_stream(buf, frame_len: int = FRAME_LEN, hop: int = HOP):
    """Yield consecutive half-overlapping frames, zero-padding the tail.

    Frames start at multiples of ``hop``; there are ``ceil(len / hop)`` of them.
    """
    if frame_len <= 0:
        raise ValueError("frame_len must be positive")
    if frame_len % 2 or hop != frame_len // 2:
        raise ValueError("frame_len must be even with hop = frame_len / 2")
    x = buf.samples if isinstance(buf, AudioBuffer) else np.asarray(buf, dtype=np.float64)
    count = n_frames(x.size, hop)
    padded = np.zeros((count + 1) * hop)
    padded[: x.size] = x
    for k in range(count):
        yield padded[k * hop : k * hop + frame_len].copy()


def frames_array(buf, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    return np.stack(list(frame_stream(buf, frame_len, hop)))
