"""Log-spectral distance and spectral SNR."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioBuffer
from .dsp import LOG_FLOOR, hann_window, rfft

LSD_FRAME = 2048
LSD_HOP = 1024
SNR_CAP_DB = 200.0


def _samples(x):
    return x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)


def _check_pair(x, y):
    a, b = _samples(x), _samples(y)
    if isinstance(x, AudioBuffer) and isinstance(y, AudioBuffer) and x.sample_rate != y.sample_rate:
        raise ValueError("sample rates differ")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty signal")
    return a, b


def analysis_frames(x, frame_len: int = LSD_FRAME, hop: int = LSD_HOP) -> np.ndarray:
    """Hann-windowed spectra of non-centred frames at multiples of ``hop``.

    Only whole frames are used; a signal shorter than one frame is
    zero-padded to a single frame.
    """
    if x.size < frame_len:
        x = np.pad(x, (0, frame_len - x.size))
    count = (x.size - frame_len) // hop + 1
    idx = np.arange(count)[:, None] * hop + np.arange(frame_len)
    return rfft(x[idx] * hann_window(frame_len))


def lsd_frames(x, x_hat, floor: float = LOG_FLOOR) -> np.ndarray:
    """Per-frame RMS difference of base-10 log-power spectra."""
    a, b = _check_pair(x, x_hat)
    pa = np.log10(np.maximum(np.abs(analysis_frames(a)) ** 2, floor))
    pb = np.log10(np.maximum(np.abs(analysis_frames(b)) ** 2, floor))
    return np.sqrt(np.mean((pa - pb) ** 2, axis=-1))


def lsd(x, x_hat, floor: float = LOG_FLOOR) -> float:
    return float(lsd_frames(x, x_hat, floor).mean())


def snr_db(ref, test, cap: float = SNR_CAP_DB) -> float:
    """10 log10(sum |ref|^2 / sum |ref - test|^2), capped for exact matches."""
    ref = np.asarray(ref)
    err = np.sum(np.abs(ref - np.asarray(test)) ** 2)
    sig = np.sum(np.abs(ref) ** 2)
    if err == 0:
        return cap
    if sig == 0:
        return -cap
    return float(min(cap, 10 * np.log10(sig / err)))


def spectral_snr(ref, test, cap: float = SNR_CAP_DB) -> float:
    a, b = _check_pair(ref, test)
    return snr_db(analysis_frames(a), analysis_frames(b), cap)


@dataclass
class EvalReport:
    ids: list = field(default_factory=list)
    lsd: list = field(default_factory=list)
    snr: list = field(default_factory=list)

    def add(self, ident, reference, test):
        self.ids.append(str(ident))
        self.lsd.append(lsd(reference, test))
        self.snr.append(spectral_snr(reference, test))

    @property
    def mean_lsd(self) -> float:
        return float(np.mean(self.lsd)) if self.lsd else float("nan")

    @property
    def mean_snr(self) -> float:
        return float(np.mean(self.snr)) if self.snr else float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["utterance", "lsd", "spectral_snr_db"])
            for row in zip(self.ids, self.lsd, self.snr):
                w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.3f}"])
            w.writerow(["mean", f"{self.mean_lsd:.6f}", f"{self.mean_snr:.3f}"])
