"""Windows, radix-2 FFT, centered STFT/ISTFT, log-power features, mel
filterbank and Hann overlap-add resynthesis."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio_io import AudioBuffer

FFT_SIZE = 512
STFT_HOP = 256
LOG_FLOOR = 1e-10


def hann_window(n: int, periodic: bool = True) -> np.ndarray:
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    if periodic and n % 2 == 0:
        # build the second half as the complement of the first so that
        # half-overlapped copies sum to exactly 1
        h = n // 2
        first = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(h) / n)
        return np.concatenate((first, 1.0 - first))
    denom = n if periodic else n - 1
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / denom)


def blackman_window(n: int, periodic: bool = True) -> np.ndarray:
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    denom = n if periodic else n - 1
    phase = 2.0 * np.pi * np.arange(n) / denom
    return 0.42 - 0.5 * np.cos(phase) + 0.08 * np.cos(2.0 * phase)


_WINDOWS = {"hann": hann_window, "blackman": blackman_window}


def get_window(kind: str, n: int) -> np.ndarray:
    try:
        return _WINDOWS[kind](n, periodic=True)
    except KeyError:
        raise ValueError(f"unknown window {kind!r}") from None


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


_bitrev_cache: dict[int, np.ndarray] = {}
_twiddle_cache: dict[int, list[np.ndarray]] = {}


def _plan(n: int):
    if n not in _bitrev_cache:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.intp)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _bitrev_cache[n] = rev
        tw = []
        m = 2
        while m <= n:
            tw.append(np.exp(-2j * np.pi * np.arange(m // 2) / m))
            m *= 2
        _twiddle_cache[n] = tw
    return _bitrev_cache[n], _twiddle_cache[n]


def fft(x, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Leading axes are treated as a batch. The inverse transform carries the
    1/N factor; the forward transform is unscaled.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    if inverse:
        return np.conj(fft(np.conj(x))) / n
    rev, twiddles = _plan(n)
    lead = x.shape[:-1]
    y = x[..., rev]
    for tw in twiddles:
        half = tw.size
        blocks = y.reshape(*lead, n // (2 * half), 2, half)
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * tw
        y = np.stack((even + odd, even - odd), axis=-2).reshape(*lead, n)
    return y


def rfft(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return fft(x)[..., : x.shape[-1] // 2 + 1]


def irfft(spec, n: int) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.shape[-1] != n // 2 + 1:
        raise ValueError(f"expected {n // 2 + 1} bins for n={n}, got {spec.shape[-1]}")
    full = np.concatenate((spec, np.conj(spec[..., -2:0:-1])), axis=-1)
    return fft(full, inverse=True).real


@dataclass
class Spectrogram:
    bins: np.ndarray  # (F, T) complex
    fft_size: int = FFT_SIZE
    hop: int = STFT_HOP
    window: str = "hann"

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.shape[-2] != self.fft_size // 2 + 1:
            raise ValueError(
                f"{self.bins.shape[-2]} bins inconsistent with fft_size {self.fft_size}"
            )

    @property
    def shape(self):
        return self.bins.shape

    @property
    def frame_len(self) -> int:
        return (self.bins.shape[-1] - 1) * self.hop


def stft_bins(frames, fft_size: int = FFT_SIZE, hop: int = STFT_HOP, window: str = "hann"):
    """Centered STFT of one frame or a batch of frames (last axis = time).

    Returns complex bins of shape ``(..., fft_size // 2 + 1, frame_len // hop + 1)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    length = frames.shape[-1]
    if not _is_pow2(fft_size) or hop <= 0 or length % hop:
        raise ValueError(f"invalid STFT sizes: frame {length}, fft {fft_size}, hop {hop}")
    pad = fft_size // 2
    if length <= pad:
        raise ValueError("frame shorter than half the FFT size")
    widths = [(0, 0)] * (frames.ndim - 1) + [(pad, pad)]
    padded = np.pad(frames, widths, mode="reflect")
    n_cols = length // hop + 1
    starts = np.arange(n_cols) * hop
    segments = padded[..., starts[:, None] + np.arange(fft_size)]
    cols = rfft(segments * get_window(window, fft_size))
    return np.swapaxes(cols, -1, -2)


def istft_bins(bins, fft_size: int = FFT_SIZE, hop: int = STFT_HOP, window: str = "hann"):
    """Inverse of :func:`stft_bins` by windowed overlap-add with squared-window
    normalisation, trimming the centering pad."""
    bins = np.asarray(bins, dtype=np.complex128)
    if bins.shape[-2] != fft_size // 2 + 1:
        raise ValueError(f"expected {fft_size // 2 + 1} bins, got {bins.shape[-2]}")
    n_cols = bins.shape[-1]
    win = get_window(window, fft_size)
    segs = irfft(np.swapaxes(bins, -1, -2), fft_size) * win
    total = (n_cols - 1) * hop + fft_size
    lead = bins.shape[:-2]
    out = np.zeros(lead + (total,))
    norm = np.zeros(total)
    for t in range(n_cols):
        out[..., t * hop : t * hop + fft_size] += segs[..., t, :]
        norm[t * hop : t * hop + fft_size] += win**2
    pad = fft_size // 2
    length = (n_cols - 1) * hop
    norm = norm[pad : pad + length]
    return out[..., pad : pad + length] / np.where(norm > 1e-12, norm, 1.0)


def stft(frame, fft_size: int = FFT_SIZE, hop: int = STFT_HOP, window: str = "hann") -> Spectrogram:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ValueError("stft expects a single 1-D frame")
    return Spectrogram(stft_bins(frame, fft_size, hop, window), fft_size, hop, window)


def istft(spec: Spectrogram) -> np.ndarray:
    return istft_bins(spec.bins, spec.fft_size, spec.hop, spec.window)


@dataclass
class LogPowerFeatures:
    values: np.ndarray  # (F, T)
    norm_mean: float | None = None
    norm_std: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.norm_std is not None and not self.norm_std > 0:
            raise ValueError("norm_std must be positive")

    @property
    def normalized(self) -> bool:
        return self.norm_mean is not None


def log_power_values(bins, floor: float = LOG_FLOOR) -> np.ndarray:
    if floor <= 0:
        raise ValueError("floor must be positive")
    power = np.abs(bins) ** 2
    return np.log(np.maximum(power, floor))


def log_power(spec: Spectrogram, floor: float = LOG_FLOOR) -> LogPowerFeatures:
    return LogPowerFeatures(log_power_values(spec.bins, floor))


def normalize(f: LogPowerFeatures, mean: float, std: float) -> LogPowerFeatures:
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return LogPowerFeatures((f.values - mean) / std, float(mean), float(std))


def denormalize(f: LogPowerFeatures, mean: float | None = None, std: float | None = None):
    mean = f.norm_mean if mean is None else mean
    std = f.norm_std if std is None else std
    if mean is None or std is None:
        raise ValueError("no normalisation statistics available")
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return replace(f, values=f.values * std + mean, norm_mean=None, norm_std=None)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = 40,
    fft_size: int = FFT_SIZE,
    sr: int = 16000,
    fmin: float = 0.0,
    fmax: float = 8000.0,
) -> np.ndarray:
    """Triangular mel filters, rows area-normalised (Slaney style).

    Centres are equally spaced on the HTK mel scale between ``fmin`` and ``fmax``.
    """
    if n_mels < 1 or not 0 <= fmin < fmax <= sr / 2:
        raise ValueError(f"invalid mel range fmin={fmin}, fmax={fmax}, sr={sr}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sr / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    return fb * (2.0 / (hi - lo))


def overlap_add(frames, hop: int = 1024) -> AudioBuffer:
    """Window each frame with a periodic Hann and sum at multiples of ``hop``."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise ValueError("no frames")
    length = frames[0].size
    if any(f.size != length for f in frames):
        raise ValueError("frames differ in length")
    if hop * 2 != length:
        raise ValueError("hop must be half the frame length")
    win = hann_window(length)
    out = np.zeros((len(frames) - 1) * hop + length)
    for k, f in enumerate(frames):
        out[k * hop : k * hop + length] += f * win
    return AudioBuffer(out)
