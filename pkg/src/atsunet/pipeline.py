"""Frame-by-frame enhancement engine with per-stage latency accounting."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .audio_io import FRAME_LEN, HOP, SAMPLE_RATE, AudioBuffer, frame_stream, read_wav, write_wav
from .dsp import hann_window, istft_bins, log_power_values, stft_bins
from .model_zoo import Model, attach_dc, split_dc

DEADLINE_MS = 1000.0 * HOP / SAMPLE_RATE  # 64 ms


def _infer_fn(model):
    if isinstance(model, Model):
        return lambda rest: model.forward(rest[None])[0]
    # quantized models expose forward_values
    return model.forward_values


@dataclass
class LatencyReport:
    rows: list = field(default_factory=list)  # (pre_ms, infer_ms, post_ms, total_ms)

    @property
    def totals(self):
        return np.array([r[3] for r in self.rows])

    @property
    def mean_ms(self) -> float:
        return float(self.totals.mean()) if self.rows else 0.0

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.totals, 95)) if self.rows else 0.0

    @property
    def real_time_factor(self) -> float:
        return self.mean_ms / DEADLINE_MS

    def summary(self) -> str:
        return (
            f"frames={len(self.rows)} mean_ms={self.mean_ms:.3f} p95_ms={self.p95_ms:.3f} "
            f"rtf={self.real_time_factor:.4f}"
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "pre_ms", "infer_ms", "post_ms", "total_ms"])
            for k, r in enumerate(self.rows):
                w.writerow([k] + [f"{v:.3f}" for v in r])
            fh.write(f"# {self.summary()}\n")


class StreamState:
    """Per-stream state: model handle, overlap-add tail, pending input and
    latency log. Feed audio with :meth:`push` or whole frames with
    :func:`process_frame`."""

    def __init__(self, model):
        self.model = model
        self.infer = _infer_fn(model)
        self.window = hann_window(FRAME_LEN)
        self.tail = np.zeros(HOP)
        self.pending = np.zeros(0)
        self.latency = LatencyReport()

    def push(self, samples) -> np.ndarray:
        """Append input samples; return every output hop that became ready."""
        self.pending = np.concatenate((self.pending, np.asarray(samples, dtype=np.float64)))
        out = []
        while self.pending.size >= FRAME_LEN:
            out.append(process_frame(self, self.pending[:FRAME_LEN]))
            self.pending = self.pending[HOP:]
        return np.concatenate(out) if out else np.zeros(0)


def process_frame(state: StreamState, frame) -> np.ndarray:
    """Enhance one 2048-sample frame and return the 1024 samples whose
    overlap-add is now complete."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (FRAME_LEN,):
        raise ValueError(f"expected a {FRAME_LEN}-sample frame, got {frame.shape}")
    m = state.model
    t0 = time.perf_counter()
    bins = stft_bins(frame)
    z = (log_power_values(bins) - m.norm_mean) / m.norm_std
    dc, rest = split_dc(z)
    t1 = time.perf_counter()
    out = state.infer(rest)
    t2 = time.perf_counter()
    logp = attach_dc(dc, out) * m.norm_std + m.norm_mean
    mag = np.abs(bins)
    # reuse input phase; bins with no energy have no phase and stay silent
    phasor = np.divide(bins, mag, out=np.zeros_like(bins), where=mag > 0)
    y = istft_bins(np.exp(logp / 2) * phasor) * state.window
    emitted = state.tail + y[:HOP]
    state.tail = y[HOP:].copy()
    t3 = time.perf_counter()
    pre, inf, post = (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3
    state.latency.rows.append((pre, inf, post, pre + inf + post))
    return emitted


def enhance(model, buf: AudioBuffer):
    """Enhance a whole buffer. Output is aligned with and as long as the input."""
    state = StreamState(model)
    outs = [process_frame(state, f) for f in frame_stream(buf)]
    y = np.concatenate(outs)[: len(buf)]
    return AudioBuffer(y, buf.sample_rate), state.latency


def process_file(model, in_path, out_path, quantized: bool = False) -> LatencyReport:
    """Enhance a 16 kHz WAV file. With ``quantized`` a float model is run
    through its integer path (it must already be a QuantizedModel)."""
    from .quantization import QuantizedModel

    if quantized and not isinstance(model, QuantizedModel):
        raise TypeError("quantized=True needs a QuantizedModel")
    buf = read_wav(in_path)
    out, report = enhance(model, buf)
    write_wav(out_path, out)
    return report
