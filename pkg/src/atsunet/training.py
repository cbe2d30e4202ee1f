"""Loss, Adam, synthetic band-limited data, noise augmentation and the
training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioBuffer, SAMPLE_RATE, frames_array
from .dsp import LOG_FLOOR, log_power_values, mel_filterbank, stft_bins
from .model_zoo import Model, attach_dc

log = logging.getLogger(__name__)

SNR_MEAN_DB = 18.0
SNR_STD_DB = 3.5


# loss


def loss(output, target, mel_fb=None, floor: float = LOG_FLOOR):
    """L1 between log-power grids plus L1 between their log-mel grids.

    ``output`` and ``target`` are natural-log power, shape ``(..., 257, T)``.
    Both terms are means over elements. Returns ``(value, d value / d output)``.
    """
    y = np.asarray(output, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if y.shape != t.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {t.shape}")
    if mel_fb is None:
        mel_fb = mel_filterbank(fft_size=2 * (y.shape[-2] - 1))
    diff = y - t
    l1 = np.abs(diff).mean()
    grad = np.sign(diff) / diff.size

    p_y = np.exp(y)
    mel_y = mel_fb @ p_y
    mel_t = mel_fb @ np.exp(t)
    log_y = np.log(np.maximum(mel_y, floor))
    log_t = np.log(np.maximum(mel_t, floor))
    mdiff = log_y - log_t
    mel_term = np.abs(mdiff).mean()
    g_log = np.sign(mdiff) / mdiff.size
    g_mel = np.where(mel_y > floor, g_log / np.maximum(mel_y, floor), 0.0)
    grad = grad + p_y * (mel_fb.T @ g_mel)
    return l1 + mel_term, grad


# optimiser


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update of ``params`` (arrays, modified in place)."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    c1 = 1 - state.beta1**state.step
    c2 = 1 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# data


def lowpass_fir(cutoff: float, sr: int = SAMPLE_RATE, taps: int = 255) -> np.ndarray:
    """Hamming-windowed sinc low-pass with unit DC gain."""
    n = np.arange(taps) - (taps - 1) / 2
    fc = cutoff / sr
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(taps)
    return h / h.sum()


def simulate_bcm(clean: AudioBuffer, cutoff: float = 2000.0) -> AudioBuffer:
    """Band-limit ``clean`` like a bone-conduction pickup.

    Linear-phase FIR; the group delay is removed so the output stays sample
    aligned with the input.
    """
    if clean.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {clean.sample_rate}")
    h = lowpass_fir(cutoff, clean.sample_rate)
    delay = (h.size - 1) // 2
    y = np.convolve(clean.samples, h)[delay : delay + len(clean)]
    return AudioBuffer(y, clean.sample_rate)


def rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def sample_snr(rng, size=None, mean: float = SNR_MEAN_DB, std: float = SNR_STD_DB):
    return rng.normal(mean, std, size)


def augment_noise(speech: AudioBuffer, noise: AudioBuffer, rng, snr_db: float | None = None) -> AudioBuffer:
    """Add ``noise`` at an SNR drawn from N(18, 3.5) dB (or the given one).

    Longer noise is cropped at a random offset, shorter noise is tiled.
    """
    s = speech.samples
    level = rms(s)
    if level == 0:
        raise ValueError("speech is silent; SNR undefined")
    if snr_db is None:
        snr_db = sample_snr(rng)
    nz = noise.samples
    if nz.size > s.size:
        start = rng.integers(0, nz.size - s.size + 1)
        nz = nz[start : start + s.size]
    else:
        nz = np.resize(nz, s.size)
    n_level = rms(nz)
    if n_level == 0:
        raise ValueError("noise is silent")
    scaled = nz * (level / n_level) / 10 ** (snr_db / 20)
    return AudioBuffer(s + scaled, speech.sample_rate)


def synth_utterance(rng, duration: float = 2.0, sr: int = SAMPLE_RATE) -> AudioBuffer:
    """Speech-like test signal: glided harmonic syllables shaped by random
    formant envelopes, separated by short pauses."""
    n = int(round(duration * sr))
    out = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.1) * sr)
    while pos < n:
        seg = int(rng.uniform(0.12, 0.35) * sr)
        seg = min(seg, n - pos)
        if seg < 256:
            break
        f0 = rng.uniform(90, 220) * np.geomspace(1.0, rng.uniform(0.8, 1.25), seg)
        f0 *= 1 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 7) * np.arange(seg) / sr)
        phase = 2 * np.pi * np.cumsum(f0) / sr
        formants = np.array([rng.uniform(300, 900), rng.uniform(900, 2400), rng.uniform(2300, 3400), rng.uniform(3500, 4800)])
        widths = np.array([80, 120, 200, 300]) * rng.uniform(0.8, 1.5, 4)
        gains = np.array([1.0, 0.6, 0.25, 0.12]) * rng.uniform(0.6, 1.2, 4)
        seg_out = np.zeros(seg)
        for k in range(1, int(7800 / f0.max()) + 1):
            fk = k * f0
            env = (gains / (1 + ((fk[:, None] - formants) / widths) ** 2)).sum(axis=1)
            env += 0.02 * (1000.0 / (fk + 1000.0))
            seg_out += env * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        shape = np.hanning(seg) ** 0.5 * (1 + 0.3 * np.sin(2 * np.pi * rng.uniform(2, 5) * np.arange(seg) / sr))
        out[pos : pos + seg] += seg_out * shape * rng.uniform(0.5, 1.0)
        pos += seg + int(rng.uniform(0.03, 0.12) * sr)
    out /= max(np.abs(out).max(), 1e-9)
    out = 0.5 * out + 1e-4 * rng.standard_normal(n)
    return AudioBuffer(out, sr)


def colored_noise(rng, duration: float = 2.0, sr: int = SAMPLE_RATE, exponent: float | None = None) -> AudioBuffer:
    """Gaussian noise with a 1/f**exponent power spectrum, peak-normalised to 0.5."""
    n = int(round(duration * sr))
    if exponent is None:
        exponent = rng.uniform(0.5, 1.5)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / sr)
    spec[1:] /= f[1:] ** (exponent / 2)
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    return AudioBuffer(0.5 * x / np.abs(x).max(), sr)


@dataclass
class TrainExample:
    input_features: np.ndarray  # (256, T) normalised log power, DC removed
    input_dc: np.ndarray  # (T,) normalised DC row
    target_features: np.ndarray  # (257, T) natural-log power


@dataclass
class FrameDataset:
    """Stacked training frames. ``inputs`` is ``(N, 1, 256, T)``."""

    inputs: np.ndarray
    input_dc: np.ndarray
    targets: np.ndarray
    norm_mean: float
    norm_std: float

    def __len__(self):
        return self.inputs.shape[0]

    def example(self, i) -> TrainExample:
        return TrainExample(self.inputs[i, 0], self.input_dc[i], self.targets[i])

    def subset(self, idx) -> "FrameDataset":
        return FrameDataset(self.inputs[idx], self.input_dc[idx], self.targets[idx], self.norm_mean, self.norm_std)


def utterance_logpower(buf: AudioBuffer) -> np.ndarray:
    """Log-power grids ``(n_frames, 257, 9)`` of every pipeline frame."""
    return log_power_values(stft_bins(frames_array(buf)))


def build_dataset(pairs, norm=None) -> FrameDataset:
    """Frame ``(band_limited, clean)`` audio pairs into a training set.

    Normalisation statistics are a global mean/std over every input and
    target log-power value unless ``norm=(mean, std)`` is given.
    """
    if not pairs:
        raise ValueError("empty dataset")
    ins, tgts = [], []
    for noisy, clean in pairs:
        if len(noisy) != len(clean):
            raise ValueError("paired audio differs in length")
        ins.append(utterance_logpower(noisy))
        tgts.append(utterance_logpower(clean))
    ins = np.concatenate(ins)
    tgts = np.concatenate(tgts)
    if norm is None:
        both = np.concatenate((ins.ravel(), tgts.ravel()))
        norm = (float(both.mean()), float(both.std()))
    mean, std = norm
    z = (ins - mean) / std
    return FrameDataset(z[:, None, 1:, :], z[:, 0, :], tgts, mean, std)


def batch_loss(model: Model, inputs, input_dc, targets, mel_fb, backward: bool = True) -> float:
    """Forward a batch, evaluate the loss on the full 257-row grid and, if
    asked, accumulate parameter gradients."""
    out = model.forward(inputs, keep_tape=backward)
    full = attach_dc(input_dc, out[:, 0]) * model.norm_std + model.norm_mean
    value, grad = loss(full, targets, mel_fb)
    if backward:
        model.backward(grad[:, None, 1:, :] * model.norm_std)
    return value


def train(
    model: Model,
    dataset: FrameDataset,
    epochs: int = 100,
    batch: int = 64,
    seed: int = 0,
    lr: float = 1e-4,
    callback=None,
):
    """Adam training; returns ``(trained_model, per-epoch mean loss)``.

    The model's normalisation statistics are taken from ``dataset``. Passing
    an already-trained model fine-tunes it.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    work = model.astype(np.float64)
    work.norm_mean, work.norm_std = dataset.norm_mean, dataset.norm_std
    mel_fb = mel_filterbank()
    state = AdamState(lr=lr)
    params = [a for p in work.convs.values() for a in (p.weight, p.bias)]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            work.zero_grad()
            value = batch_loss(work, dataset.inputs[idx], dataset.input_dc[idx], dataset.targets[idx], mel_fb)
            grads = [g for p in work.convs.values() for g in (p.grad_weight, p.grad_bias)]
            adam_step(params, grads, state)
            total += value * idx.size
        history.append(total / len(dataset))
        log.debug("epoch %d loss %.4f", epoch + 1, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return work.astype(np.float32), history


def evaluate_loss(model: Model, dataset: FrameDataset, batch: int = 256) -> float:
    mel_fb = mel_filterbank()
    m = model.astype(np.float64)
    m.norm_mean, m.norm_std = dataset.norm_mean, dataset.norm_std
    total = 0.0
    for start in range(0, len(dataset), batch):
        sl = slice(start, start + batch)
        total += batch_loss(m, dataset.inputs[sl], dataset.input_dc[sl], dataset.targets[sl], mel_fb, False) * dataset.inputs[sl].shape[0]
    return total / len(dataset)
