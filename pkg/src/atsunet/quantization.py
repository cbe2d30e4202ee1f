"""Power-of-two 16-bit quantisation and integer-only inference.

A real value ``x`` is stored as ``q = floor(x * 2**e)`` saturated to int16,
with ``e = 15 - ceil(log2(max|x|))`` chosen per tensor. Rescaling between
tensors is then a plain arithmetic shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .dsp import LogPowerFeatures
from .model_zoo import (
    KIND_INT16,
    N_LEVELS,
    Model,
    ModelConfig,
    ModelFileError,
    conv_plan,
    read_container,
    write_container,
)

INT16_MIN, INT16_MAX = -32768, 32767


def exponent_for(max_abs: float) -> int:
    if max_abs <= 0:
        return 0
    return 15 - math.ceil(math.log2(max_abs))


def activation_exponent(peak: float) -> int:
    # a layer that never fires carries no range information; give it the
    # unit-range exponent so concatenation alignment does not throw away bits
    return exponent_for(peak) if peak > 0 else 15


def quantize_array(x, exponent: int | None = None):
    """Return ``(int16 array, exponent)``. ``x ~= q / 2**exponent``.

    An input whose maximum is an exact power of two lands on +32768 and is
    clamped to 32767.
    """
    x = np.asarray(x, dtype=np.float64)
    if exponent is None:
        exponent = exponent_for(float(np.max(np.abs(x))) if x.size else 0.0)
    q = np.floor(np.ldexp(x, exponent))
    return np.clip(q, INT16_MIN, INT16_MAX).astype(np.int16), int(exponent)


def dequantize(q, exponent: int) -> np.ndarray:
    return np.ldexp(np.asarray(q, dtype=np.float64), -exponent)


def shift(x, s: int):
    """Multiply int64 ``x`` by ``2**-s``: arithmetic right shift (floor) for
    ``s >= 0``, left shift otherwise."""
    x = np.asarray(x, dtype=np.int64)
    if s >= 0:
        return x >> s
    return x << -s


def saturate16(x) -> np.ndarray:
    return np.clip(x, INT16_MIN, INT16_MAX).astype(np.int16)


def qconv(q_x, e_x: int, w_q, e_w: int, b_q, e_b: int, e_out: int, relu: bool):
    """Integer convolution. Products are int32 and sums int64, so the
    accumulator cannot wrap; the requantised result saturates to int16."""
    xb = np.asarray(q_x, dtype=np.int64)
    squeeze = xb.ndim == 3
    if squeeze:
        xb = xb[None]
    n, c, F, T = xb.shape
    c_out, c_in, kf, kt = w_q.shape
    if c != c_in:
        raise ValueError(f"qconv expects {c_in} channels, got {c}")
    cols = nn._im2col(xb, kf, kt)
    acc = np.matmul(np.asarray(w_q, dtype=np.int64).reshape(c_out, -1), cols)
    e_acc = e_x + e_w
    acc += shift(np.asarray(b_q, dtype=np.int64), e_b - e_acc)[:, None]
    if relu:
        acc = np.maximum(acc, 0)
    out = saturate16(shift(acc, e_acc - e_out)).reshape(n, c_out, F, T)
    return out[0] if squeeze else out


@dataclass
class QLayer:
    weight: np.ndarray  # int16 (C_out, C_in, 3, k_t)
    e_w: int
    bias: np.ndarray  # int16 (C_out,)
    e_b: int
    e_out: int


@dataclass
class QuantizedModel:
    config: ModelConfig
    layers: dict  # name -> QLayer, forward order
    e_in: int
    norm_mean: float
    norm_std: float

    def forward_int(self, q_in):
        """Integer forward. ``q_in`` is ``(1, F, T)`` or ``(N, 1, F, T)`` int16
        at exponent ``e_in``; returns int16 output at the head exponent."""
        q = np.asarray(q_in, dtype=np.int16)
        squeeze = q.ndim == 3
        h = (q[None] if squeeze else q).astype(np.int64)
        e_h = self.e_in
        frac = self.config.shift_fraction
        skips = [(h, e_h)]

        def block(h, e_h, prefix):
            for k in (1, 2):
                L = self.layers[f"{prefix}.conv{k}"]
                h = qconv(h, e_h, L.weight, L.e_w, L.bias, L.e_b, L.e_out, relu=True).astype(np.int64)
                e_h = L.e_out
            if self.config.uses_atsm:
                h = nn.atsm(h, frac)
            return h, e_h

        for i in range(1, N_LEVELS + 1):
            h, _ = nn.maxpool_f(h)
            h, e_h = block(h, e_h, f"db{i}")
            skips.append((h, e_h))
        for j in range(1, N_LEVELS + 1):
            s, e_s = skips[N_LEVELS - j]
            e_cat = min(e_h, e_s)
            up = shift(nn.upsample_f(h), e_h - e_cat)
            h = nn.concat_channels(up, shift(s, e_s - e_cat))
            h, e_h = block(h, e_cat, f"ub{j}")
        L = self.layers["head"]
        y = qconv(h, e_h, L.weight, L.e_w, L.bias, L.e_b, L.e_out, relu=False)
        return y[0] if squeeze else y

    @property
    def e_head(self) -> int:
        return self.layers["head"].e_out

    def forward_values(self, rest):
        """Float-in/float-out wrapper around :meth:`forward_int` for a
        normalised 256 x T grid."""
        q_in, _ = quantize_array(rest, self.e_in)
        return dequantize(self.forward_int(q_in[None])[0], self.e_head)


def quantize_model(m: Model, calibration) -> QuantizedModel:
    """Post-training quantisation.

    Weight exponents come from each layer's weights; activation exponents
    from the largest magnitude each layer output reaches over the
    calibration features (normalised 256 x T grids).
    """
    calibration = [c.values if isinstance(c, LogPowerFeatures) else np.asarray(c) for c in calibration]
    if not calibration:
        raise ValueError("calibration set is empty")
    peaks: dict[str, float] = {}

    def observe(name, a):
        peaks[name] = max(peaks.get(name, 0.0), float(np.max(np.abs(a))))

    fm = m.astype(np.float64)
    batch = np.stack(calibration)[:, None].astype(np.float64)
    for start in range(0, batch.shape[0], 256):
        fm.forward(batch[start : start + 256], observer=observe)

    layers = {}
    for name, *_ in conv_plan(m.config):
        p = m.convs[name]
        w_q, e_w = quantize_array(p.weight)
        b_q, e_b = quantize_array(p.bias)
        layers[name] = QLayer(w_q, e_w, b_q, e_b, activation_exponent(peaks[name]))
    return QuantizedModel(m.config, layers, activation_exponent(peaks["input"]), m.norm_mean, m.norm_std)


def forward_quantized(qm: QuantizedModel, f: LogPowerFeatures) -> LogPowerFeatures:
    v = f.values
    if v.shape != (qm.config.n_freq, qm.config.n_frames):
        raise ValueError(f"expected features {(qm.config.n_freq, qm.config.n_frames)}, got {v.shape}")
    return LogPowerFeatures(qm.forward_values(v), f.norm_mean, f.norm_std)


def save_quantized(qm: QuantizedModel, path) -> None:
    names = list(qm.layers)
    arrays, shapes, exps = [], [], {}
    for n in names:
        L = qm.layers[n]
        arrays += [L.weight, L.bias]
        shapes += [list(L.weight.shape), list(L.bias.shape)]
        exps[n] = [L.e_w, L.e_b, L.e_out]
    header = {
        "config": qm.config.to_dict(),
        "norm_mean": float(qm.norm_mean),
        "norm_std": float(qm.norm_std),
        "layers": names,
        "shapes": shapes,
        "exponents": exps,
        "e_in": qm.e_in,
    }
    write_container(path, KIND_INT16, header, arrays)


def load_quantized(path) -> QuantizedModel:
    header, arrays = read_container(path, KIND_INT16)
    config = ModelConfig.from_dict(header["config"])
    layers = {}
    for k, name in enumerate(header["layers"]):
        e_w, e_b, e_out = header["exponents"][name]
        layers[name] = QLayer(arrays[2 * k].astype(np.int16), e_w, arrays[2 * k + 1].astype(np.int16), e_b, e_out)
    if list(layers) != [n for n, *_ in conv_plan(config)]:
        raise ModelFileError(f"{path}: layer list does not match config")
    return QuantizedModel(config, layers, header["e_in"], header["norm_mean"], header["norm_std"])
