"""Forward/backward kernels for the UNet layer set.

Feature maps are numpy arrays laid out ``(C, F, T)``; every kernel also
accepts a leading batch axis ``(N, C, F, T)`` and preserves it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C, F, T) or (N, C, F, T), got shape {x.shape}")


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


@dataclass
class ConvParams:
    """Weights ``(C_out, C_in, k_f, k_t)`` and bias ``(C_out,)``.

    ``k_t == 1`` is a frequency-only (1D) convolution.
    """

    weight: np.ndarray
    bias: np.ndarray
    grad_weight: np.ndarray = field(default=None, repr=False)
    grad_bias: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bad conv shapes {self.weight.shape}, {self.bias.shape}")
        if self.grad_weight is None:
            self.zero_grad()

    @classmethod
    def init(cls, c_in, c_out, k_t, rng, k_f=3, dtype=np.float32):
        fan_in = c_in * k_f * k_t
        fan_out = c_out * k_f * k_t
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(c_out, c_in, k_f, k_t)).astype(dtype)
        return cls(w, np.zeros(c_out, dtype=dtype))

    @property
    def c_in(self):
        return self.weight.shape[1]

    @property
    def c_out(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[2:]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def zero_grad(self):
        self.grad_weight = np.zeros(self.weight.shape, dtype=np.float64)
        self.grad_bias = np.zeros(self.bias.shape, dtype=np.float64)

    def astype(self, dtype):
        return ConvParams(self.weight.astype(dtype), self.bias.astype(dtype))


def _im2col(xb, kf, kt):
    """``(N, C, F, T)`` -> ``(N, C*kf*kt, F*T)`` of same-padded shifted views."""
    n, c, F, T = xb.shape
    pf, pt = kf // 2, kt // 2
    xp = np.pad(xb, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    cols = np.empty((n, c, kf, kt, F, T), dtype=xb.dtype)
    for a in range(kf):
        for b in range(kt):
            cols[:, :, a, b] = xp[:, :, a : a + F, b : b + T]
    return cols.reshape(n, c * kf * kt, F * T)


def _col2im(cols, shape, kf, kt):
    n, c, F, T = shape
    pf, pt = kf // 2, kt // 2
    cols = cols.reshape(n, c, kf, kt, F, T)
    xp = np.zeros((n, c, F + 2 * pf, T + 2 * pt), dtype=cols.dtype)
    for a in range(kf):
        for b in range(kt):
            xp[:, :, a : a + F, b : b + T] += cols[:, :, a, b]
    return xp[:, :, pf : pf + F, pt : pt + T]


def conv(x, p: ConvParams, return_cols: bool = False):
    """Same-padded cross-correlation over (f) or (f, t).

    With ``return_cols`` the im2col buffer is returned too, for reuse by
    :func:`conv_backward`.
    """
    xb, squeeze = _batched(x)
    n, c, F, T = xb.shape
    if c != p.c_in:
        raise ValueError(f"conv expects {p.c_in} input channels, got {c}")
    kf, kt = p.kernel
    dtype = np.result_type(xb, p.weight)
    cols = _im2col(xb.astype(dtype, copy=False), kf, kt)
    out = np.matmul(p.weight.reshape(p.c_out, -1).astype(dtype, copy=False), cols)
    out += p.bias.astype(dtype)[:, None]
    out = _unbatch(out.reshape(n, p.c_out, F, T), squeeze)
    return (out, cols) if return_cols else out


def conv_backward(x, p: ConvParams, grad_out, cols=None):
    """Return ``(grad_x, (grad_weight, grad_bias))`` for :func:`conv`."""
    xb, squeeze = _batched(x)
    gb, _ = _batched(grad_out)
    n, c, F, T = xb.shape
    if gb.shape != (n, p.c_out, F, T):
        raise ValueError(f"upstream gradient shape {gb.shape} does not match conv output")
    kf, kt = p.kernel
    dtype = np.result_type(xb, gb, p.weight)
    g = gb.reshape(n, p.c_out, F * T).astype(dtype, copy=False)
    if cols is None or cols.dtype != dtype:
        cols = _im2col(xb.astype(dtype, copy=False), kf, kt)
    gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(p.weight.shape)
    gbias = g.sum(axis=(0, 2))
    w2 = p.weight.reshape(p.c_out, -1).astype(dtype, copy=False)
    gx = _col2im(np.matmul(w2.T, g), xb.shape, kf, kt)
    return _unbatch(gx, squeeze), (gw, gbias)


def maxpool_f(x):
    """2x1 max-pool along frequency. Ties go to the lower index.

    Returns the pooled map and the 0/1 choice of each output (1 = upper row).
    """
    xb, squeeze = _batched(x)
    F = xb.shape[2]
    if F % 2:
        raise ValueError(f"max-pool needs an even frequency extent, got {F}")
    lo, hi = xb[:, :, 0::2], xb[:, :, 1::2]
    choice = hi > lo
    return _unbatch(np.where(choice, hi, lo), squeeze), _unbatch(choice, squeeze)


def maxpool_f_backward(grad_out, choice):
    gb, squeeze = _batched(grad_out)
    cb, _ = _batched(choice)
    n, c, F, T = gb.shape
    gx = np.zeros((n, c, 2 * F, T), dtype=gb.dtype)
    gx[:, :, 0::2] = np.where(cb, 0, gb)
    gx[:, :, 1::2] = np.where(cb, gb, 0)
    return _unbatch(gx, squeeze)


def upsample_f(x):
    """Nearest-neighbour 2x upsampling along frequency."""
    xb, squeeze = _batched(x)
    return _unbatch(np.repeat(xb, 2, axis=2), squeeze)


def upsample_f_backward(grad_out):
    gb, squeeze = _batched(grad_out)
    return _unbatch(gb[:, :, 0::2] + gb[:, :, 1::2], squeeze)


def concat_channels(a, b):
    ab, squeeze = _batched(a)
    bb, _ = _batched(b)
    if ab.shape[0] != bb.shape[0] or ab.shape[2:] != bb.shape[2:]:
        raise ValueError(f"cannot concatenate {ab.shape} and {bb.shape}")
    return _unbatch(np.concatenate((ab, bb), axis=1), squeeze)


def concat_backward(grad_out, c_a: int):
    g = np.asarray(grad_out)
    axis = g.ndim - 3
    return np.split(g, [c_a], axis=axis)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(np.asarray(x) > 0, grad_out, 0)


def shift_channels(c: int, shift_fraction: float) -> int:
    """Number of shifted (dynamic) channels: an even count >= 2, at most C."""
    if c < 2:
        raise ValueError(f"ATSM needs at least 2 channels, got {c}")
    if not 0 < shift_fraction <= 1:
        raise ValueError(f"shift_fraction must be in (0, 1], got {shift_fraction}")
    d = 2 * int(np.floor(c * shift_fraction / 2 + 0.5))
    return min(max(d, 2), c - c % 2)


def atsm(x, shift_fraction: float = 0.25):
    """Audio temporal shift.

    The first d/2 channels are delayed one frame, the next d/2 advanced one
    frame, the rest copied. Vacated frames are zero. Works for any dtype.
    """
    xb, squeeze = _batched(x)
    d = shift_channels(xb.shape[1], shift_fraction)
    h = d // 2
    out = np.empty_like(xb)
    out[:, d:] = xb[:, d:]
    out[:, :h, :, 1:] = xb[:, :h, :, :-1]
    out[:, :h, :, 0] = 0
    out[:, h:d, :, :-1] = xb[:, h:d, :, 1:]
    out[:, h:d, :, -1] = 0
    return _unbatch(out, squeeze)


def atsm_backward(grad_out, shift_fraction: float = 0.25):
    """Adjoint of :func:`atsm`: the opposite shift."""
    gb, squeeze = _batched(grad_out)
    d = shift_channels(gb.shape[1], shift_fraction)
    h = d // 2
    gx = np.empty_like(gb)
    gx[:, d:] = gb[:, d:]
    gx[:, :h, :, :-1] = gb[:, :h, :, 1:]
    gx[:, :h, :, -1] = 0
    gx[:, h:d, :, 1:] = gb[:, h:d, :, :-1]
    gx[:, h:d, :, 0] = 0
    return _unbatch(gx, squeeze)
