"""UNet variants: construction, float forward/backward, cost accounting and
the model file container."""

from __future__ import annotations

import configparser
import json
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import nn_core as nn
from .dsp import LogPowerFeatures

VARIANTS = ("2d_v1", "2d_v2", "hybrid", "mixed", "1d", "ats")
N_LEVELS = 5

# Temporal kernel width per block, ordered DB1..DB5 then UB1..UB5.
# UB_j works at the resolution of DB_(5-j); hybrid/mixed mirror the encoder.
_KT = {
    "2d_v1": (3,) * 10,
    "2d_v2": (3,) * 10,
    "1d": (1,) * 10,
    "ats": (1,) * 10,
    "hybrid": (3, 1, 3, 1, 3, 3, 1, 3, 1, 3),
    "mixed": (3, 3, 1, 1, 1, 1, 1, 1, 3, 3),
}


def read_config(path=None) -> configparser.ConfigParser:
    """Packaged defaults, overlaid with ``path`` when given."""
    cp = configparser.ConfigParser()
    cp.read_string(resources.files(__package__).joinpath("default_config.ini").read_text())
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    return cp


@dataclass
class ModelConfig:
    variant: str = "ats"
    encoder_channels: tuple = (5, 8, 8, 8, 10)
    shift_fraction: float = 0.25
    n_freq: int = 256
    n_frames: int = 9

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if len(self.encoder_channels) != N_LEVELS or min(self.encoder_channels) < 1:
            raise ValueError(f"need {N_LEVELS} positive encoder widths, got {self.encoder_channels}")
        if self.n_freq % 2**N_LEVELS:
            raise ValueError(f"n_freq must be divisible by {2**N_LEVELS}")
        if self.variant == "ats":
            for c in self.encoder_channels:
                nn.shift_channels(c, self.shift_fraction)

    @property
    def temporal_kernels(self):
        return _KT[self.variant]

    @property
    def uses_atsm(self) -> bool:
        return self.variant == "ats"

    def to_dict(self):
        return asdict(self) | {"encoder_channels": list(self.encoder_channels)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_config(variant: str | None = "ats", path=None) -> ModelConfig:
    """Config for ``variant`` from the packaged (or given) ini file; with
    ``variant=None`` the file's own variant is used."""
    sec = read_config(path)["model"]
    variant = variant or sec.get("variant", "ats")
    channels = [int(c) for c in sec["encoder_channels"].split(",")]
    if variant == "2d_v2":
        channels = [c * sec.getint("wide_multiplier") for c in channels]
    return ModelConfig(
        variant=variant,
        encoder_channels=tuple(channels),
        shift_fraction=sec.getfloat("shift_fraction"),
        n_freq=sec.getint("n_freq"),
        n_frames=sec.getint("n_frames"),
    )


def conv_plan(config: ModelConfig):
    """``[(name, c_in, c_out, k_t, level)]`` in forward order.

    ``level`` is the pooling depth, so the layer runs on ``n_freq / 2**level`` bins.
    """
    widths = (1,) + config.encoder_channels
    kts = config.temporal_kernels
    plan = []
    for i in range(1, N_LEVELS + 1):
        kt = kts[i - 1]
        plan.append((f"db{i}.conv1", widths[i - 1], widths[i], kt, i))
        plan.append((f"db{i}.conv2", widths[i], widths[i], kt, i))
    cur = widths[N_LEVELS]
    for j in range(1, N_LEVELS + 1):
        level = N_LEVELS - j
        kt = kts[N_LEVELS + j - 1]
        out = widths[max(level, 1)]
        plan.append((f"ub{j}.conv1", cur + widths[level], out, kt, level))
        plan.append((f"ub{j}.conv2", out, out, kt, level))
        cur = out
    plan.append(("head", cur, 1, 1, 0))
    return plan


@dataclass
class Model:
    config: ModelConfig
    convs: dict  # name -> ConvParams, forward order
    norm_mean: float = 0.0
    norm_std: float = 1.0
    _cache: dict = field(default=None, repr=False, compare=False)

    @property
    def n_atsm(self) -> int:
        return 2 * N_LEVELS if self.config.uses_atsm else 0

    def params(self):
        return list(self.convs.values())

    def zero_grad(self):
        for p in self.convs.values():
            p.zero_grad()

    def astype(self, dtype) -> "Model":
        return Model(
            self.config,
            {k: p.astype(dtype) for k, p in self.convs.items()},
            self.norm_mean,
            self.norm_std,
        )

    def copy(self) -> "Model":
        return self.astype(next(iter(self.convs.values())).weight.dtype)

    # forward / backward

    def _block(self, h, prefix, tape, observer=None):
        c1, c2 = self.convs[prefix + ".conv1"], self.convs[prefix + ".conv2"]
        keep = tape is not None
        a1 = nn.conv(h, c1, return_cols=keep)
        if keep:
            a1, cols1 = a1
        r1 = nn.relu(a1)
        a2 = nn.conv(r1, c2, return_cols=keep)
        if keep:
            a2, cols2 = a2
            tape[prefix] = (h, a1, r1, a2, cols1, cols2)
        out = nn.relu(a2)
        if observer is not None:
            observer(prefix + ".conv1", r1)
            observer(prefix + ".conv2", out)
        if self.config.uses_atsm:
            out = nn.atsm(out, self.config.shift_fraction)
        return out

    def _block_backward(self, g, prefix, tape):
        h, a1, r1, a2, cols1, cols2 = tape[prefix]
        c1, c2 = self.convs[prefix + ".conv1"], self.convs[prefix + ".conv2"]
        if self.config.uses_atsm:
            g = nn.atsm_backward(g, self.config.shift_fraction)
        g = nn.relu_backward(a2, g)
        g, (gw, gb) = nn.conv_backward(r1, c2, g, cols2)
        c2.grad_weight += gw
        c2.grad_bias += gb
        g = nn.relu_backward(a1, g)
        g, (gw, gb) = nn.conv_backward(h, c1, g, cols1)
        c1.grad_weight += gw
        c1.grad_bias += gb
        return g

    def forward(self, x, keep_tape: bool = False, observer=None):
        """Map ``(1, F, T)`` (or batched ``(N, 1, F, T)``) to the same shape.

        ``observer(name, activation)`` is called with the input and with every
        conv output after its activation.
        """
        x = np.asarray(x)
        squeeze = x.ndim == 3
        xb = x[None] if squeeze else x
        if xb.shape[1:] != (1, self.config.n_freq, xb.shape[-1]) or xb.ndim != 4:
            raise ValueError(f"expected input (N, 1, {self.config.n_freq}, T), got {x.shape}")
        tape = {} if keep_tape else None
        skips = [xb]
        h = xb
        if observer is not None:
            observer("input", xb)
        for i in range(1, N_LEVELS + 1):
            pooled, choice = nn.maxpool_f(h)
            if tape is not None:
                tape[f"pool{i}"] = choice
            h = self._block(pooled, f"db{i}", tape, observer)
            skips.append(h)
        for j in range(1, N_LEVELS + 1):
            skip = skips[N_LEVELS - j]
            if tape is not None:
                tape[f"cat{j}"] = h.shape[1]
            h = nn.concat_channels(nn.upsample_f(h), skip)
            h = self._block(h, f"ub{j}", tape, observer)
        if tape is not None:
            tape["head"] = h
        y = nn.conv(h, self.convs["head"])
        if observer is not None:
            observer("head", y)
        self._cache = tape
        return y[0] if squeeze else y

    def backward(self, grad_y):
        """Accumulate parameter gradients for the last ``forward(keep_tape=True)``
        call and return the gradient with respect to its input."""
        tape = self._cache
        if tape is None:
            raise RuntimeError("backward() needs a preceding forward(keep_tape=True)")
        g = np.asarray(grad_y)
        squeeze = g.ndim == 3
        g = g[None] if squeeze else g
        g, (gw, gb) = nn.conv_backward(tape["head"], self.convs["head"], g)
        self.convs["head"].grad_weight += gw
        self.convs["head"].grad_bias += gb
        skip_grads = [0.0] * (N_LEVELS + 1)
        for j in range(N_LEVELS, 0, -1):
            g = self._block_backward(g, f"ub{j}", tape)
            g_up, g_skip = nn.concat_backward(g, tape[f"cat{j}"])
            skip_grads[N_LEVELS - j] = skip_grads[N_LEVELS - j] + g_skip
            g = nn.upsample_f_backward(g_up)
        for i in range(N_LEVELS, 0, -1):
            g = g + skip_grads[i]
            g = self._block_backward(g, f"db{i}", tape)
            g = nn.maxpool_f_backward(g, tape[f"pool{i}"])
        g = g + skip_grads[0]
        self._cache = None
        return g[0] if squeeze else g


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    rng = np.random.default_rng(seed)
    convs = {}
    for name, c_in, c_out, kt, _ in conv_plan(config):
        convs[name] = nn.ConvParams.init(c_in, c_out, kt, rng, dtype=dtype)
    return Model(config, convs)


def split_dc(values):
    """Split a ``(257, T)`` grid into its DC row and the 256 remaining rows."""
    values = np.asarray(values)
    return values[..., 0, :], values[..., 1:, :]


def attach_dc(dc, rest):
    return np.concatenate((np.asarray(dc)[..., None, :], rest), axis=-2)


def forward_features(m: Model, f: LogPowerFeatures) -> LogPowerFeatures:
    """Run the network on a normalised 256 x T grid (DC row already removed)."""
    v = f.values
    if v.shape != (m.config.n_freq, m.config.n_frames):
        raise ValueError(f"expected features {(m.config.n_freq, m.config.n_frames)}, got {v.shape}")
    y = m.forward(v[None].astype(np.float64))[0]
    return LogPowerFeatures(y, f.norm_mean, f.norm_std)


# cost accounting


def layer_costs(m_or_config, input_shape=None):
    """Per-layer ``(name, kind, out_shape, params, flops)`` rows.

    Convolutions count 2 FLOPs per MAC; pooling counts one comparison per
    output element; upsampling, concatenation, ReLU and ATSM count zero.
    """
    config = m_or_config.config if isinstance(m_or_config, Model) else m_or_config
    _, F, T = input_shape or (1, config.n_freq, config.n_frames)
    rows = []
    widths = (1,) + config.encoder_channels
    plan = {name: rest for name, *rest in conv_plan(config)}

    def conv_row(name, level):
        c_in, c_out, kt, _ = plan[name]
        f = F >> level
        params = c_out * c_in * 3 * kt + c_out
        rows.append((name, f"conv3x{kt}", (c_out, f, T), params, 2 * c_in * c_out * 3 * kt * f * T))

    for i in range(1, N_LEVELS + 1):
        f = F >> i
        rows.append((f"db{i}.pool", "maxpool2x1", (widths[i - 1], f, T), 0, widths[i - 1] * f * T))
        conv_row(f"db{i}.conv1", i)
        conv_row(f"db{i}.conv2", i)
        if config.uses_atsm:
            rows.append((f"db{i}.atsm", "atsm", (widths[i], f, T), 0, 0))
    for j in range(1, N_LEVELS + 1):
        level = N_LEVELS - j
        conv_row(f"ub{j}.conv1", level)
        conv_row(f"ub{j}.conv2", level)
        if config.uses_atsm:
            rows.append((f"ub{j}.atsm", "atsm", (plan[f"ub{j}.conv2"][1], F >> level, T), 0, 0))
    conv_row("head", 0)
    return rows


def count_params(m) -> int:
    if isinstance(m, Model):
        return sum(p.n_params for p in m.convs.values())
    return sum(r[3] for r in layer_costs(m))


def count_flops(m, input_shape=None) -> int:
    return sum(r[4] for r in layer_costs(m, input_shape))


# file container
#
#   magic   4s   b"ATSU"
#   version u16
#   kind    u16  0 = float32 payload, 1 = int16 payload
#   hlen    u32
#   header  hlen bytes of UTF-8 JSON (config, norm stats, layer table, extras)
#   payload per layer: weight then bias, little-endian, in header order

MAGIC = b"ATSU"
FORMAT_VERSION = 1
KIND_FLOAT = 0
KIND_INT16 = 1
_PREFIX = struct.Struct("<4sHHI")


class ModelFileError(ValueError):
    pass


def write_container(path, kind, header: dict, arrays):
    dtype = "<f4" if kind == KIND_FLOAT else "<i2"
    hbytes = json.dumps(header, sort_keys=True).encode()
    blobs = [np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays]
    Path(path).write_bytes(_PREFIX.pack(MAGIC, FORMAT_VERSION, kind, len(hbytes)) + hbytes + b"".join(blobs))


def read_container(path, expect_kind):
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise ModelFileError(f"{path}: truncated header")
    magic, version, kind, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version} (reader supports {FORMAT_VERSION})")
    if kind != expect_kind:
        raise ModelFileError(f"{path}: payload kind {kind}, expected {expect_kind}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise ModelFileError(f"{path}: truncated header")
    header = json.loads(data[start : start + hlen])
    dtype = np.dtype("<f4" if kind == KIND_FLOAT else "<i2")
    pos = start + hlen
    arrays = []
    for shape in header["shapes"]:
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if pos + nbytes > len(data):
            raise ModelFileError(f"{path}: truncated payload")
        arrays.append(np.frombuffer(data, dtype, int(np.prod(shape)), pos).reshape(shape).copy())
        pos += nbytes
    if pos != len(data):
        raise ModelFileError(f"{path}: {len(data) - pos} trailing bytes")
    return header, arrays


def save_model(m: Model, path) -> None:
    names = list(m.convs)
    arrays, shapes = [], []
    for n in names:
        for a in (m.convs[n].weight, m.convs[n].bias):
            arrays.append(a)
            shapes.append(list(a.shape))
    header = {
        "config": m.config.to_dict(),
        "norm_mean": float(m.norm_mean),
        "norm_std": float(m.norm_std),
        "layers": names,
        "shapes": shapes,
    }
    write_container(path, KIND_FLOAT, header, arrays)


def load_model(path) -> Model:
    header, arrays = read_container(path, KIND_FLOAT)
    config = ModelConfig.from_dict(header["config"])
    convs = {}
    for k, name in enumerate(header["layers"]):
        convs[name] = nn.ConvParams(arrays[2 * k], arrays[2 * k + 1])
    expected = [n for n, *_ in conv_plan(config)]
    if list(convs) != expected:
        raise ModelFileError(f"{path}: layer list does not match config")
    return Model(config, convs, header["norm_mean"], header["norm_std"])
