"""What the temporal shift does to a tensor, and how far it lets a 3x1 conv see."""

import numpy as np

from atsunet import nn_core as nn

x = np.arange(4 * 1 * 5, dtype=float).reshape(4, 1, 5)
print("input, 4 channels x 5 frames:\n", x[:, 0])
print("after the shift (fraction 0.5):\n", nn.atsm(x, 0.5)[:, 0])
# channel 0 is delayed, channel 1 advanced, the rest stay put

rng = np.random.default_rng(1)
x = rng.standard_normal((8, 16, 9))
p = nn.ConvParams.init(8, 4, 1, rng, dtype=np.float64)
base = nn.conv(nn.atsm(x, 0.5), p)
x[:, :, 4] += 1.0  # poke frame 4
moved = np.any(nn.conv(nn.atsm(x, 0.5), p) != base, axis=(0, 1))
print("frames reached from frame 4:", np.flatnonzero(moved))
