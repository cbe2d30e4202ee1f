"""Int16 post-training quantisation and its error against the float model."""

import numpy as np

from atsunet import model_zoo as mz
from atsunet import pipeline, quantization, training
from atsunet.metrics import spectral_snr

print(quantization.quantize_array(np.array([0.75, -0.3, 0.1])))  # exponent 15
print(quantization.quantize_array(np.array([3.0])))  # exponent 13

rng = np.random.default_rng(3)
bcm = training.simulate_bcm(training.synth_utterance(rng, 2.0))
model = mz.build(mz.default_config("ats"), seed=0)
grids = training.utterance_logpower(bcm)
model.norm_mean, model.norm_std = float(grids.mean()), float(grids.std())

calib = list(((grids - model.norm_mean) / model.norm_std)[:, 1:, :])
qm = quantization.quantize_model(model, calib)
print("input exponent:", qm.e_in, "head exponent:", qm.e_head)
for name in ("db1.conv1", "ub5.conv2", "head"):
    layer = qm.layers[name]
    print(f"{name:10s} weight exp {layer.e_w:3d} bias exp {layer.e_b:3d} out exp {layer.e_out:3d}")

y_float, _ = pipeline.enhance(model, bcm)
y_int, _ = pipeline.enhance(qm, bcm)
print("quantised vs float spectral SNR: %.1f dB" % spectral_snr(y_float, y_int))
