"""Streaming enhancement: arbitrary chunk sizes, same output, per-frame timing."""

import numpy as np

from atsunet import model_zoo as mz
from atsunet import pipeline, training
from atsunet.audio_io import AudioBuffer

rng = np.random.default_rng(5)
x = training.simulate_bcm(training.synth_utterance(rng, 3.0)).samples
model = mz.build(mz.default_config("ats"), seed=0)

state = pipeline.StreamState(model)
pieces = []
pos = 0
while pos < x.size:
    n = int(rng.integers(100, 3000))  # whatever the audio driver hands us
    pieces.append(state.push(x[pos : pos + n]))
    pos += n
streamed = np.concatenate(pieces)

batch, report = pipeline.enhance(model, AudioBuffer(x))
print("streamed samples:", streamed.size, "of", x.size)
print("identical to batch:", np.array_equal(streamed, batch.samples[: streamed.size]))
print(report.summary())
print("deadline per hop: %.0f ms" % pipeline.DEADLINE_MS)
