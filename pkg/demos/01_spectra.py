"""Framing, STFT and log-power features on a synthetic utterance."""

import numpy as np

from atsunet import training
from atsunet.audio_io import frames_array
from atsunet.dsp import hann_window, istft_bins, log_power, mel_filterbank, normalize, stft

rng = np.random.default_rng(0)
speech = training.synth_utterance(rng, duration=1.0)
print("samples:", len(speech), "seconds:", speech.duration)

frames = frames_array(speech)  # 2048-sample frames, hop 1024
print("frames:", frames.shape)

# half-overlapped periodic Hann windows tile to one
w = hann_window(2048)
print("COLA deviation:", np.max(np.abs(w[:1024] + w[1024:] - 1)))

spec = stft(frames[5])
print("spectrogram bins:", spec.bins.shape)  # 257 x 9
back = istft_bins(spec.bins)
print("round trip error:", np.max(np.abs(back - frames[5])))

raw = log_power(spec)
# the model stores one global mean/std; here we just use this frame's own
feats = normalize(raw, raw.values.mean(), raw.values.std())
print("natural-log power range: %.1f .. %.1f" % (raw.values.min(), raw.values.max()))
print("normalised mean/std: %.3f %.3f" % (feats.values.mean(), feats.values.std()))

fb = mel_filterbank()
print("mel filterbank:", fb.shape, "band centres rise:", bool(np.all(np.diff(fb.argmax(axis=1)) >= 0)))
