"""Bandwidth extension of band-limited (bone-conduction-like) 16 kHz speech.

Modules: ``audio_io`` (WAV, framing), ``dsp`` (FFT, STFT, features),
``nn_core`` (kernels), ``model_zoo`` (UNet variants), ``training``,
``quantization`` (int16 inference), ``pipeline`` (streaming engine),
``metrics`` (LSD, spectral SNR) and ``cli``.
"""

from .audio_io import AudioBuffer, read_wav, write_wav
from .model_zoo import Model, ModelConfig, build, default_config, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "Model",
    "ModelConfig",
    "build",
    "default_config",
    "load_model",
    "read_wav",
    "save_model",
    "write_wav",
]
