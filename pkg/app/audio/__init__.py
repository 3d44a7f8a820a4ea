from app.audio.dsp import (
    MelSpec,
    StftConfig,
    blur_bands,
    chunk,
    griffin_lim,
    linear_mel,
    mel_spectrogram,
    mix,
    shared_gain,
    sum_stems,
)
from app.audio.wav import Waveform, load_wav, resample, save_wav

__all__ = [
    "MelSpec",
    "StftConfig",
    "Waveform",
    "blur_bands",
    "chunk",
    "griffin_lim",
    "linear_mel",
    "load_wav",
    "mel_spectrogram",
    "mix",
    "resample",
    "save_wav",
    "shared_gain",
    "sum_stems",
]
