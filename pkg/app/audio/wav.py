"""
RIFF/WAVE I/O (soundfile) and resampling (librosa polyphase).

PCM16 is scaled by 1/32768 both ways, so every loaded sample sits on a
dyadic grid and float64 sums of stems are exact.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import librosa
import numpy as np
import soundfile as sf

from app import config
from app.errors import AudioError, UnsupportedCodecError

PCM16_SCALE = 32768.0
_ACCEPTED_SUBTYPES = ("PCM_16", "FLOAT")


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono float64 signal."""

    samples: np.ndarray
    sample_rate: int = config.SAMPLE_RATE

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {samples.shape}")
        if not np.isfinite(samples).all():
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def silence(cls, seconds: float, sample_rate: int = config.SAMPLE_RATE) -> "Waveform":
        return cls(np.zeros(int(round(seconds * sample_rate))), sample_rate)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_rate == other.sample_rate and bool(np.array_equal(self.samples, other.samples))

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.abs(self.samples).max()) if len(self) else 0.0

    def is_silent(self) -> bool:
        return self.peak == 0.0


def load_wav(data: bytes) -> Waveform:
    """Decode PCM16 or float32 WAV bytes; stereo is averaged to mono."""
    try:
        with sf.SoundFile(io.BytesIO(data)) as f:
            if f.format != "WAV":
                raise UnsupportedCodecError(f"{f.format}/{f.subtype}")
            if f.subtype not in _ACCEPTED_SUBTYPES:
                raise UnsupportedCodecError(f.subtype)
            rate = f.samplerate
            if f.subtype == "PCM_16":
                frames = f.read(dtype="int16", always_2d=True).astype(np.float64) / PCM16_SCALE
            else:
                frames = f.read(dtype="float32", always_2d=True).astype(np.float64)
    except AudioError:
        raise
    except (RuntimeError, TypeError, ValueError) as exc:
        raise AudioError(f"could not decode WAV data: {exc}") from exc

    mono = frames.mean(axis=1) if frames.shape[1] > 1 else frames[:, 0]
    return Waveform(np.clip(mono, -1.0, 1.0), rate)


def save_wav(wave: Waveform) -> bytes:
    """Encode as 16-bit PCM; samples beyond full scale are clipped."""
    ints = np.clip(np.rint(wave.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    buf = io.BytesIO()
    sf.write(buf, ints, wave.sample_rate, format="WAV", subtype="PCM_16")
    return buf.getvalue()


def read_wav_file(path) -> Waveform:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise AudioError(f"cannot read wav file {path}: {exc.strerror or exc}") from exc
    return load_wav(data)


def write_wav_file(path, wave: Waveform) -> None:
    with open(path, "wb") as f:
        f.write(save_wav(wave))


def resample(wave: Waveform, rate: int) -> Waveform:
    if rate <= 0:
        raise ValueError(f"target rate must be positive, got {rate}")
    if rate == wave.sample_rate:
        return wave
    y = librosa.resample(wave.samples, orig_sr=wave.sample_rate, target_sr=rate, res_type="polyphase")
    return Waveform(y, rate)
