"""
Spectrogram front end: Hann STFT -> HTK mel filterbank -> dB -> [0, 1].

Magnitudes are divided by half the window sum so a full-scale sine peaks
near 1.0. The dB reference is the loudest cell of the clip, so the peak maps
to 1 and everything 80 dB below it to 0. The reference never drops below
the silence floor plus the dynamic range, which keeps silence at exactly 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import librosa
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import ndimage

from app import config
from app.audio.wav import Waveform
from app.errors import AudioError

AMIN = 1e-10
DYNAMIC_RANGE_DB = 80.0


class StftConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sample_rate: int = config.SAMPLE_RATE
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 64
    f_min: float = 0.0
    f_max: Optional[float] = None  # None = Nyquist
    target_frames: int = 256
    dynamic_range_db: float = DYNAMIC_RANGE_DB

    @field_validator("n_fft")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v < 16 or v & (v - 1):
            raise ValueError(f"n_fft must be a power of two >= 16, got {v}")
        return v

    @field_validator("n_mels")
    @classmethod
    def _enough_mels(cls, v: int) -> int:
        if v < 8:
            raise ValueError(f"n_mels must be >= 8, got {v}")
        return v

    @model_validator(mode="after")
    def _check(self) -> "StftConfig":
        if not 1 <= self.hop <= self.n_fft:
            raise ValueError(f"hop must be in [1, n_fft], got {self.hop}")
        if self.target_frames < 1:
            raise ValueError("target_frames must be positive")
        if self.f_max is not None and not self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError(f"f_max must lie in (f_min, {self.sample_rate / 2}]")
        return self

    @property
    def mel_f_max(self) -> float:
        return self.f_max if self.f_max is not None else self.sample_rate / 2.0

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_mels, self.target_frames)

    @classmethod
    def preset(cls, name: str) -> "StftConfig":
        try:
            return cls(**PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown STFT preset '{name}' (expected one of: {', '.join(PRESETS)})") from None


PRESETS = {
    "desk": {},
    # approximation of the 512x512 image geometry of the Riffusion front end
    "riffusion512": {
        "sample_rate": 44100,
        "n_fft": 4096,
        "hop": 441,
        "n_mels": 512,
        "f_max": 10000.0,
        "target_frames": 512,
    },
}


@lru_cache(maxsize=8)
def _window_sum(n_fft: int) -> float:
    return float(librosa.filters.get_window("hann", n_fft, fftbins=True).sum())


@lru_cache(maxsize=8)
def mel_basis(cfg: StftConfig) -> np.ndarray:
    """[n_mels, 1 + n_fft/2] triangles; each row sums to ~1 over its bins."""
    fb = librosa.filters.mel(
        sr=cfg.sample_rate,
        n_fft=cfg.n_fft,
        n_mels=cfg.n_mels,
        fmin=cfg.f_min,
        fmax=cfg.mel_f_max,
        htk=True,
        norm="slaney",
        dtype=np.float64,
    )
    # slaney norm gives unit area in Hz; rescale to unit area in bins
    fb = fb * (cfg.sample_rate / cfg.n_fft)
    fb.setflags(write=False)
    return fb


def mel_bin_of(frequency: float, cfg: StftConfig) -> int:
    """Mel row with the largest weight at the STFT bin nearest `frequency`."""
    k = int(round(frequency * cfg.n_fft / cfg.sample_rate))
    return int(np.argmax(mel_basis(cfg)[:, k]))


@dataclass(frozen=True, eq=False)
class MelSpec:
    """Normalized log-mel matrix [n_mels x target_frames] in [0, 1]."""

    values: np.ndarray
    config: StftConfig
    ref_db: float = 0.0  # dB level that maps to 1.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != self.config.shape:
            raise ValueError(f"mel spec shape {values.shape} does not match config {self.config.shape}")
        if not np.isfinite(values).all() or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise ValueError("mel spec values must be finite and in [0, 1]")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dynamic_range_db(self) -> float:
        return self.config.dynamic_range_db

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MelSpec):
            return NotImplemented
        return self.config == other.config and bool(np.array_equal(self.values, other.values))

    def to_model(self) -> np.ndarray:
        """[-1, 1] scaling used inside the diffusion model."""
        return self.values * 2.0 - 1.0

    @classmethod
    def from_model(cls, array: np.ndarray, cfg: StftConfig) -> "MelSpec":
        return cls(np.clip((np.asarray(array, dtype=np.float32) + 1.0) / 2.0, 0.0, 1.0), cfg)

    @classmethod
    def zeros(cls, cfg: StftConfig) -> "MelSpec":
        return cls(np.zeros(cfg.shape, np.float32), cfg)


def _check_input(wave: Waveform, cfg: StftConfig) -> None:
    if wave.sample_rate != cfg.sample_rate:
        raise AudioError(
            f"waveform is at {wave.sample_rate} Hz but the STFT config expects {cfg.sample_rate} Hz; resample first"
        )
    if len(wave) < cfg.n_fft:
        raise AudioError(f"waveform has {len(wave)} samples, fewer than n_fft={cfg.n_fft}")


def stft_magnitude(wave: Waveform, cfg: StftConfig) -> np.ndarray:
    _check_input(wave, cfg)
    spec = librosa.stft(wave.samples, n_fft=cfg.n_fft, hop_length=cfg.hop, window="hann", center=True)
    return np.abs(spec) / (_window_sum(cfg.n_fft) / 2.0)


def linear_mel(wave: Waveform, cfg: StftConfig) -> np.ndarray:
    """Mel magnitudes before dB compression, [n_mels, frames]."""
    return mel_basis(cfg) @ stft_magnitude(wave, cfg)


def _fit_frames(matrix: np.ndarray, frames: int) -> np.ndarray:
    if matrix.shape[1] >= frames:
        return matrix[:, :frames]
    return np.pad(matrix, ((0, 0), (0, frames - matrix.shape[1])))


def reference_db(mel: np.ndarray, cfg: StftConfig) -> float:
    """Peak level of a linear mel matrix in dB, floored just above silence."""
    floor = 20.0 * np.log10(AMIN) + cfg.dynamic_range_db
    return max(float(20.0 * np.log10(max(float(mel.max(initial=0.0)), AMIN))), floor)


def normalize_db(mel: np.ndarray, cfg: StftConfig, ref_db: Optional[float] = None) -> Tuple[np.ndarray, float]:
    ref = reference_db(mel, cfg) if ref_db is None else float(ref_db)
    db = 20.0 * np.log10(np.maximum(mel, AMIN))
    return np.clip((db - ref + cfg.dynamic_range_db) / cfg.dynamic_range_db, 0.0, 1.0), ref


def mel_spectrogram(wave: Waveform, cfg: StftConfig, ref_db: Optional[float] = None) -> MelSpec:
    """
    Normalized log-mel of one clip. Pass `ref_db` (another clip's
    `MelSpec.ref_db`) to put two clips on one scale.
    """
    mel = _fit_frames(linear_mel(wave, cfg), cfg.target_frames)
    norm, ref = normalize_db(mel, cfg, ref_db)
    return MelSpec(norm, cfg, ref)


def denormalize(spec: MelSpec) -> np.ndarray:
    """Inverse of the dB map; floor cells come back as exact zeros."""
    cfg = spec.config
    values = spec.values.astype(np.float64)
    mel = 10.0 ** ((values * cfg.dynamic_range_db - cfg.dynamic_range_db + spec.ref_db) / 20.0)
    mel[values <= 0.0] = 0.0
    return mel


def griffin_lim(spec: MelSpec, cfg: Optional[StftConfig] = None, iters: int = 32,
                length: Optional[int] = None, seed: int = 0) -> Waveform:
    cfg = cfg or spec.config
    if iters < 1:
        raise ValueError(f"Griffin-Lim needs at least one iteration, got {iters}")
    frames = spec.values.shape[1]
    length = length if length is not None else (frames - 1) * cfg.hop
    mel = denormalize(spec)
    if not mel.any():
        return Waveform(np.zeros(length), cfg.sample_rate)

    # undo the bin-area scaling, then NNLS back to linear frequency
    magnitude = librosa.feature.inverse.mel_to_stft(
        mel / (cfg.sample_rate / cfg.n_fft),
        sr=cfg.sample_rate,
        n_fft=cfg.n_fft,
        power=1.0,
        fmin=cfg.f_min,
        fmax=cfg.mel_f_max,
        htk=True,
        norm="slaney",
    )
    magnitude = magnitude * (_window_sum(cfg.n_fft) / 2.0)
    y = librosa.griffinlim(
        magnitude,
        n_iter=iters,
        hop_length=cfg.hop,
        n_fft=cfg.n_fft,
        window="hann",
        center=True,
        length=length,
        random_state=seed,
    )
    peak = float(np.abs(y).max())
    if peak > 0:
        y = y / peak
    return Waveform(y, cfg.sample_rate)


def mel_snr_db(reference: Waveform, estimate: Waveform, cfg: StftConfig, edge_frames: int = 2) -> float:
    """
    SNR of `estimate` against `reference` in the linear-mel domain.

    Griffin-Lim recovers magnitudes, not phase, so comparison happens after
    the mel projection with a least-squares gain and the padded edge frames
    trimmed.
    """
    n = min(len(reference), len(estimate))
    ref = linear_mel(Waveform(reference.samples[:n], reference.sample_rate), cfg)
    est = linear_mel(Waveform(estimate.samples[:n], estimate.sample_rate), cfg)
    if ref.shape[1] > 2 * edge_frames:
        ref = ref[:, edge_frames:-edge_frames]
        est = est[:, edge_frames:-edge_frames]
    denom = float((est * est).sum())
    gain = float((ref * est).sum()) / denom if denom > 0 else 0.0
    noise = float(((ref - gain * est) ** 2).sum())
    signal = float((ref * ref).sum())
    if noise == 0.0:
        return float("inf")
    return 10.0 * np.log10(signal / noise)


def chunk(wave: Waveform, seconds: float = config.CHUNK_SECONDS, keep_partial: bool = False) -> List[Waveform]:
    """
    Non-overlapping chunks. A short tail is zero-padded and kept when it is
    at least half a chunk (any non-empty tail with keep_partial).
    """
    if seconds <= 0:
        raise ValueError(f"chunk length must be positive, got {seconds}")
    size = int(round(seconds * wave.sample_rate))
    full, tail = divmod(len(wave), size)
    out = [Waveform(wave.samples[i * size:(i + 1) * size], wave.sample_rate) for i in range(full)]
    if tail and (keep_partial or 2 * tail >= size):
        padded = np.zeros(size)
        padded[:tail] = wave.samples[full * size:]
        out.append(Waveform(padded, wave.sample_rate))
    return out


def _check_stems(stems: Sequence[Waveform]) -> None:
    if not stems:
        raise AudioError("cannot mix an empty list of stems")
    rate, length = stems[0].sample_rate, len(stems[0])
    for i, s in enumerate(stems[1:], start=1):
        if s.sample_rate != rate:
            raise AudioError(f"stem {i} is at {s.sample_rate} Hz, stem 0 at {rate} Hz")
        if len(s) != length:
            raise AudioError(f"stem {i} has {len(s)} samples, stem 0 has {length}")


def sum_stems(stems: Sequence[Waveform]) -> Waveform:
    """Sample-wise sum without clamping."""
    _check_stems(stems)
    total = np.zeros(len(stems[0]))
    for s in stems:
        total = total + s.samples
    return Waveform(total, stems[0].sample_rate)


def shared_gain(stems: Sequence[Waveform]) -> float:
    """Gain that brings the full mix of `stems` inside [-1, 1]."""
    peak = sum_stems(stems).peak
    return 1.0 / peak if peak > 1.0 else 1.0


def mix(stems: Sequence[Waveform], gain: Optional[float] = None) -> Waveform:
    """
    Sum then clamp. Pass the gain of the full mix when mixing a subset of the
    same session so both versions are scaled identically.
    """
    total = sum_stems(stems)
    if gain is None:
        gain = 1.0 / total.peak if total.peak > 1.0 else 1.0
    if gain == 1.0:
        return Waveform(np.clip(total.samples, -1.0, 1.0), total.sample_rate)
    return Waveform(np.clip(total.samples * gain, -1.0, 1.0), total.sample_rate)


def mel_center_frequencies(cfg: StftConfig) -> np.ndarray:
    return librosa.mel_frequencies(cfg.n_mels + 2, fmin=cfg.f_min, fmax=cfg.mel_f_max, htk=True)[1:-1]


def blur_bands(spec: MelSpec, bands_hz: Iterable[Tuple[float, float]], sigma: float = 1.5) -> MelSpec:
    """Gaussian-blur the rows whose center frequency falls in any band."""
    centers = mel_center_frequencies(spec.config)
    values = spec.values.astype(np.float64)
    for lo, hi in bands_hz:
        rows = np.flatnonzero((centers >= lo) & (centers <= hi))
        if rows.size == 0:
            continue
        a, b = rows[0], rows[-1] + 1
        values[a:b] = ndimage.gaussian_filter(values[a:b], sigma=sigma, mode="nearest")
    return MelSpec(np.clip(values, 0.0, 1.0), spec.config, spec.ref_db)
