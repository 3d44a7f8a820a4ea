"""
Toy stem renderer: noise-burst drums, square-wave bass, band-limited saw chords.

Output samples are snapped to the 16-bit grid so stems survive a WAV round
trip unchanged and their float64 sums stay exact.
"""
from __future__ import annotations

from typing import Dict

import numpy as np

from app.audio.wav import PCM16_SCALE, Waveform
from app.symbolic.types import Instrument, MidiDocument, NoteEvent

DRUM_LEVEL = 0.30
BASS_LEVEL = 0.22
GUITAR_LEVEL = 0.10  # per chord voice
SAW_HARMONICS = 12

KICKS = {35, 36}
SNARES = {37, 38, 39, 40}
TOMS = {41, 43, 45, 47, 48, 50}


def midi_to_hz(pitch: int) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def quantize_pcm16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * PCM16_SCALE), -32768, 32767) / PCM16_SCALE


def _seconds_per_tick(doc: MidiDocument) -> float:
    return doc.tempo_map[0][1] / 1e6 / doc.ticks_per_quarter


def _drum_hit(key: int, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    if key in KICKS:
        sweep = 50.0 + 90.0 * np.exp(-t * 30.0)
        phase = 2 * np.pi * np.cumsum(sweep) / sr
        return np.sin(phase) * np.exp(-t * 18.0)
    noise = rng.uniform(-1.0, 1.0, n)
    if key in SNARES:
        body = np.sin(2 * np.pi * 190.0 * t) * np.exp(-t * 30.0)
        return 0.6 * noise * np.exp(-t * 22.0) + 0.4 * body
    if key in TOMS:
        return np.sin(2 * np.pi * midi_to_hz(key) * t) * np.exp(-t * 14.0)
    # cymbals, hats and hand percussion: high-passed noise, short decay
    bright = np.diff(noise, prepend=0.0) * 0.5
    decay = 12.0 if key in (46, 49, 51, 52, 55, 57, 59) else 45.0
    return bright * np.exp(-t * decay)


def _square(freq: float, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    return np.sign(np.sin(2 * np.pi * freq * t))


def _saw(freq: float, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    for h in range(1, SAW_HARMONICS + 1):
        if h * freq >= sr / 2:
            break
        out += ((-1) ** (h + 1)) * np.sin(2 * np.pi * h * freq * t) / h
    return out * (2.0 / np.pi)


def _envelope(n: int, sr: int, release: float = 0.01) -> np.ndarray:
    env = np.ones(n)
    r = min(n, max(1, int(release * sr)))
    env[-r:] = np.linspace(1.0, 0.0, r)
    a = min(n, max(1, int(0.003 * sr)))
    env[:a] *= np.linspace(0.0, 1.0, a)
    return env


def _render_note(note: NoteEvent, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    gain = note.velocity / 127.0
    if note.instrument == Instrument.DRUMS:
        return DRUM_LEVEL * gain * _drum_hit(note.pitch, n, sr, rng)
    if note.instrument == Instrument.BASS:
        tone = _square(midi_to_hz(note.pitch), n, sr)
        return BASS_LEVEL * gain * tone * _envelope(n, sr)
    return GUITAR_LEVEL * gain * _saw(midi_to_hz(note.pitch), n, sr) * _envelope(n, sr)


def render_stems(doc: MidiDocument, n_samples: int, sample_rate: int,
                 rng: np.random.Generator) -> Dict[str, Waveform]:
    """One waveform per instrument, all `n_samples` long."""
    spt = _seconds_per_tick(doc)
    stems: Dict[str, Waveform] = {}
    for instrument in Instrument:
        buf = np.zeros(n_samples)
        for note in doc.notes(instrument):
            start = int(round(note.onset * spt * sample_rate))
            if start >= n_samples:
                continue
            if instrument == Instrument.DRUMS:
                length = int(0.25 * sample_rate)
            else:
                length = max(1, int(round(note.duration * spt * sample_rate)))
            length = min(length, n_samples - start)
            buf[start:start + length] += _render_note(note, length, sample_rate, rng)
        stems[instrument.stem_name] = Waveform(quantize_pcm16(buf), sample_rate)
    return stems
