"""Note events <-> 3-channel binary piano rolls."""
from __future__ import annotations

from typing import List, Tuple

import numpy as np

from app.symbolic.types import (
    BEATS_PER_BAR,
    DEFAULT_PITCH_BASE,
    DEFAULT_PITCHES,
    DEFAULT_STEPS_PER_BAR,
    DEFAULT_TPQ,
    GM_PERCUSSION_KEYS,
    Instrument,
    MidiDocument,
    NoteEvent,
    PianoRoll,
)

SYNTH_VELOCITY = 96


def _quantize(ticks: int, steps_per_bar: int, ticks_per_bar: int) -> int:
    # nearest grid step, ties toward the earlier step
    q, r = divmod(ticks * steps_per_bar, ticks_per_bar)
    return q + (1 if 2 * r > ticks_per_bar else 0)


def _span(ticks: int, steps_per_bar: int, ticks_per_bar: int) -> int:
    return max(1, -(-ticks * steps_per_bar // ticks_per_bar))


def bars_for(doc: MidiDocument) -> int:
    """Whole bars needed to hold every note of the document (at least one)."""
    return max(1, -(-doc.end_tick // doc.ticks_per_bar))


def to_pianoroll(doc: MidiDocument, steps_per_bar: int = DEFAULT_STEPS_PER_BAR, bars: int | None = None,
                 pitch_base: int = DEFAULT_PITCH_BASE, n_pitches: int = DEFAULT_PITCHES) -> PianoRoll:
    bars = bars_for(doc) if bars is None else bars
    if bars < 1:
        raise ValueError(f"bars must be >= 1, got {bars}")
    n_steps = bars * steps_per_bar
    data = np.zeros((len(Instrument), n_steps, n_pitches), dtype=np.uint8)
    dropped = 0

    for note in doc.notes():
        index = note.pitch - pitch_base
        if note.instrument == Instrument.DRUMS:
            # drum keys outside the GM percussion map or the window are dropped
            if note.pitch not in GM_PERCUSSION_KEYS or not 0 <= index < n_pitches:
                dropped += 1
                continue
        elif not 0 <= index < n_pitches:
            index = min(max(index, 0), n_pitches - 1)
        start = _quantize(note.onset, steps_per_bar, doc.ticks_per_bar)
        if start >= n_steps:
            continue
        length = _span(note.duration, steps_per_bar, doc.ticks_per_bar)
        data[int(note.instrument), start:min(n_steps, start + length), index] = 1

    return PianoRoll(data, steps_per_bar, pitch_base, dropped_events=dropped)


def _runs(row: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal runs of ones as (start, length)."""
    padded = np.concatenate(([0], row.astype(np.int8), [0]))
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


def from_pianoroll(roll: PianoRoll, tempo_bpm: float = 120.0,
                   ticks_per_quarter: int = DEFAULT_TPQ) -> MidiDocument:
    ticks_per_bar = ticks_per_quarter * BEATS_PER_BAR
    if ticks_per_bar % roll.steps_per_bar:
        raise ValueError(
            f"{roll.steps_per_bar} steps per bar does not divide {ticks_per_bar} ticks per bar"
        )
    ticks_per_step = ticks_per_bar // roll.steps_per_bar

    tracks = []
    for instrument in Instrument:
        channel = roll.channel(instrument)
        notes = []
        for p in np.flatnonzero(channel.any(axis=0)):
            for start, length in _runs(channel[:, p]):
                notes.append(NoteEvent(instrument, roll.pitch_base + int(p), start * ticks_per_step,
                                       length * ticks_per_step, SYNTH_VELOCITY))
        notes.sort(key=lambda n: (n.onset, n.pitch))
        tracks.append(tuple(notes))

    return MidiDocument(
        ticks_per_quarter=ticks_per_quarter,
        tempo_map=((0, int(round(60_000_000 / tempo_bpm))),),
        tracks=tuple(tracks),
    )


def subtract_channel(roll: PianoRoll, instrument: Instrument) -> Tuple[PianoRoll, PianoRoll]:
    """Split into (context without the instrument, target with only it)."""
    ch = int(instrument)
    context = roll.data.copy()
    context[ch] = 0
    target = np.zeros_like(roll.data)
    target[ch] = roll.data[ch]
    return roll.with_data(context), roll.with_data(target)


def combine(a: PianoRoll, b: PianoRoll) -> PianoRoll:
    """Cellwise OR; the recombination f(context, target)."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    return a.with_data(np.bitwise_or(a.data, b.data))


def replace_channel(roll: PianoRoll, instrument: Instrument, channel: np.ndarray) -> PianoRoll:
    data = roll.data.copy()
    data[int(instrument)] = np.asarray(channel, dtype=np.uint8)
    return roll.with_data(data)


def note_density(roll: PianoRoll, channel: Instrument) -> float:
    values = roll.channel(channel)
    return float(values.sum()) / float(values.size)


def slice_bars(roll: PianoRoll, start_bar: int, n_bars: int) -> PianoRoll:
    a = start_bar * roll.steps_per_bar
    return roll.with_data(roll.data[:, a:a + n_bars * roll.steps_per_bar])
