from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Optional, Tuple

import numpy as np

DEFAULT_STEPS_PER_BAR = 16
DEFAULT_PITCH_BASE = 24   # MIDI C1
DEFAULT_PITCHES = 72      # MIDI 24..95 inclusive
BEATS_PER_BAR = 4         # 4/4 only
DEFAULT_TPQ = 480
DEFAULT_TEMPO_US = 500_000  # 120 bpm
GM_PERCUSSION_KEYS = range(35, 82)


class Instrument(IntEnum):
    """Channel order of the piano-roll tensor."""

    DRUMS = 0
    BASS = 1
    GUITAR = 2

    @property
    def stem_name(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | int | Instrument") -> "Instrument":
        if isinstance(value, Instrument):
            return value
        if isinstance(value, int):
            return cls(value)
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            names = ", ".join(i.stem_name for i in cls)
            raise ValueError(f"unknown instrument '{value}' (expected one of: {names})") from None

    def context(self) -> Tuple["Instrument", "Instrument"]:
        """The two other instruments, in channel order."""
        return tuple(i for i in Instrument if i != self)  # type: ignore[return-value]


@dataclass(frozen=True)
class NoteEvent:
    instrument: Instrument
    pitch: int
    onset: int      # ticks
    duration: int   # ticks
    velocity: int = 96

    def __post_init__(self) -> None:
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if self.duration < 1:
            raise ValueError(f"duration must be >= 1 tick, got {self.duration}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 1..127")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True)
class MidiDocument:
    ticks_per_quarter: int = DEFAULT_TPQ
    tempo_map: Tuple[Tuple[int, int], ...] = ((0, DEFAULT_TEMPO_US),)
    tracks: Tuple[Tuple[NoteEvent, ...], ...] = ()
    # note-ons that never met a note-off; dropped while parsing
    unresolved_notes: int = 0

    def __post_init__(self) -> None:
        if self.ticks_per_quarter < 1:
            raise ValueError("ticks_per_quarter must be positive")
        if not self.tempo_map or self.tempo_map[0][0] != 0:
            raise ValueError("tempo map must start at tick 0")
        ticks = [t for t, _ in self.tempo_map]
        if ticks != sorted(ticks):
            raise ValueError("tempo map must be sorted by tick")

    def notes(self, instrument: Optional[Instrument] = None) -> Iterator[NoteEvent]:
        for track in self.tracks:
            for note in track:
                if instrument is None or note.instrument == instrument:
                    yield note

    @property
    def note_count(self) -> int:
        return sum(len(t) for t in self.tracks)

    def instruments(self) -> set:
        return {n.instrument for n in self.notes()}

    @property
    def tempo_bpm(self) -> float:
        return 60_000_000.0 / self.tempo_map[0][1]

    @property
    def ticks_per_bar(self) -> int:
        return self.ticks_per_quarter * BEATS_PER_BAR

    @property
    def end_tick(self) -> int:
        return max((n.end for n in self.notes()), default=0)


@dataclass(frozen=True, eq=False)
class PianoRoll:
    """Binary [instrument x step x pitch] tensor; value object."""

    data: np.ndarray
    steps_per_bar: int = DEFAULT_STEPS_PER_BAR
    pitch_base: int = DEFAULT_PITCH_BASE
    # events discarded while rasterizing (drums outside the pitch window)
    dropped_events: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[0] != len(Instrument):
            raise ValueError(f"piano roll must be [3, T, P], got shape {data.shape}")
        if data.shape[1] == 0 or data.shape[1] % self.steps_per_bar:
            raise ValueError(
                f"time axis {data.shape[1]} is not a positive multiple of {self.steps_per_bar}"
            )
        if not np.isin(data, (0, 1)).all():
            raise ValueError("piano roll cells must be exactly 0 or 1")
        data = data.astype(np.uint8, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def empty(cls, bars: int, steps_per_bar: int = DEFAULT_STEPS_PER_BAR,
              pitch_base: int = DEFAULT_PITCH_BASE, n_pitches: int = DEFAULT_PITCHES) -> "PianoRoll":
        return cls(np.zeros((len(Instrument), bars * steps_per_bar, n_pitches), np.uint8),
                   steps_per_bar, pitch_base)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PianoRoll):
            return NotImplemented
        return (self.steps_per_bar == other.steps_per_bar
                and self.pitch_base == other.pitch_base
                and self.data.shape == other.data.shape
                and bool(np.array_equal(self.data, other.data)))

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def n_pitches(self) -> int:
        return self.data.shape[2]

    @property
    def bars(self) -> int:
        return self.n_steps // self.steps_per_bar

    def channel(self, instrument: Instrument) -> np.ndarray:
        return self.data[int(instrument)]

    def with_data(self, data: np.ndarray) -> "PianoRoll":
        return PianoRoll(data, self.steps_per_bar, self.pitch_base)
