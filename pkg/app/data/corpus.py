"""
Procedural multi-stem toy corpus.

Each style fixes a one-bar onset grid (steps of a 16-step bar). Every
instrument only ever plays on that grid: drums fill it with two lanes,
guitar strums a chord on every grid step and bass takes a subset that
includes the downbeat. Any generated part that sits on the grid therefore
aligns with its context by construction, which is what the onset-alignment
metric measures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app import config
from app.audio.synth import render_stems
from app.audio.wav import Waveform
from app.errors import DatasetError
from app.symbolic.types import DEFAULT_STEPS_PER_BAR, DEFAULT_TPQ, Instrument, MidiDocument, NoteEvent

TICKS_PER_STEP = DEFAULT_TPQ * 4 // DEFAULT_STEPS_PER_BAR


@dataclass(frozen=True)
class Style:
    name: str
    tempo_bpm: float
    grid: Tuple[int, ...]                       # onset steps within a bar
    drum_lanes: Dict[int, Tuple[int, ...]]      # GM key -> steps (subset of grid)
    bass_steps: Tuple[int, ...]
    progression: Tuple[int, ...]                # chord roots in semitones from the key, one per bar
    minor: bool
    mood: str

    def __post_init__(self) -> None:
        grid = set(self.grid)
        for key, steps in self.drum_lanes.items():
            if not set(steps) <= grid:
                raise ValueError(f"style {self.name}: drum key {key} leaves the onset grid")
        if not set(self.bass_steps) <= grid or 0 not in self.bass_steps:
            raise ValueError(f"style {self.name}: bass must be on the grid and hit the downbeat")

    @property
    def tempo_class(self) -> str:
        if self.tempo_bpm < 100:
            return "slow"
        return "fast" if self.tempo_bpm >= 125 else "medium"


EIGHTHS = (0, 2, 4, 6, 8, 10, 12, 14)

STYLES: Dict[str, Style] = {
    "rock": Style(
        "rock", 120.0, EIGHTHS,
        {42: EIGHTHS, 54: EIGHTHS, 36: (0, 6, 8), 38: (4, 12)},
        (0, 6, 8), (0, 5, 7, 5), False, "energetic",
    ),
    "jazz": Style(
        "jazz", 140.0, (0, 3, 6, 8, 11, 14),
        {51: (0, 3, 6, 8, 11, 14), 69: (0, 3, 6, 8, 11, 14), 44: (6, 14), 35: (0, 8)},
        (0, 6, 8, 14), (2, 7, 0, 9), False, "relaxed",
    ),
    "reggae": Style(
        "reggae", 80.0, (0, 4, 6, 8, 12, 14),
        {42: (0, 4, 6, 8, 12, 14), 70: (0, 4, 6, 8, 12, 14), 36: (8,), 37: (8,), 75: (4, 12)},
        (0, 6, 8, 14), (0, 5, 0, 7), True, "laid-back",
    ),
    "edm": Style(
        "edm", 128.0, EIGHTHS,
        {36: (0, 4, 8, 12), 46: (2, 6, 10, 14), 42: EIGHTHS, 39: (4, 12)},
        (0, 2, 6, 10, 14), (0, 8, 3, 10), True, "driving",
    ),
}


def style_names() -> Tuple[str, ...]:
    return tuple(STYLES)


def style_label(name: str) -> int:
    return list(STYLES).index(name)


@dataclass(frozen=True, eq=False)
class StemSession:
    session_id: str
    stems: Dict[str, Waveform]
    tags: Tuple[str, ...] = ()
    label: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.stems) < 2:
            raise DatasetError(f"session {self.session_id} needs at least 2 stems, has {len(self.stems)}")
        rates = {w.sample_rate for w in self.stems.values()}
        lengths = {len(w) for w in self.stems.values()}
        if len(rates) != 1 or len(lengths) != 1:
            raise DatasetError(f"session {self.session_id}: stems differ in rate or length")

    @property
    def stem_names(self) -> Tuple[str, ...]:
        return tuple(self.stems)

    @property
    def sample_rate(self) -> int:
        return next(iter(self.stems.values())).sample_rate

    @property
    def style(self) -> Optional[str]:
        return next((t for t in self.tags if t in STYLES), None)


@dataclass(frozen=True, eq=False)
class ToyCorpus:
    sessions: List[StemSession]
    documents: List[MidiDocument]
    styles: Tuple[str, ...] = field(default_factory=style_names)


def _chord(root: int, minor: bool) -> Tuple[int, int, int]:
    return (root, root + (3 if minor else 4), root + 7)


def compose(style: Style, bars: int, rng: np.random.Generator) -> MidiDocument:
    """Pattern document for one session; randomness only picks key, voicing and bass notes."""
    key = int(rng.integers(0, 12))
    ticks_per_bar = TICKS_PER_STEP * DEFAULT_STEPS_PER_BAR
    drums: List[NoteEvent] = []
    bass: List[NoteEvent] = []
    guitar: List[NoteEvent] = []

    for bar in range(bars):
        origin = bar * ticks_per_bar
        degree = style.progression[bar % len(style.progression)]
        for drum_key, steps in style.drum_lanes.items():
            for s in steps:
                drums.append(NoteEvent(Instrument.DRUMS, drum_key, origin + s * TICKS_PER_STEP, TICKS_PER_STEP // 2))

        bass_root = 36 + (key + degree) % 12
        for s in style.bass_steps:
            # root on the downbeat, root or fifth elsewhere
            pitch = bass_root if s == 0 or rng.random() < 0.6 else bass_root + 7
            bass.append(NoteEvent(Instrument.BASS, pitch, origin + s * TICKS_PER_STEP, TICKS_PER_STEP))

        chord_root = 52 + (key + degree) % 12
        voicing = _chord(chord_root, style.minor)
        if rng.random() < 0.5:
            voicing = (voicing[1], voicing[2], voicing[0] + 12)  # first inversion
        for s in style.grid:
            for p in voicing:
                guitar.append(NoteEvent(Instrument.GUITAR, p, origin + s * TICKS_PER_STEP, TICKS_PER_STEP))

    return MidiDocument(
        ticks_per_quarter=DEFAULT_TPQ,
        tempo_map=((0, int(round(60_000_000 / style.tempo_bpm))),),
        tracks=(tuple(drums), tuple(bass), tuple(guitar)),
    )


def generate_toy_corpus(seed: int, n_sessions: int, style_set: Sequence[str] | None = None,
                        bars: int = 8, sample_rate: int = config.SAMPLE_RATE) -> ToyCorpus:
    """Deterministic by seed: session i uses an rng seeded with (seed, i)."""
    if n_sessions < 1:
        raise DatasetError(f"n_sessions must be >= 1, got {n_sessions}")
    style_set = tuple(style_set) if style_set else style_names()
    unknown = [s for s in style_set if s not in STYLES]
    if unknown:
        raise DatasetError(f"unknown style(s) {unknown}; available styles: {', '.join(STYLES)}")

    sessions: List[StemSession] = []
    documents: List[MidiDocument] = []
    for i in range(n_sessions):
        style = STYLES[style_set[i % len(style_set)]]
        rng = np.random.default_rng([seed, i])
        doc = compose(style, bars, rng)
        seconds = bars * 4 * 60.0 / style.tempo_bpm
        n_samples = int(math.ceil(seconds * sample_rate))
        stems = render_stems(doc, n_samples, sample_rate, rng)
        sessions.append(StemSession(
            session_id=f"toy{seed}-{i:04d}",
            stems=stems,
            tags=(style.name, style.mood, style.tempo_class),
            label=style_label(style.name),
        ))
        documents.append(doc)
    print(f"[Corpus] generated {n_sessions} sessions over styles {', '.join(style_set)} (seed {seed})")
    return ToyCorpus(sessions, documents, style_set)
