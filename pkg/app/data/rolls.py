"""Fixed-length piano-roll chunks for the symbolic models."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from app.symbolic.roll import bars_for, note_density, slice_bars, to_pianoroll
from app.symbolic.types import DEFAULT_STEPS_PER_BAR, Instrument, MidiDocument, PianoRoll

MIN_TARGET_DENSITY = 0.002


@dataclass(frozen=True)
class RollChunk:
    roll: PianoRoll                 # ground truth, all three channels
    target_instrument: Instrument
    tags: Tuple[str, ...] = ()
    session_id: str = ""
    chunk_index: int = 0
    label: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "target_instrument", Instrument.parse(self.target_instrument))


def build_roll_chunks(doc: MidiDocument, target: Instrument, bars_per_chunk: int = 8,
                      tags: Sequence[str] = (), session_id: str = "", label: Optional[int] = None,
                      steps_per_bar: int = DEFAULT_STEPS_PER_BAR,
                      min_density: float = MIN_TARGET_DENSITY) -> List[RollChunk]:
    """
    Rasterize and cut into `bars_per_chunk` windows. A tail of at least half
    a window is padded and kept; chunks whose target channel is too sparse
    are dropped.
    """
    target = Instrument.parse(target)
    if len(doc.instruments()) < 2:
        return []
    bars = bars_for(doc)
    n_chunks, tail = divmod(bars, bars_per_chunk)
    if 2 * tail >= bars_per_chunk:
        n_chunks += 1
    if n_chunks == 0:
        return []

    roll = to_pianoroll(doc, steps_per_bar, bars=n_chunks * bars_per_chunk)
    out: List[RollChunk] = []
    for i in range(n_chunks):
        piece = slice_bars(roll, i * bars_per_chunk, bars_per_chunk)
        if note_density(piece, target) < min_density:
            continue
        out.append(RollChunk(piece, target, tuple(tags), session_id, i, label))
    return out
