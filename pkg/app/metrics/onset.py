from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from app.symbolic.types import Instrument, PianoRoll


@dataclass(frozen=True)
class OnsetAlignment:
    score: float
    generated_onsets: int
    matched: int
    # no generated onsets at all; score is 0 by convention
    no_onsets: bool = False


def onset_steps(channel: np.ndarray) -> np.ndarray:
    """Bool [T]: some pitch switches 0 -> 1 at this step (a note at step 0 counts)."""
    c = np.asarray(channel, dtype=np.int8)
    prev = np.vstack([np.zeros((1, c.shape[1]), np.int8), c[:-1]])
    return ((c == 1) & (prev == 0)).any(axis=1)


def onset_alignment(roll: PianoRoll, generated: Instrument,
                    context: Instrument | Iterable[Instrument] | None = None,
                    tolerance: int = 1) -> OnsetAlignment:
    """
    Fraction of onsets in the generated channel that fall within
    `tolerance` steps of an onset in the context (by default the union of
    the other two channels). Pitch is ignored.
    """
    generated = Instrument.parse(generated)
    if context is None:
        context = generated.context()
    elif isinstance(context, (Instrument, int, str)):
        context = (Instrument.parse(context),)
    ctx = np.zeros(roll.n_steps, dtype=bool)
    for inst in context:
        ctx |= onset_steps(roll.channel(Instrument.parse(inst)))

    gen = onset_steps(roll.channel(generated))
    n = int(gen.sum())
    if n == 0:
        return OnsetAlignment(0.0, 0, 0, no_onsets=True)
    near = ctx.copy()
    for d in range(1, tolerance + 1):
        near[d:] |= ctx[:-d]
        near[:-d] |= ctx[d:]
    matched = int((gen & near).sum())
    return OnsetAlignment(matched / n, n, matched)
