"""
Symbolic path: Standard MIDI Files and 3-channel binary piano rolls.
"""
from app.symbolic.roll import (
    bars_for,
    combine,
    from_pianoroll,
    note_density,
    replace_channel,
    slice_bars,
    subtract_channel,
    to_pianoroll,
)
from app.symbolic.smf import parse_midi, write_midi
from app.symbolic.types import Instrument, MidiDocument, NoteEvent, PianoRoll

__all__ = [
    "Instrument",
    "MidiDocument",
    "NoteEvent",
    "PianoRoll",
    "bars_for",
    "combine",
    "from_pianoroll",
    "note_density",
    "parse_midi",
    "replace_channel",
    "slice_bars",
    "subtract_channel",
    "to_pianoroll",
    "write_midi",
]
