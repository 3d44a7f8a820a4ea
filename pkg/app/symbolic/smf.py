"""
Standard MIDI File reader/writer (formats 0 and 1) on top of mido.

A short layout pass walks the header and chunk boundaries first so that
structural damage is reported with a byte offset; event decoding is left to
mido and any failure in it is re-raised as MidiParseError.
"""
from __future__ import annotations

import io
from collections import defaultdict, deque
from typing import Deque, Dict, List, Tuple

import mido
from mido.midifiles.meta import KeySignatureError

from app.errors import MidiParseError
from app.symbolic.types import (
    DEFAULT_TEMPO_US,
    DEFAULT_TPQ,
    Instrument,
    MidiDocument,
    NoteEvent,
)

DRUM_CHANNEL = 9  # "channel 10" in 1-based numbering
BASS_PROGRAMS = range(32, 40)

# channel / program used when writing each instrument track
_WRITE_LAYOUT = {
    Instrument.DRUMS: (DRUM_CHANNEL, 0),
    Instrument.BASS: (0, 33),     # electric bass (finger)
    Instrument.GUITAR: (1, 29),   # overdriven guitar
}

# what mido raises on damaged event data
_DECODE_ERRORS = (OSError, EOFError, KeyError, IndexError, ValueError, TypeError, KeySignatureError)


def instrument_for(channel: int, program: int) -> Instrument:
    if channel == DRUM_CHANNEL:
        return Instrument.DRUMS
    if program in BASS_PROGRAMS:
        return Instrument.BASS
    return Instrument.GUITAR


def _u16(data: bytes, pos: int) -> int:
    return int.from_bytes(data[pos:pos + 2], "big")


def _u32(data: bytes, pos: int) -> int:
    return int.from_bytes(data[pos:pos + 4], "big")


def _check_layout(data: bytes) -> int:
    """Validate the header and chunk boundaries; returns the division."""
    if len(data) < 8:
        raise MidiParseError("unexpected end of data while reading the header chunk", len(data))
    if data[:4] != b"MThd":
        raise MidiParseError("missing 'MThd' header chunk", 0)
    header_len = _u32(data, 4)
    if header_len < 6:
        raise MidiParseError(f"header chunk length {header_len} is shorter than 6", 4)
    if len(data) < 8 + header_len:
        raise MidiParseError("unexpected end of data while reading the header chunk", len(data))

    fmt, ntrks, division = _u16(data, 8), _u16(data, 10), _u16(data, 12)
    if fmt == 2:
        raise MidiParseError("SMF format 2 (independent sequences) is not supported", 8)
    if fmt > 2:
        raise MidiParseError(f"unknown SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("time division of 0 ticks per quarter", 12)

    pos = 8 + header_len
    found = 0
    while found < ntrks and pos < len(data):
        if pos + 8 > len(data):
            raise MidiParseError("unexpected end of data while reading a chunk header", pos)
        length = _u32(data, pos + 4)
        left = len(data) - pos - 8
        if length > left:
            raise MidiParseError(f"chunk length {length} exceeds the {left} bytes left", pos + 4)
        if data[pos:pos + 4] != b"MTrk":
            raise MidiParseError(f"unexpected chunk id {data[pos:pos + 4]!r}", pos)
        found += 1
        pos += 8 + length
    if found < ntrks:
        raise MidiParseError(f"header announces {ntrks} tracks but only {found} found", pos)
    return division


def parse_midi(data: bytes) -> MidiDocument:
    """Parse an SMF byte stream into a MidiDocument."""
    data = bytes(data)
    division = _check_layout(data)
    try:
        midi = mido.MidiFile(file=io.BytesIO(data))
    except _DECODE_ERRORS as exc:
        raise MidiParseError(f"malformed MIDI data: {exc}") from exc

    programs: Dict[int, int] = defaultdict(int)
    tempo: Dict[int, int] = {}
    tracks: List[Tuple[NoteEvent, ...]] = []
    unresolved = 0
    for track in midi.tracks:
        notes, dropped = _collect_notes(track, programs, tempo)
        unresolved += dropped
        tracks.append(tuple(sorted(notes, key=lambda n: (n.onset, n.instrument, n.pitch))))

    tempo.setdefault(0, DEFAULT_TEMPO_US)
    return MidiDocument(
        ticks_per_quarter=division,
        tempo_map=tuple(sorted(tempo.items())),
        tracks=tuple(tracks),
        unresolved_notes=unresolved,
    )


def _collect_notes(track: mido.MidiTrack, programs: Dict[int, int],
                   tempo: Dict[int, int]) -> Tuple[List[NoteEvent], int]:
    tick = 0
    open_notes: Dict[Tuple[int, int], Deque[Tuple[int, int, Instrument]]] = defaultdict(deque)
    notes: List[NoteEvent] = []

    for msg in track:
        tick += msg.time
        if msg.type == "end_of_track":
            break
        if msg.type == "set_tempo":
            tempo[tick] = msg.tempo or DEFAULT_TEMPO_US
        elif msg.type == "program_change":
            programs[msg.channel] = msg.program
        elif msg.type == "note_on" and msg.velocity > 0:
            instrument = instrument_for(msg.channel, programs[msg.channel])
            open_notes[(msg.channel, msg.note)].append((tick, msg.velocity, instrument))
        elif msg.type in ("note_on", "note_off"):
            pending = open_notes.get((msg.channel, msg.note))
            if pending:
                onset, velocity, instrument = pending.popleft()
                notes.append(NoteEvent(instrument, msg.note, onset, max(1, tick - onset), velocity))

    dropped = sum(len(q) for q in open_notes.values())
    return notes, dropped


def write_midi(doc: MidiDocument, ticks_per_quarter: int = DEFAULT_TPQ) -> bytes:
    """Emit format 1: a conductor track with the tempo map, then one track per instrument."""

    def scale(tick: int) -> int:
        if doc.ticks_per_quarter == ticks_per_quarter:
            return tick
        return int(round(tick * ticks_per_quarter / doc.ticks_per_quarter))

    midi = mido.MidiFile(type=1, ticks_per_beat=ticks_per_quarter)
    midi.tracks.append(_conductor_track([(scale(t), us) for t, us in doc.tempo_map]))
    for instrument in Instrument:
        midi.tracks.append(_instrument_track(instrument, list(doc.notes(instrument)), scale))

    buf = io.BytesIO()
    midi.save(file=buf)
    return buf.getvalue()


def _to_track(events: List[Tuple[int, int, mido.Message]]) -> mido.MidiTrack:
    # (tick, order, message); order puts note-offs before note-ons on a shared tick
    track = mido.MidiTrack()
    last = 0
    for tick, _, msg in sorted(events, key=lambda e: (e[0], e[1])):
        track.append(msg.copy(time=tick - last))
        last = tick
    track.append(mido.MetaMessage("end_of_track", time=0))
    return track


def _conductor_track(tempo_map: List[Tuple[int, int]]) -> mido.MidiTrack:
    return _to_track([(tick, 0, mido.MetaMessage("set_tempo", tempo=us)) for tick, us in tempo_map])


def _instrument_track(instrument: Instrument, notes: List[NoteEvent], scale) -> mido.MidiTrack:
    channel, program = _WRITE_LAYOUT[instrument]
    events = [(0, 0, mido.MetaMessage("track_name", name=instrument.stem_name))]
    if instrument != Instrument.DRUMS:
        events.append((0, 1, mido.Message("program_change", channel=channel, program=program)))
    for note in notes:
        on = scale(note.onset)
        off = max(on + 1, scale(note.end))
        events.append((on, 3, mido.Message("note_on", channel=channel, note=note.pitch,
                                           velocity=note.velocity)))
        events.append((off, 2, mido.Message("note_off", channel=channel, note=note.pitch,
                                            velocity=64)))
    return _to_track(events)
