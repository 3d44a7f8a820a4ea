"""Audio-audio-text triplets: (full-mix mel, stem-subtracted mel, edit instruction)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app import config
from app.audio.dsp import MelSpec, StftConfig, blur_bands, chunk, mel_spectrogram, mix, shared_gain
from app.audio.wav import Waveform, read_wav_file, resample
from app.data.corpus import StemSession
from app.errors import DatasetError
from app.instruct.templates import EditInstruction, template_instruction

InstructionFn = Callable[[str, Sequence[str], int], EditInstruction]


@dataclass(frozen=True)
class Triplet:
    full: MelSpec
    partial: MelSpec
    instruction: EditInstruction
    subtracted_stem_name: str
    session_id: str
    chunk_index: int
    tags: Tuple[str, ...] = ()
    label: Optional[int] = None

    def __post_init__(self) -> None:
        if self.full.config != self.partial.config:
            raise DatasetError("full and partial spectrograms use different STFT configs")
        object.__setattr__(self, "tags", tuple(self.tags))


def split_session(session: StemSession, target_stem: str, chunk_seconds: float = config.CHUNK_SECONDS,
                  keep_partial: bool = False) -> List[Tuple[Waveform, Waveform]]:
    """Aligned (full mix, stem-subtracted mix) waveform chunks sharing one gain."""
    if target_stem not in session.stems:
        raise DatasetError(
            f"session {session.session_id} has no stem '{target_stem}' (stems: {', '.join(session.stems)})"
        )
    everything = list(session.stems.values())
    rest = [w for name, w in session.stems.items() if name != target_stem]
    gain = shared_gain(everything)
    full = chunk(mix(everything, gain), chunk_seconds, keep_partial)
    partial = chunk(mix(rest, gain), chunk_seconds, keep_partial)
    return list(zip(full, partial))


def build_triplets(session: StemSession, target_stem: str, cfg: StftConfig,
                   chunk_seconds: float = config.CHUNK_SECONDS, seed: int = 0,
                   instruction_fn: Optional[InstructionFn] = None,
                   blur: Optional[Sequence[Tuple[float, float]]] = None,
                   blur_sigma: float = 1.5) -> List[Triplet]:
    """
    One triplet per chunk. Chunks where both mixes are silent are dropped.
    `blur` lists frequency bands (Hz) to smear in the partial spectrogram,
    which hides leftover bleed of the removed stem.
    """
    make = instruction_fn or template_instruction
    if session.sample_rate != cfg.sample_rate:
        session = StemSession(
            session.session_id,
            {k: resample(w, cfg.sample_rate) for k, w in session.stems.items()},
            session.tags,
            session.label,
        )
    out: List[Triplet] = []
    for index, (full_w, partial_w) in enumerate(split_session(session, target_stem, chunk_seconds)):
        if full_w.is_silent() and partial_w.is_silent():
            continue
        # the partial mix is scaled against the full mix peak
        full = mel_spectrogram(full_w, cfg)
        partial = mel_spectrogram(partial_w, cfg, ref_db=full.ref_db)
        if blur:
            partial = blur_bands(partial, blur, blur_sigma)
        out.append(Triplet(
            full=full,
            partial=partial,
            instruction=make(target_stem, session.tags, seed + index),
            subtracted_stem_name=target_stem,
            session_id=session.session_id,
            chunk_index=index,
            tags=session.tags,
            label=session.label,
        ))
    return out


def load_separated_session(directory: str | Path, session_id: Optional[str] = None,
                           tags: Sequence[str] = (), sample_rate: int = config.SAMPLE_RATE) -> StemSession:
    """
    Read one `<stem>.wav` per stem, as written by an offline separator or a
    multitrack dataset. Stems are resampled and zero-padded to the longest.
    """
    directory = Path(directory)
    files = sorted(directory.glob("*.wav"))
    if len(files) < 2:
        raise DatasetError(f"{directory} holds {len(files)} .wav stems; at least 2 are needed")
    waves = {f.stem.lower(): resample(read_wav_file(f), sample_rate) for f in files}
    length = max(len(w) for w in waves.values())
    stems = {
        name: Waveform(np.pad(w.samples, (0, length - len(w))), sample_rate)
        for name, w in waves.items()
    }
    print(f"[Dataset] loaded {len(stems)} stems from {directory}")
    return StemSession(session_id or directory.name, stems, tuple(tags))
