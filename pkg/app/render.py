"""
Minimal rasterizer for figures: mel spectrogram heatmaps, full/partial/
generated triptychs and piano rolls with the generated part outlined.
Pillow only encodes the pixels.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from app.audio.dsp import MelSpec
from app.symbolic.types import Instrument, PianoRoll

GAP_PX = 4
ROLL_CELL_PX = 4
BACKGROUND = (255, 255, 255)
OUTLINE = (0, 0, 0)
CHANNEL_COLORS = {
    Instrument.DRUMS: (214, 96, 77),
    Instrument.BASS: (67, 147, 195),
    Instrument.GUITAR: (90, 174, 97),
}


def render_mel(spec: MelSpec) -> Image.Image:
    """8-bit grayscale; time on x, mel bin on y with the lowest bin at the bottom."""
    pixels = np.rint(np.flipud(spec.values) * 255.0).astype(np.uint8)
    return Image.fromarray(pixels)


def render_triptych(full: MelSpec, partial: MelSpec, generated: MelSpec) -> Image.Image:
    panels = [render_mel(s) for s in (full, partial, generated)]
    h = max(p.height for p in panels)
    w = sum(p.width for p in panels) + GAP_PX * (len(panels) - 1)
    canvas = Image.new("L", (w, h), 255)
    x = 0
    for p in panels:
        canvas.paste(p, (x, h - p.height))
        x += p.width + GAP_PX
    return canvas


def _note_runs(row: np.ndarray):
    padded = np.concatenate([[0], row.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return zip(edges[::2], edges[1::2])


def render_roll(roll: PianoRoll, generated: Optional[Instrument] = None,
                cell: int = ROLL_CELL_PX) -> Image.Image:
    """
    RGB piano roll, time on x and pitch on y (low pitches at the bottom).
    Each channel has its own color; notes of `generated` get a black outline.
    """
    width, height = roll.n_steps * cell, roll.n_pitches * cell
    img = Image.new("RGB", (width, height), BACKGROUND)
    draw = ImageDraw.Draw(img)

    def box(pitch: int, start: int, stop: int):
        y0 = (roll.n_pitches - 1 - pitch) * cell
        return (start * cell, y0, stop * cell - 1, y0 + cell - 1)

    for inst in Instrument:
        color = CHANNEL_COLORS[inst]
        for pitch in range(roll.n_pitches):
            for start, stop in _note_runs(roll.channel(inst)[:, pitch]):
                draw.rectangle(box(pitch, start, stop), fill=color)
    if generated is not None:
        gen = Instrument.parse(generated)
        for pitch in range(roll.n_pitches):
            for start, stop in _note_runs(roll.channel(gen)[:, pitch]):
                draw.rectangle(box(pitch, start, stop), outline=OUTLINE, width=1)
    return img


def to_png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def write_png(path: str | Path, img: Image.Image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_png_bytes(img))
    return path


def hstack(images: Sequence[Image.Image]) -> Image.Image:
    h = max(i.height for i in images)
    w = sum(i.width for i in images) + GAP_PX * (len(images) - 1)
    canvas = Image.new("RGB", (w, h), BACKGROUND)
    x = 0
    for i in images:
        canvas.paste(i.convert("RGB"), (x, h - i.height))
        x += i.width + GAP_PX
    return canvas
