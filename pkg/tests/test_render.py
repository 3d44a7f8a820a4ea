import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.audio.dsp import MelSpec, StftConfig
from app.render import (
    CHANNEL_COLORS,
    GAP_PX,
    OUTLINE,
    ROLL_CELL_PX,
    hstack,
    render_mel,
    render_roll,
    render_triptych,
    to_png_bytes,
    write_png,
)
from app.symbolic.types import Instrument, PianoRoll


def ramp_spec() -> MelSpec:
    cfg = StftConfig()
    values = np.repeat(np.linspace(0, 1, cfg.n_mels)[:, None], cfg.target_frames, axis=1)
    return MelSpec(values, cfg)


class MelRenderTests(unittest.TestCase):
    def test_low_bins_at_bottom(self):
        img = render_mel(ramp_spec())
        self.assertEqual(img.size, (256, 64))
        self.assertEqual(img.mode, "L")
        pixels = np.asarray(img)
        self.assertEqual(pixels[-1, 0], 0)
        self.assertEqual(pixels[0, 0], 255)

    def test_png_bytes_are_deterministic(self):
        spec = ramp_spec()
        self.assertEqual(to_png_bytes(render_mel(spec)), to_png_bytes(render_mel(spec)))
        self.assertTrue(to_png_bytes(render_mel(spec)).startswith(b"\x89PNG"))

    def test_triptych_layout(self):
        spec = ramp_spec()
        img = render_triptych(spec, spec, spec)
        self.assertEqual(img.size, (3 * 256 + 2 * GAP_PX, 64))
        self.assertEqual(np.asarray(img)[10, 256], 255)


class RollRenderTests(unittest.TestCase):
    def _roll(self):
        data = np.zeros((3, 16, 72), np.uint8)
        data[Instrument.BASS, 4:8, 10] = 1
        data[Instrument.DRUMS, 0, 30] = 1
        return PianoRoll(data)

    def test_channel_colors(self):
        img = render_roll(self._roll())
        self.assertEqual(img.size, (16 * ROLL_CELL_PX, 72 * ROLL_CELL_PX))
        pixels = np.asarray(img)
        y = (72 - 1 - 10) * ROLL_CELL_PX + 1
        self.assertEqual(tuple(pixels[y, 5 * ROLL_CELL_PX]), CHANNEL_COLORS[Instrument.BASS])
        self.assertEqual(tuple(pixels[0, 0]), (255, 255, 255))

    def test_generated_part_is_outlined(self):
        plain = np.asarray(render_roll(self._roll()))
        outlined = np.asarray(render_roll(self._roll(), generated=Instrument.BASS))
        y0 = (72 - 1 - 10) * ROLL_CELL_PX
        self.assertEqual(tuple(outlined[y0, 4 * ROLL_CELL_PX]), OUTLINE)
        self.assertNotEqual(tuple(plain[y0, 4 * ROLL_CELL_PX]), OUTLINE)
        # drums are not outlined
        dy = (72 - 1 - 30) * ROLL_CELL_PX
        self.assertEqual(tuple(outlined[dy, 0]), CHANNEL_COLORS[Instrument.DRUMS])

    def test_write_png_and_hstack(self):
        img = hstack([render_mel(ramp_spec()), render_roll(self._roll())])
        self.assertEqual(img.mode, "RGB")
        self.assertEqual(img.width, 256 + GAP_PX + 16 * ROLL_CELL_PX)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_png(Path(tmp) / "nested" / "fig.png", img)
            self.assertTrue(path.read_bytes().startswith(b"\x89PNG"))


if __name__ == "__main__":
    unittest.main()
