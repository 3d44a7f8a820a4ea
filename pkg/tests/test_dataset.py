import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.audio.dsp import StftConfig, chunk
from app.audio.wav import Waveform, write_wav_file
from app.data.corpus import STYLES, TICKS_PER_STEP, StemSession, compose, generate_toy_corpus
from app.data.manifest import (
    MANIFEST_NAME,
    assign_splits,
    check_split_hygiene,
    read_manifest,
    select,
    write_manifest,
)
from app.data.rolls import build_roll_chunks
from app.data.triplets import build_triplets, load_separated_session, split_session
from app.errors import DatasetError, ManifestError
from app.symbolic.types import Instrument, MidiDocument

SR = 22050


def noise_session(seconds=12.0, session_id="s0", seed=0, tags=("rock",)) -> StemSession:
    rng = np.random.default_rng(seed)
    n = int(seconds * SR)
    stems = {name: Waveform(rng.uniform(-0.3, 0.3, n), SR) for name in ("drums", "bass", "guitar")}
    return StemSession(session_id, stems, tags, label=0)


class CorpusTests(unittest.TestCase):
    def test_same_seed_same_corpus(self):
        a = generate_toy_corpus(3, 2, ["rock", "jazz"], bars=1, sample_rate=8000)
        b = generate_toy_corpus(3, 2, ["rock", "jazz"], bars=1, sample_rate=8000)
        self.assertEqual(a.documents, b.documents)
        for sa, sb in zip(a.sessions, b.sessions):
            self.assertEqual(sa.session_id, sb.session_id)
            for name in sa.stems:
                self.assertEqual(sa.stems[name], sb.stems[name])

    def test_every_stem_is_audible(self):
        corpus = generate_toy_corpus(0, 4, bars=1, sample_rate=8000)
        for session in corpus.sessions:
            self.assertEqual(set(session.stems), {"drums", "bass", "guitar"})
            for wave in session.stems.values():
                self.assertFalse(wave.is_silent())
            self.assertIn(session.style, STYLES)

    def test_unknown_style(self):
        with self.assertRaises(DatasetError) as cm:
            generate_toy_corpus(0, 1, ["polka"])
        self.assertIn("rock", str(cm.exception))

    def test_rock_notes_stay_on_grid(self):
        style = STYLES["rock"]
        doc = compose(style, 4, np.random.default_rng(1))
        ticks_per_bar = TICKS_PER_STEP * 16
        for note in doc.notes():
            self.assertEqual(note.onset % TICKS_PER_STEP, 0)
            self.assertIn((note.onset % ticks_per_bar) // TICKS_PER_STEP, style.grid)

    def test_session_needs_matching_stems(self):
        with self.assertRaises(DatasetError):
            StemSession("x", {"drums": Waveform(np.zeros(10), SR)})
        with self.assertRaises(DatasetError):
            StemSession("x", {"drums": Waveform(np.zeros(10), SR), "bass": Waveform(np.zeros(11), SR)})


class TripletTests(unittest.TestCase):
    def test_subtraction_identity(self):
        session = noise_session(seconds=6.0)
        pairs = split_session(session, "bass", chunk_seconds=3.0)
        self.assertEqual(len(pairs), 2)
        gain = 1.0 / max(1.0, np.abs(sum(w.samples for w in session.stems.values())).max())
        bass = chunk(session.stems["bass"], 3.0)
        for (full, partial), stem in zip(pairs, bass):
            np.testing.assert_allclose(full.samples - partial.samples, stem.samples * gain, atol=1e-12)

    def test_twelve_seconds_gives_two_triplets(self):
        triplets = build_triplets(noise_session(), "guitar", StftConfig(), chunk_seconds=5.0)
        self.assertEqual(len(triplets), 2)
        for i, t in enumerate(triplets):
            self.assertEqual(t.chunk_index, i)
            self.assertEqual(t.subtracted_stem_name, "guitar")
            self.assertEqual(t.full.values.shape, (64, 256))
            self.assertEqual(t.instruction.target_stem, "guitar")
            self.assertIn("rock", t.instruction.text)

    def test_missing_stem(self):
        with self.assertRaises(DatasetError):
            build_triplets(noise_session(), "vocals", StftConfig())

    def test_load_separated_session_pads_to_longest(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_wav_file(Path(tmp) / "Drums.wav", Waveform(np.full(1000, 0.25), SR))
            write_wav_file(Path(tmp) / "bass.wav", Waveform(np.full(600, 0.25), SR))
            session = load_separated_session(tmp, "sep", ("rock",), sample_rate=SR)
        self.assertEqual(set(session.stems), {"drums", "bass"})
        self.assertEqual(len(session.stems["bass"]), 1000)
        self.assertEqual(session.stems["bass"].samples[999], 0.0)
        self.assertEqual(session.tags, ("rock",))

    def test_load_separated_session_needs_two_stems(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_wav_file(Path(tmp) / "drums.wav", Waveform(np.zeros(100), SR))
            with self.assertRaises(DatasetError):
                load_separated_session(tmp)


class RollChunkTests(unittest.TestCase):
    def test_chunk_counts(self):
        rng = np.random.default_rng(2)
        eight = compose(STYLES["rock"], 8, rng)
        sixteen = compose(STYLES["rock"], 16, rng)
        self.assertEqual(len(build_roll_chunks(eight, Instrument.BASS, 8)), 1)
        chunks = build_roll_chunks(sixteen, Instrument.BASS, 8, tags=("rock",), session_id="s")
        self.assertEqual([c.chunk_index for c in chunks], [0, 1])
        self.assertEqual(chunks[0].roll.data.shape, (3, 128, 72))

    def test_empty_target_gives_nothing(self):
        doc = compose(STYLES["rock"], 8, np.random.default_rng(3))
        no_drums = MidiDocument(doc.ticks_per_quarter, doc.tempo_map, ((),) + doc.tracks[1:])
        self.assertEqual(build_roll_chunks(no_drums, Instrument.DRUMS, 8), [])


class ManifestTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _items(self):
        triplets = build_triplets(noise_session(seconds=5.0, session_id="a"), "bass", StftConfig(), 5.0)
        doc = compose(STYLES["jazz"], 8, np.random.default_rng(4))
        rolls = build_roll_chunks(doc, Instrument.GUITAR, 8, ("jazz",), "b", label=1)
        return triplets + rolls

    def test_round_trip(self):
        items = self._items()
        write_manifest(items, self.root, {"a": "train", "b": "test"})
        entries = read_manifest(self.root)
        self.assertEqual(len(entries), len(items))

        triplet = select(entries, "triplet", "train", "bass")[0]
        self.assertEqual(triplet.full, items[0].full)
        self.assertEqual(triplet.partial, items[0].partial)
        self.assertEqual(triplet.instruction.text, items[0].instruction.text)

        roll = select(entries, "roll", "test")[0]
        self.assertEqual(roll.roll, items[1].roll)
        self.assertEqual(roll.target_instrument, Instrument.GUITAR)
        self.assertEqual(roll.label, 1)
        self.assertEqual(select(entries, "roll", "train"), [])

    def test_corrupt_line_is_reported(self):
        write_manifest(self._items(), self.root, {"a": "train", "b": "test"})
        path = self.root / MANIFEST_NAME
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[1] = "{not json"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with self.assertRaises(ManifestError) as cm:
            read_manifest(self.root)
        self.assertEqual(cm.exception.line, 2)
        self.assertIn("line 2", str(cm.exception))

    def test_missing_tensor_file(self):
        write_manifest(self._items(), self.root, {"a": "train", "b": "test"})
        rec = json.loads((self.root / MANIFEST_NAME).read_text(encoding="utf-8").splitlines()[0])
        (self.root / rec["paths"]["tensors"]).unlink()
        with self.assertRaises(ManifestError) as cm:
            read_manifest(self.root)
        self.assertEqual(cm.exception.line, 1)

    def test_missing_manifest(self):
        with self.assertRaises(ManifestError):
            read_manifest(self.root)

    def test_unassigned_session(self):
        with self.assertRaises(ManifestError):
            write_manifest(self._items(), self.root, {"a": "train"})


class SplitTests(unittest.TestCase):
    def test_sessions_never_straddle(self):
        ids = [f"s{i}" for i in range(20)]
        splits = assign_splits(ids, 0.25, seed=1)
        self.assertEqual(splits, assign_splits(reversed(ids), 0.25, seed=1))
        self.assertEqual(sum(v == "test" for v in splits.values()), 5)
        self.assertEqual(set(splits), set(ids))

    def test_small_sets_keep_both_sides(self):
        splits = assign_splits(["a", "b"], 0.1)
        self.assertEqual(sorted(splits.values()), ["test", "train"])

    def test_hygiene_violation(self):
        records = [{"session_id": "a", "split": "train"}, {"session_id": "a", "split": "test"}]
        with self.assertRaises(ManifestError):
            check_split_hygiene(records)


if __name__ == "__main__":
    unittest.main()
