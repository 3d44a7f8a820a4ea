import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.audio.dsp import MelSpec, StftConfig
from app.errors import CheckpointError, MetricError
from app.metrics import (
    Embedder,
    EmbedderConfig,
    EmbedderTrainConfig,
    GaussianMoments,
    evaluate_pairs,
    extract_features,
    frechet_distance,
    inception_score_from_posteriors,
    kl_divergence,
    load_embedder,
    moments,
    onset_alignment,
    onset_steps,
    posteriors,
    save_embedder,
    train_embedder,
)
from app.symbolic.types import Instrument, PianoRoll


def gaussian(mu, sigma) -> GaussianMoments:
    return GaussianMoments(np.asarray(mu, float), np.asarray(sigma, float))


def random_specs(n, seed=0):
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    return [MelSpec(rng.uniform(0, 1, cfg.shape), cfg) for _ in range(n)]


class FrechetTests(unittest.TestCase):
    def test_shifted_mean(self):
        self.assertAlmostEqual(frechet_distance(gaussian([0], [[1]]), gaussian([1], [[1]])), 1.0, delta=1e-9)

    def test_scaled_variance(self):
        self.assertAlmostEqual(frechet_distance(gaussian([0], [[1]]), gaussian([0], [[4]])), 1.0, delta=1e-9)

    def test_commuting_diagonal(self):
        a = gaussian([0, 0], np.diag([1.0, 4.0]))
        b = gaussian([0, 0], np.diag([9.0, 16.0]))
        # (1 - 3)^2 + (2 - 4)^2
        self.assertAlmostEqual(frechet_distance(a, b), 8.0, delta=1e-9)

    def test_self_distance_and_symmetry(self):
        rng = np.random.default_rng(0)
        a = moments(rng.normal(size=(200, 5)))
        b = moments(rng.normal(1.0, 2.0, size=(200, 5)))
        self.assertAlmostEqual(frechet_distance(a, a), 0.0, delta=1e-9)
        self.assertAlmostEqual(frechet_distance(a, b), frechet_distance(b, a), delta=1e-8)
        self.assertGreater(frechet_distance(a, b), 0.0)

    def test_moments_match_two_pass(self):
        x = np.random.default_rng(1).normal(size=(50, 3))
        mean = x.sum(axis=0) / 50
        centered = x - mean
        cov = centered.T @ centered / 49
        m = moments(x)
        np.testing.assert_allclose(m.mu, mean, atol=1e-12)
        np.testing.assert_allclose(m.sigma, cov, atol=1e-12)

    def test_errors(self):
        with self.assertRaises(MetricError):
            moments(np.zeros((1, 3)))
        with self.assertRaises(MetricError):
            frechet_distance(gaussian([0], [[1]]), gaussian([0, 0], np.eye(2)))
        with self.assertRaises(MetricError):
            frechet_distance(gaussian([0, 0], [[1, 0.5], [0, 1]]), gaussian([0, 0], np.eye(2)))
        with self.assertRaises(MetricError):
            gaussian([0, 0], np.eye(3))


class DivergenceTests(unittest.TestCase):
    def test_kl_hand_case(self):
        kl = kl_divergence([0.5, 0.5], [0.25, 0.75], smoothing=0.0)
        self.assertAlmostEqual(kl, 0.5 * math.log(2) + 0.5 * math.log(2 / 3), places=12)
        self.assertAlmostEqual(kl, 0.1438, places=4)

    def test_kl_smoothing_keeps_zeros_finite(self):
        kl = kl_divergence([1.0, 0.0], [0.0, 1.0])
        self.assertTrue(math.isfinite(kl))
        self.assertGreater(kl, 10.0)
        self.assertEqual(kl_divergence([0.3, 0.7], [0.3, 0.7]), 0.0)

    def test_inception_score_bounds(self):
        same = np.tile([0.2, 0.3, 0.5], (6, 1))
        self.assertAlmostEqual(inception_score_from_posteriors(same), 1.0, places=12)
        self.assertAlmostEqual(inception_score_from_posteriors(np.eye(4)), 4.0, places=12)
        with self.assertRaises(MetricError):
            inception_score_from_posteriors([[1.0, 0.0]])


class OnsetTests(unittest.TestCase):
    def _roll(self):
        data = np.zeros((3, 16, 72), np.uint8)
        data[Instrument.BASS, 0:4, 10] = 1       # one held note, one onset
        data[Instrument.BASS, 4, 12] = 1
        data[Instrument.DRUMS, 0, 12] = 1
        data[Instrument.DRUMS, 5, 14] = 1
        return PianoRoll(data)

    def test_onset_steps(self):
        steps = onset_steps(self._roll().channel(Instrument.BASS))
        self.assertEqual(list(np.flatnonzero(steps)), [0, 4])

    def test_alignment_with_tolerance(self):
        result = onset_alignment(self._roll(), Instrument.BASS)
        self.assertEqual((result.generated_onsets, result.matched), (2, 2))
        self.assertEqual(result.score, 1.0)
        strict = onset_alignment(self._roll(), "bass", tolerance=0)
        self.assertEqual(strict.score, 0.5)

    def test_explicit_context(self):
        result = onset_alignment(self._roll(), Instrument.BASS, context=Instrument.GUITAR)
        self.assertEqual(result.score, 0.0)
        self.assertFalse(result.no_onsets)

    def test_no_generated_onsets(self):
        result = onset_alignment(self._roll(), Instrument.GUITAR)
        self.assertTrue(result.no_onsets)
        self.assertEqual(result.score, 0.0)


class EmbedderTests(unittest.TestCase):
    def test_initialization_is_seeded(self):
        a = Embedder(EmbedderConfig.preset("fd"))
        b = Embedder(EmbedderConfig.preset("fd"))
        c = Embedder(EmbedderConfig.preset("fad"))
        self.assertEqual(a.identifier, b.identifier)
        self.assertNotEqual(a.identifier, c.identifier)
        self.assertTrue(a.identifier.startswith("fd:"))

    def test_features_and_posteriors(self):
        emb = Embedder(EmbedderConfig.preset("fad"))
        specs = random_specs(3)
        feats = extract_features(emb, specs, batch_size=2)
        self.assertEqual(feats.shape, (3, 32))
        p = posteriors(emb, specs)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(extract_features(emb, specs), feats, atol=1e-6)

    def test_unknown_preset(self):
        with self.assertRaises(ValueError):
            EmbedderConfig.preset("clap")

    def test_train_save_load(self):
        specs = random_specs(8, seed=2)
        labels = [0, 1] * 4
        result = train_embedder(specs, labels, EmbedderConfig.preset("fd"),
                                EmbedderTrainConfig(epochs=2, batch_size=4), show_progress=False)
        self.assertEqual(result.embedder.cfg.n_classes, 2)
        self.assertTrue(0.0 <= result.holdout_accuracy <= 1.0)
        self.assertTrue(math.isfinite(result.final_loss))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_embedder(Path(tmp) / "fd.stwd", result.embedder)
            loaded = load_embedder(path)
        self.assertEqual(loaded.identifier, result.embedder.identifier)

    def test_single_class_rejected(self):
        with self.assertRaises(MetricError):
            train_embedder(random_specs(2), [1, 1], show_progress=False)

    def test_missing_checkpoint_is_actionable(self):
        with self.assertRaises(CheckpointError) as cm:
            load_embedder("/nonexistent/fd.stwd")
        self.assertIn("train-embedder", str(cm.exception))


class EvaluateTests(unittest.TestCase):
    def setUp(self):
        self.fd = Embedder(EmbedderConfig.preset("fd"))
        self.fad = Embedder(EmbedderConfig.preset("fad"))

    def test_identical_sets(self):
        specs = random_specs(4, seed=3)
        report = evaluate_pairs(specs, specs, self.fd, self.fad, config_hash="h", extra={"onset": 0.9})
        self.assertAlmostEqual(report.fd, 0.0, delta=1e-6)
        self.assertAlmostEqual(report.fad, 0.0, delta=1e-6)
        self.assertEqual(report.kld, 0.0)
        self.assertGreaterEqual(report.isc, 1.0 - 1e-12)
        out = report.to_dict()
        self.assertEqual(out["onset"], 0.9)
        self.assertEqual(out["n"], 4)
        self.assertEqual(out["embedder_ids"]["fd"], self.fd.identifier)
        self.assertNotIn("extra", out)

    def test_different_sets_score_worse(self):
        a, b = random_specs(4, seed=4), [MelSpec(s.values * 0.2, s.config) for s in random_specs(4, seed=5)]
        report = evaluate_pairs(a, b, self.fd, self.fad)
        self.assertGreater(report.fd, 0.0)
        self.assertGreater(report.kld, 0.0)

    def test_count_checks(self):
        specs = random_specs(3)
        with self.assertRaises(MetricError):
            evaluate_pairs(specs, specs[:2], self.fd, self.fad)
        with self.assertRaises(MetricError):
            evaluate_pairs(specs[:1], specs[:1], self.fd, self.fad)


if __name__ == "__main__":
    unittest.main()
