import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from app import tensorio
from app.audio.dsp import MelSpec, StftConfig
from app.data.rolls import RollChunk
from app.data.triplets import Triplet
from app.diffusion.binary import RejectionConfig, binary_forward, binary_loss, binary_sample, binary_train_step
from app.diffusion.checkpoint import load_checkpoint, restore_optimizer, save_model
from app.diffusion.gradcheck import check_gradients, randomize_
from app.diffusion.model import DenoiserModel, ModelConfig
from app.diffusion.sample import (
    SamplerConfig,
    predict,
    sample_insert,
    sample_sdedit,
    sdedit_start,
)
from app.diffusion.schedule import DiffusionSchedule, forward_noise
from app.diffusion.train import (
    TrainConfig,
    TrainState,
    apply_update,
    gaussian_loss,
    lr_at,
    optimizer_hparams,
    train_loop,
    train_step,
)
from app.errors import CheckpointError, NonFiniteLossError, RejectionExhaustedError, StemDiffError
from app.instruct.templates import template_instruction
from app.symbolic.types import Instrument, PianoRoll

MINI = dict(widths=(2, 2, 4), embed_dim=4, vocab_size=8, time_features=4)


def mini_model(kind="spectrogram") -> DenoiserModel:
    torch.manual_seed(0)
    cfg = ModelConfig.spectrogram(**MINI) if kind == "spectrogram" else ModelConfig.pianoroll(**MINI)
    return DenoiserModel(cfg, verbose=False)


def triplets(n=4, seed=0):
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        full = MelSpec(rng.uniform(0, 1, cfg.shape), cfg)
        partial = MelSpec(full.values * 0.5, cfg)
        out.append(Triplet(full, partial, template_instruction("bass", ("rock",), i), "bass", f"s{i}", 0))
    return out


def roll_chunks(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return [
        RollChunk(PianoRoll((rng.random((3, 16, 72)) < 0.1).astype(np.uint8)), Instrument.BASS, ("rock",), f"s{i}")
        for i in range(n)
    ]


class ScheduleTests(unittest.TestCase):
    def setUp(self):
        self.schedule = DiffusionSchedule()

    def test_tables(self):
        s = self.schedule
        self.assertEqual(s.alpha_bar.shape, (1000,))
        self.assertTrue(np.all(np.diff(s.alpha_bar) < 0))
        self.assertAlmostEqual(s.alpha_bar[0], 1 - 1e-4)
        self.assertAlmostEqual(s.flip[0], 0.5 * (1 - math.sqrt(1 - 1e-4)))
        self.assertLess(abs(s.flip[-1] - 0.5), 0.01)
        with self.assertRaises(ValueError):
            DiffusionSchedule(T=1)

    def test_gaussian_forward_moments(self):
        g = torch.Generator().manual_seed(0)
        x0 = torch.full((200_000,), 0.7, dtype=torch.float64)
        for t in (0, 250, 999):
            eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
            x_t = forward_noise(self.schedule, x0, t, eps)
            ab = self.schedule.alpha_bar[t]
            self.assertAlmostEqual(float(x_t.mean()), 0.7 * math.sqrt(ab), delta=0.01)
            self.assertAlmostEqual(float(x_t.var()), 1 - ab, delta=0.01)

    def test_binary_forward_flip_rate(self):
        g = torch.Generator().manual_seed(1)
        x0 = torch.zeros(1, 1, 200, 1000)
        for t in (10, 300, 999):
            x_t = binary_forward(self.schedule, x0, t, g)
            self.assertAlmostEqual(float(x_t.mean()), self.schedule.flip[t], delta=0.005)
            self.assertTrue(torch.all((x_t == 0) | (x_t == 1)))

    def test_timestep_out_of_range(self):
        with self.assertRaises(ValueError):
            forward_noise(self.schedule, torch.zeros(2), 1000, torch.zeros(2))

    def test_timesteps(self):
        ts = self.schedule.timesteps(20)
        self.assertEqual(len(ts), 20)
        self.assertEqual((ts[0], ts[-1]), (999, 0))
        self.assertTrue(np.all(np.diff(ts) < 0))
        self.assertEqual(list(self.schedule.timesteps(1, start=499)), [499])


class ModelTests(unittest.TestCase):
    def test_initial_gaussian_loss_is_noise_variance(self):
        model = mini_model()
        g = torch.Generator().manual_seed(2)
        full = torch.rand(8, 1, 32, 32, generator=g) * 2 - 1
        eps = torch.randn(full.shape, generator=g)
        t = torch.randint(0, 1000, (8,), generator=g)
        loss = gaussian_loss(model, full, full * 0.5, model.embed_texts(["Add bass"] * 8), t, eps,
                             DiffusionSchedule())
        self.assertAlmostEqual(float(loss), float((eps ** 2).mean()), places=6)
        self.assertAlmostEqual(float(loss), 1.0, delta=0.1)

    def test_initial_binary_loss_is_ln2(self):
        model = mini_model("pianoroll")
        target = (torch.rand(2, 1, 16, 72) < 0.2).float()
        loss = binary_loss(model, target, torch.zeros(2, 2, 16, 72), model.embed_texts(["", ""]),
                           torch.tensor([5, 500]), target)
        self.assertAlmostEqual(float(loss), math.log(2.0), places=6)

    def test_bad_input_shape(self):
        model = mini_model()
        with self.assertRaises(ValueError):
            model(torch.zeros(1, 3, 16, 16), torch.tensor([0]), torch.zeros(1, 4))
        with self.assertRaises(ValueError):
            model(torch.zeros(1, 2, 18, 16), torch.tensor([0]), torch.zeros(1, 4))

    def test_gradients_match_finite_differences(self):
        model = randomize_(mini_model().double(), std=0.3, seed=1)
        g = torch.Generator().manual_seed(3)
        full = torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
        context = torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
        eps = torch.randn(full.shape, generator=g, dtype=torch.float64)
        t = torch.tensor([10, 700])
        schedule = DiffusionSchedule()

        def loss_fn():
            cond = model.embed_texts(["Add rock bass", "Insert drums"])
            return gaussian_loss(model, full, context, cond, t, eps, schedule)

        result = check_gradients(loss_fn, model, sample_fraction=0.1, h=1e-5)
        self.assertGreater(result.checked, 0)
        self.assertGreater(result.analytic_norm, 0.0)
        self.assertTrue(result.passed(1e-4), result)


class TrainingTests(unittest.TestCase):
    def _run(self, steps=3):
        model = mini_model()
        state = TrainState.create(model, TrainConfig(batch_size=2, warmup_steps=2, max_steps=10))
        gen = torch.Generator().manual_seed(5)
        losses = train_loop(state, triplets(), DiffusionSchedule(), steps, gen, show_progress=False)
        return state, losses

    def test_same_seed_same_run(self):
        a, la = self._run()
        b, lb = self._run()
        self.assertEqual(la, lb)
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            self.assertTrue(torch.equal(pa, pb))

    def test_step_bookkeeping(self):
        state, losses = self._run(3)
        self.assertEqual(len(losses), 3)
        self.assertEqual(state.step, 3)
        self.assertEqual(state.model.trained_steps, 3)
        self.assertEqual(state.model.sample_shape, (64, 256))
        self.assertTrue(all(math.isfinite(x) for x in losses))

    def test_resumed_lr_matches_schedule(self):
        state, _ = self._run(3)
        resumed = TrainState.create(mini_model(), state.cfg, start_step=3)
        self.assertAlmostEqual(resumed.lr, state.lr, places=12)
        self.assertAlmostEqual(state.lr, lr_at(3, state.cfg), places=12)

    def test_default_hyperparameters(self):
        hp = optimizer_hparams(TrainState.create(mini_model(), TrainConfig()))
        self.assertEqual(hp["lr_peak"], 1e-4)
        self.assertEqual(hp["betas"], (0.9, 0.999))
        self.assertEqual(hp["weight_decay"], 0.02)
        self.assertEqual(hp["warmup_steps"], 500)
        self.assertEqual(hp["schedule"], "cosine")
        self.assertEqual(hp["cond_dropout"], 0.05)

    def test_warmup_then_cosine(self):
        cfg = TrainConfig(lr=1.0, warmup_steps=4, max_steps=14)
        self.assertAlmostEqual(lr_at(0, cfg), 0.25)
        self.assertAlmostEqual(lr_at(3, cfg), 1.0)
        self.assertAlmostEqual(lr_at(9, cfg), 0.5)
        self.assertAlmostEqual(lr_at(14, cfg), 0.0)

    def test_non_finite_loss_stops_training(self):
        state = TrainState.create(mini_model(), TrainConfig())
        bad = next(state.model.parameters()).sum() * float("nan")
        with self.assertRaises(NonFiniteLossError) as cm:
            apply_update(state, bad)
        self.assertEqual(cm.exception.step, 0)
        self.assertEqual(state.step, 0)

    def test_binary_training_step(self):
        model = mini_model("pianoroll")
        state = TrainState.create(model, TrainConfig(batch_size=2))
        loss = binary_train_step(state, roll_chunks(2), DiffusionSchedule(), torch.Generator().manual_seed(0))
        self.assertAlmostEqual(loss, math.log(2.0), places=5)
        self.assertEqual(model.sample_shape, (16, 72))


class SamplingTests(unittest.TestCase):
    def setUp(self):
        self.cfg = StftConfig()
        self.partial = triplets(1)[0].partial
        self.schedule = DiffusionSchedule()

    def test_untrained_model_refused(self):
        with self.assertRaises(StemDiffError):
            sample_insert(mini_model(), self.partial, "Add bass", SamplerConfig(steps=2), self.schedule)

    def test_context_is_clean_partial_at_every_step(self):
        seen = []
        scfg = SamplerConfig(steps=5, guidance_text=2.0, guidance_image=1.5)
        out = sample_insert(mini_model(), self.partial, "Add bass", scfg, self.schedule,
                            on_step=lambda t, ctx: seen.append((t, ctx.clone())), allow_untrained=True)
        expected = torch.from_numpy(self.partial.to_model()).float()
        self.assertEqual(len(seen), 5)
        for _, ctx in seen:
            self.assertTrue(torch.equal(ctx[0, 0], expected))
        self.assertEqual(out.values.shape, self.cfg.shape)
        self.assertGreaterEqual(out.values.min(), 0.0)
        self.assertLessEqual(out.values.max(), 1.0)

    def test_sampling_is_seeded(self):
        model = mini_model()
        scfg = SamplerConfig(steps=3, mode="ddpm", seed=4)
        a = sample_insert(model, self.partial, "Add bass", scfg, self.schedule, allow_untrained=True)
        b = sample_insert(model, self.partial, "Add bass", scfg, self.schedule, allow_untrained=True)
        self.assertEqual(a, b)

    def test_shape_mismatch(self):
        model = mini_model()
        model.sample_shape = (32, 32)
        with self.assertRaises(ValueError):
            sample_insert(model, self.partial, "Add bass", SamplerConfig(steps=2), self.schedule,
                          allow_untrained=True)

    def test_guidance_combination(self):
        class ContextPlusText(torch.nn.Module):
            def forward(self, x, t, cond):
                return x[:, 1:2] + cond.mean(dim=1)[:, None, None, None]

        x = torch.zeros(1, 1, 4, 4)
        ctx = torch.full((1, 1, 4, 4), 2.0)
        cond = torch.full((1, 4), 3.0)
        scfg = SamplerConfig(guidance_text=1.5, guidance_image=2.0)
        out = predict(ContextPlusText(), x, ctx, cond, 10, scfg)
        # u = 0, i = 2, c = 5 -> 0 + 2.0 * 2 + 1.5 * 3
        self.assertTrue(torch.allclose(out, torch.full_like(out, 8.5)))
        plain = predict(ContextPlusText(), x, ctx, cond, 10, SamplerConfig())
        self.assertTrue(torch.allclose(plain, torch.full_like(plain, 5.0)))

    def test_sdedit_steps_and_empty_context(self):
        seen = []
        scfg = SamplerConfig(steps=20)
        sample_sdedit(mini_model(), self.partial, "Add bass", 0.5, scfg, self.schedule,
                      on_step=lambda t, ctx: seen.append((t, ctx.clone())), allow_untrained=True)
        self.assertEqual(len(seen), 10)
        self.assertEqual(seen[0][0], 499)
        self.assertEqual(seen[-1][0], 0)
        self.assertTrue(all(not ctx.any() for _, ctx in seen))

    def test_sdedit_strength_bounds(self):
        self.assertEqual(sdedit_start(1.0, self.schedule), 999)
        self.assertEqual(sdedit_start(1e-6, self.schedule), 0)
        with self.assertRaises(ValueError):
            sdedit_start(0.0, self.schedule)


class BinarySamplingTests(unittest.TestCase):
    def setUp(self):
        self.context = roll_chunks(1)[0].roll
        self.schedule = DiffusionSchedule()

    def test_untrained_model_exhausts_rejection(self):
        # zero logits threshold to an empty channel, which is too sparse
        rejection = RejectionConfig(max_attempts=2)
        with self.assertRaises(RejectionExhaustedError) as cm:
            binary_sample(mini_model("pianoroll"), self.context, Instrument.BASS, SamplerConfig(steps=3),
                          self.schedule, rejection, allow_untrained=True)
        self.assertEqual(cm.exception.attempts, 2)
        self.assertEqual(cm.exception.last_density, 0.0)

    def test_context_channels_untouched(self):
        roll, attempts = binary_sample(mini_model("pianoroll"), self.context, "bass", SamplerConfig(steps=3),
                                       self.schedule, RejectionConfig(min_density=0.0), allow_untrained=True)
        self.assertEqual(attempts, 1)
        for inst in Instrument.BASS.context():
            np.testing.assert_array_equal(roll.channel(inst), self.context.channel(inst))
        self.assertFalse(roll.channel(Instrument.BASS).any())

    def test_rejection_bounds_validated(self):
        with self.assertRaises(ValueError):
            RejectionConfig(min_density=0.5, max_density=0.1)


class CheckpointTests(unittest.TestCase):
    def test_round_trip_with_optimizer(self):
        model = mini_model()
        state = TrainState.create(model, TrainConfig(batch_size=2))
        schedule = DiffusionSchedule()
        train_step(state, triplets(2), schedule, torch.Generator().manual_seed(0))

        with tempfile.TemporaryDirectory() as tmp:
            path = save_model(Path(tmp) / "ckpt.stwd", model, schedule, state.step, "bass",
                              optimizer=state.optimizer, extra={"config_hash": "abc"})
            ckpt = load_checkpoint(path)

        self.assertEqual(ckpt.step, 1)
        self.assertEqual(ckpt.metadata["target"], "bass")
        self.assertEqual(ckpt.metadata["config_hash"], "abc")
        self.assertEqual(ckpt.model.sample_shape, (64, 256))
        self.assertEqual(ckpt.model.trained_steps, 1)
        self.assertEqual(ckpt.schedule.T, schedule.T)
        for (name, a), b in zip(model.state_dict().items(), ckpt.model.state_dict().values()):
            self.assertTrue(torch.equal(a, b), name)

        resumed = TrainState.create(ckpt.model, state.cfg, start_step=ckpt.step)
        restore_optimizer(resumed.optimizer, ckpt.model, ckpt)
        params = dict(ckpt.model.named_parameters())
        for name, p in model.named_parameters():
            if p in state.optimizer.state:
                self.assertTrue(torch.equal(state.optimizer.state[p]["exp_avg"],
                                            resumed.optimizer.state[params[name]]["exp_avg"]))

    def test_wrong_kind_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "other.stwd"
            tensorio.save(path, {"x": np.zeros(3, np.float32)}, {"kind": "generations"})
            with self.assertRaises(CheckpointError):
                load_checkpoint(path)


if __name__ == "__main__":
    unittest.main()
