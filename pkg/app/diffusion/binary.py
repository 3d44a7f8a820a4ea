"""
Binary diffusion on piano rolls.

Forward: the target channel is XORed with Bernoulli(flip_t) noise, so at
the top of the schedule it is close to fair coin flips. The model sees the
corrupted target plus the two clean context channels and predicts per-cell
logits of the clean target (BCE). Sampling predicts x0, draws it, and
re-noises to the next level; the last step thresholds at 0.5.
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.data.rolls import RollChunk
from app.diffusion.model import DenoiserModel
from app.diffusion.sample import SamplerConfig, StepCallback
from app.diffusion.schedule import DiffusionSchedule
from app.diffusion.train import TrainState, apply_update, dropout_masks
from app.errors import RejectionExhaustedError, StemDiffError
from app.instruct.templates import template_instruction
from app.symbolic.roll import note_density, replace_channel
from app.symbolic.types import Instrument, PianoRoll


class RejectionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_density: float = Field(0.01, ge=0.0, le=1.0)
    max_density: float = Field(0.2, ge=0.0, le=1.0)
    max_attempts: int = Field(16, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "RejectionConfig":
        if self.min_density > self.max_density:
            raise ValueError("min_density must not exceed max_density")
        return self

    def accepts(self, density: float) -> bool:
        return self.min_density <= density <= self.max_density


def binary_forward(schedule: DiffusionSchedule, x0: torch.Tensor, t, generator: torch.Generator) -> torch.Tensor:
    """x0 XOR Bernoulli(flip_t), cellwise; `t` is an int or one index per batch row."""
    flip = schedule.flip_prob(t, x0.float()).expand(x0.shape)
    mask = torch.bernoulli(flip, generator=generator)
    return xor(x0, mask)


def xor(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a.float() + b.float()).remainder(2.0)


def roll_context(roll: PianoRoll, target: Instrument) -> np.ndarray:
    """[2, T, P] clean context channels in channel order."""
    return np.stack([roll.channel(i) for i in target.context()]).astype(np.float32)


def chunk_text(chunk: RollChunk) -> str:
    return template_instruction(chunk.target_instrument.stem_name, chunk.tags, chunk.chunk_index).text


def collate_rolls(batch: Sequence[RollChunk]) -> Tuple[torch.Tensor, torch.Tensor, List[str]]:
    """[B, 1, T, P] targets and [B, 2, T, P] contexts as float {0, 1}."""
    target = np.stack([c.roll.channel(c.target_instrument)[None] for c in batch]).astype(np.float32)
    context = np.stack([roll_context(c.roll, c.target_instrument) for c in batch])
    return torch.from_numpy(target), torch.from_numpy(context), [chunk_text(c) for c in batch]


def binary_loss(model: DenoiserModel, x_t: torch.Tensor, context: torch.Tensor, cond: torch.Tensor,
                t: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """BCE of predicted x0 logits against the clean target; pure in its arguments."""
    logits = model(torch.cat([x_t, context], dim=1), t, cond)
    return F.binary_cross_entropy_with_logits(logits, target)


def binary_train_step(state: TrainState, batch: Sequence[RollChunk], schedule: DiffusionSchedule,
                      generator: torch.Generator, device: str = "cpu") -> float:
    model, cfg = state.model, state.cfg
    model.train()
    target, context, texts = collate_rolls(batch)
    if model.sample_shape is None:
        model.sample_shape = tuple(target.shape[2:])
    b = target.shape[0]

    t = torch.randint(0, schedule.T, (b,), generator=generator)
    x_t = binary_forward(schedule, target, t, generator)
    keep_ctx, keep_txt = dropout_masks(b, cfg, generator)
    ctx = context * keep_ctx[:, None, None, None]
    cond = model.embed_texts(texts) * keep_txt[:, None]
    loss = binary_loss(model, x_t.to(device), ctx.to(device), cond, t.to(device), target.to(device))
    return apply_update(state, loss)


def _denoise_roll(model: DenoiserModel, context: torch.Tensor, cond: torch.Tensor, timesteps: np.ndarray,
                  schedule: DiffusionSchedule, generator: torch.Generator,
                  on_step: Optional[StepCallback]) -> torch.Tensor:
    shape = (context.shape[0], 1, context.shape[2], context.shape[3])
    x = torch.bernoulli(torch.full(shape, 0.5), generator=generator)
    steps = [int(t) for t in timesteps]
    for k, t in enumerate(steps):
        if on_step is not None:
            on_step(t, context)
        tt = torch.full((shape[0],), t, dtype=torch.long)
        probs = torch.sigmoid(model(torch.cat([x, context], dim=1), tt, cond))
        if k + 1 == len(steps):
            return (probs > 0.5).float()
        x0 = torch.bernoulli(probs, generator=generator)
        x = binary_forward(schedule, x0, steps[k + 1], generator)
    return x


@torch.no_grad()
def binary_sample(model: DenoiserModel, context: PianoRoll, target: Instrument, scfg: SamplerConfig,
                  schedule: DiffusionSchedule, rejection: Optional[RejectionConfig] = None,
                  instruction: str | None = None, on_step: Optional[StepCallback] = None,
                  allow_untrained: bool = False) -> Tuple[PianoRoll, int]:
    """
    Generate the target channel given the other two. Candidates with note
    density outside the rejection bounds are redrawn with fresh noise.
    Returns the full roll (context untouched) and the number of attempts.
    """
    target = Instrument.parse(target)
    rejection = rejection or RejectionConfig()
    if model.trained_steps == 0 and not allow_untrained:
        raise StemDiffError("model has never been trained; load a checkpoint or pass allow_untrained=True")
    if model.sample_shape is not None and (context.n_steps, context.n_pitches) != tuple(model.sample_shape):
        raise ValueError(f"roll shape {(context.n_steps, context.n_pitches)} does not match "
                         f"the model's {tuple(model.sample_shape)}")
    model.eval()
    generator = torch.Generator().manual_seed(scfg.seed)
    ctx = torch.from_numpy(roll_context(context, target)[None])
    text = instruction if instruction is not None else template_instruction(target.stem_name).text
    cond = model.embed_texts([text])
    timesteps = schedule.timesteps(scfg.steps)

    candidate, density = context, 0.0
    for attempt in range(1, rejection.max_attempts + 1):
        channel = _denoise_roll(model, ctx, cond, timesteps, schedule, generator, on_step)
        candidate = replace_channel(context, target, channel[0, 0].numpy().astype(np.uint8))
        density = note_density(candidate, target)
        if rejection.accepts(density):
            return candidate, attempt
        print(f"[Sample] attempt {attempt}: density {density:.4f} outside "
              f"[{rejection.min_density}, {rejection.max_density}], resampling")
    raise RejectionExhaustedError(rejection.max_attempts, density, candidate)
