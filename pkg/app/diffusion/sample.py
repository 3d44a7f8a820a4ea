"""
Samplers for the spectrogram model: stem insertion (DDIM / ancestral) and
the SDEdit baseline.

Insertion starts from pure noise in the target slot and keeps the clean
stem-subtracted spectrogram in the context slot at every step. SDEdit has
no context slot: it noises the partial itself and denoises with text only.
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.audio.dsp import MelSpec
from app.diffusion.model import DenoiserModel
from app.diffusion.schedule import DiffusionSchedule, forward_noise
from app.errors import StemDiffError
from app.instruct.templates import EditInstruction

# on_step(t, context) sees the exact context tensor fed to the model
StepCallback = Callable[[int, torch.Tensor], None]

MODES = ("ddim", "ddpm", "binary")


class SamplerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int = Field(20, ge=1)
    mode: str = "ddim"
    guidance_text: float = 1.0
    guidance_image: float = 1.0
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SamplerConfig":
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode '{self.mode}' (expected one of {MODES})")
        return self

    @property
    def eta(self) -> float:
        return 1.0 if self.mode == "ddpm" else 0.0

    @property
    def guided(self) -> bool:
        return not (self.guidance_text == 1.0 and self.guidance_image == 1.0)


def _texts(instructions: Sequence[EditInstruction | str]) -> List[str]:
    return [i.text if isinstance(i, EditInstruction) else str(i) for i in instructions]


def predict(model: DenoiserModel, x_t: torch.Tensor, context: torch.Tensor, cond: torch.Tensor,
            t: int, scfg: SamplerConfig) -> torch.Tensor:
    """
    Network output with two-scale classifier-free guidance:

        out = u + s_img (i - u) + s_txt (c - i)

    u: no context, no text; i: context only; c: context and text. With both
    scales at 1 this is exactly c and a single pass is made.
    """
    b = x_t.shape[0]
    tt = torch.full((b,), t, dtype=torch.long)
    if not scfg.guided:
        return model(torch.cat([x_t, context], dim=1), tt, cond)
    zeros_ctx = torch.zeros_like(context)
    zeros_cond = torch.zeros_like(cond)
    inputs = torch.cat([
        torch.cat([x_t, zeros_ctx], dim=1),
        torch.cat([x_t, context], dim=1),
        torch.cat([x_t, context], dim=1),
    ])
    conds = torch.cat([zeros_cond, zeros_cond, cond])
    u, i, c = model(inputs, tt.repeat(3), conds).chunk(3)
    return u + scfg.guidance_image * (i - u) + scfg.guidance_text * (c - i)


def ddim_step(schedule: DiffusionSchedule, x_t: torch.Tensor, eps: torch.Tensor, t: int, t_prev: int,
              eta: float, generator: torch.Generator) -> torch.Tensor:
    """One DDIM update from t to t_prev (t_prev = -1 means the clean sample)."""
    ab_t = float(schedule.alpha_bar[t])
    ab_prev = float(schedule.alpha_bar[t_prev]) if t_prev >= 0 else 1.0
    x0 = ((x_t - (1.0 - ab_t) ** 0.5 * eps) / ab_t ** 0.5).clamp(-1.0, 1.0)
    if t_prev < 0:
        return x0
    eps = (x_t - ab_t ** 0.5 * x0) / (1.0 - ab_t) ** 0.5
    sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t)) ** 0.5 * (1.0 - ab_t / ab_prev) ** 0.5
    direction = max(0.0, 1.0 - ab_prev - sigma ** 2) ** 0.5 * eps
    x_prev = ab_prev ** 0.5 * x0 + direction
    if sigma > 0:
        x_prev = x_prev + sigma * torch.randn(x_t.shape, generator=generator)
    return x_prev


def denoise(model: DenoiserModel, x: torch.Tensor, context: torch.Tensor, cond: torch.Tensor,
            timesteps: np.ndarray, schedule: DiffusionSchedule, scfg: SamplerConfig,
            generator: torch.Generator, on_step: Optional[StepCallback] = None) -> torch.Tensor:
    steps = [int(t) for t in timesteps]
    for k, t in enumerate(steps):
        if on_step is not None:
            on_step(t, context)
        eps = predict(model, x, context, cond, t, scfg)
        t_prev = steps[k + 1] if k + 1 < len(steps) else -1
        x = ddim_step(schedule, x, eps, t, t_prev, scfg.eta, generator)
    return x


def _check_model(model: DenoiserModel, shape, allow_untrained: bool) -> None:
    if model.trained_steps == 0 and not allow_untrained:
        raise StemDiffError("model has never been trained; load a checkpoint or pass allow_untrained=True")
    if model.sample_shape is not None and tuple(shape) != tuple(model.sample_shape):
        raise ValueError(f"spectrogram shape {tuple(shape)} does not match the model's {tuple(model.sample_shape)}")


@torch.no_grad()
def sample_insert_batch(model: DenoiserModel, partials: Sequence[MelSpec],
                        instructions: Sequence[EditInstruction | str], scfg: SamplerConfig,
                        schedule: DiffusionSchedule, on_step: Optional[StepCallback] = None,
                        allow_untrained: bool = False) -> List[MelSpec]:
    if len(partials) != len(instructions):
        raise ValueError("need one instruction per partial spectrogram")
    cfg = partials[0].config
    _check_model(model, cfg.shape, allow_untrained)
    model.eval()
    generator = torch.Generator().manual_seed(scfg.seed)
    context = torch.from_numpy(np.stack([p.to_model() for p in partials])[:, None]).float()
    cond = model.embed_texts(_texts(instructions))
    x = torch.randn(context.shape, generator=generator)
    x = denoise(model, x, context, cond, schedule.timesteps(scfg.steps), schedule, scfg, generator, on_step)
    return [MelSpec.from_model(arr[0].numpy(), cfg) for arr in x]


def sample_insert(model: DenoiserModel, partial: MelSpec, instr: EditInstruction | str, scfg: SamplerConfig,
                  schedule: DiffusionSchedule, on_step: Optional[StepCallback] = None,
                  allow_untrained: bool = False) -> MelSpec:
    """Generate the full mix for one stem-subtracted spectrogram."""
    return sample_insert_batch(model, [partial], [instr], scfg, schedule, on_step, allow_untrained)[0]


def sdedit_start(strength: float, schedule: DiffusionSchedule) -> int:
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"SDEdit strength must be in (0, 1], got {strength}")
    return max(1, int(round(strength * schedule.T))) - 1


@torch.no_grad()
def sample_sdedit_batch(model: DenoiserModel, partials: Sequence[MelSpec],
                        instructions: Sequence[EditInstruction | str], scfg: SamplerConfig,
                        schedule: DiffusionSchedule, strength: float = 0.5,
                        on_step: Optional[StepCallback] = None,
                        allow_untrained: bool = False) -> List[MelSpec]:
    """
    Noise each partial to round(strength * T) and denoise it with text only.
    Visits max(1, round(steps * strength)) timesteps below the start level.
    """
    t_start = sdedit_start(strength, schedule)
    cfg = partials[0].config
    _check_model(model, cfg.shape, allow_untrained)
    model.eval()
    generator = torch.Generator().manual_seed(scfg.seed)
    x0 = torch.from_numpy(np.stack([p.to_model() for p in partials])[:, None]).float()
    eps = torch.randn(x0.shape, generator=generator)
    x = forward_noise(schedule, x0, t_start, eps)
    # same network, context slot empty
    context = torch.zeros_like(x0)
    cond = model.embed_texts(_texts(instructions))
    n = min(t_start + 1, max(1, int(round(scfg.steps * strength))))
    x = denoise(model, x, context, cond, schedule.timesteps(n, start=t_start), schedule, scfg, generator, on_step)
    return [MelSpec.from_model(arr[0].numpy(), cfg) for arr in x]


def sample_sdedit(model: DenoiserModel, partial: MelSpec, instr: EditInstruction | str,
                  strength: float = 0.5, scfg: Optional[SamplerConfig] = None,
                  schedule: Optional[DiffusionSchedule] = None, on_step: Optional[StepCallback] = None,
                  allow_untrained: bool = False) -> MelSpec:
    return sample_sdedit_batch(model, [partial], [instr], scfg or SamplerConfig(), schedule or DiffusionSchedule(),
                               strength, on_step, allow_untrained)[0]
