"""
Training loop for the spectrogram model.

The model learns p(full mix | stem-subtracted mix, instruction): noise is
added only to the full mix, the clean partial rides along as an extra input
channel, and the network predicts the noise (MSE).
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from app import config
from app.data.triplets import Triplet
from app.diffusion.model import DenoiserModel
from app.diffusion.schedule import DiffusionSchedule, forward_noise
from app.errors import NonFiniteLossError


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(1e-4, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.02
    warmup_steps: int = Field(500, ge=0)
    schedule: str = "cosine"
    max_steps: int = Field(20_000, ge=1)
    batch_size: int = Field(4, ge=1)
    cond_dropout: float = Field(0.05, ge=0.0, le=1.0)
    # drop text and context independently instead of together
    independent_dropout: bool = False
    # text-to-spectrogram prior: the context slot is always zero
    text_only: bool = False
    seed: int = 0
    checkpoint_every: int = Field(1000, ge=1)
    log_every: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule '{self.schedule}'")
        return self


def seed_all(seed: int, deterministic: bool = config.DETERMINISTIC) -> torch.Generator:
    """Seed torch/random/numpy; deterministic mode pins one thread and deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    elif config.TORCH_THREADS > 0:
        torch.set_num_threads(config.TORCH_THREADS)
    return torch.Generator().manual_seed(seed)


def lr_factor(step: int, cfg: TrainConfig) -> float:
    """Multiplier on cfg.lr at optimizer step `step` (0-based): linear warmup, then cosine."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return (step + 1) / cfg.warmup_steps
    if cfg.schedule == "constant":
        return 1.0
    span = max(1, cfg.max_steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_at(step: int, cfg: TrainConfig) -> float:
    return cfg.lr * lr_factor(step, cfg)


@dataclass
class TrainState:
    model: DenoiserModel
    optimizer: torch.optim.AdamW
    scheduler: torch.optim.lr_scheduler.LambdaLR
    cfg: TrainConfig
    step: int = 0

    @classmethod
    def create(cls, model: DenoiserModel, cfg: TrainConfig, start_step: int = 0) -> "TrainState":
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay
        )
        for group in optimizer.param_groups:
            group.setdefault("initial_lr", cfg.lr)
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda s: lr_factor(s, cfg), last_epoch=start_step - 1
        )
        return cls(model, optimizer, scheduler, cfg, start_step)

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])


def collate_triplets(batch: Sequence[Triplet], device: str = "cpu") -> Tuple[torch.Tensor, torch.Tensor, List[str]]:
    """[B, 1, M, F] full and partial in [-1, 1], plus instruction texts."""
    full = torch.from_numpy(np.stack([t.full.to_model() for t in batch])[:, None]).float().to(device)
    partial = torch.from_numpy(np.stack([t.partial.to_model() for t in batch])[:, None]).float().to(device)
    return full, partial, [t.instruction.text for t in batch]


def dropout_masks(batch: int, cfg: TrainConfig, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    """(keep_context, keep_text) as {0,1} float vectors."""
    u = torch.rand(batch, generator=generator)
    keep_ctx = (u >= cfg.cond_dropout).float()
    if cfg.independent_dropout:
        keep_txt = (torch.rand(batch, generator=generator) >= cfg.cond_dropout).float()
    else:
        keep_txt = keep_ctx.clone()
    if cfg.text_only:
        keep_ctx = torch.zeros(batch)
    return keep_ctx, keep_txt


def gaussian_loss(model: DenoiserModel, full: torch.Tensor, context: torch.Tensor, cond: torch.Tensor,
                  t: torch.Tensor, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """MSE between predicted and true noise; pure in its arguments."""
    x_t = forward_noise(schedule, full, t, eps)
    pred = model(torch.cat([x_t, context], dim=1), t, cond)
    return F.mse_loss(pred, eps)


def max_abs_grad(model: torch.nn.Module) -> float:
    grads = [p.grad.detach().abs().max() for p in model.parameters() if p.grad is not None]
    return float(torch.stack(grads).max()) if grads else 0.0


def apply_update(state: TrainState, loss: torch.Tensor) -> float:
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(state.step, state.lr, max_abs_grad(state.model), value)
    state.optimizer.step()
    state.scheduler.step()
    state.step += 1
    state.model.trained_steps = state.step
    return value


def train_step(state: TrainState, batch: Sequence[Triplet], schedule: DiffusionSchedule,
               generator: torch.Generator, device: str = "cpu") -> float:
    """One AdamW update on a batch of triplets; returns the scalar loss."""
    model, cfg = state.model, state.cfg
    model.train()
    full, partial, texts = collate_triplets(batch, device)
    if model.sample_shape is None:
        model.sample_shape = tuple(full.shape[2:])
    b = full.shape[0]

    t = torch.randint(0, schedule.T, (b,), generator=generator)
    eps = torch.randn(full.shape, generator=generator).to(device)
    keep_ctx, keep_txt = dropout_masks(b, cfg, generator)

    context = partial * keep_ctx.to(device)[:, None, None, None]
    cond = model.embed_texts(texts) * keep_txt.to(device)[:, None]
    loss = gaussian_loss(model, full, context, cond, t.to(device), eps, schedule)
    return apply_update(state, loss)


def batches(items: Sequence, batch_size: int, generator: torch.Generator):
    """Endless shuffled batches (reshuffled every epoch)."""
    if not items:
        raise ValueError("no training items")
    while True:
        order = torch.randperm(len(items), generator=generator).tolist()
        for i in range(0, len(order), batch_size):
            chunk = [items[j] for j in order[i:i + batch_size]]
            if len(chunk) < batch_size and len(items) >= batch_size:
                # top up the last batch so every step sees batch_size examples
                chunk += [items[j] for j in order[:batch_size - len(chunk)]]
            yield chunk


def optimizer_hparams(state: TrainState) -> dict:
    """What the optimizer is really using, for introspection in tests and logs."""
    group = state.optimizer.param_groups[0]
    return {
        "lr_peak": group["initial_lr"],
        "betas": tuple(group["betas"]),
        "weight_decay": group["weight_decay"],
        "warmup_steps": state.cfg.warmup_steps,
        "schedule": state.cfg.schedule,
        "cond_dropout": state.cfg.cond_dropout,
    }


def train_loop(state: TrainState, items: Sequence, schedule: DiffusionSchedule, steps: int,
               generator: torch.Generator, step_fn=None, on_log=None, on_checkpoint=None,
               show_progress: bool = True) -> List[float]:
    """Run `steps` updates; callbacks receive (step, lr, loss) and (state)."""
    step_fn = step_fn or train_step
    losses: List[float] = []
    stream = batches(items, state.cfg.batch_size, generator)
    bar = tqdm(range(steps), desc="Training", disable=not show_progress)
    for _ in bar:
        lr = state.lr
        loss = step_fn(state, next(stream), schedule, generator)
        losses.append(loss)
        if on_log is not None:
            on_log(state.step, lr, loss)
        if state.step % state.cfg.log_every == 0:
            bar.set_postfix(loss=f"{loss:.4f}", lr=f"{lr:.2e}")
        if on_checkpoint is not None and state.step % state.cfg.checkpoint_every == 0:
            on_checkpoint(state)
    return losses
