from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

DEFAULT_T = 1000
BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """
    Linear-beta noise tables, float64.

    alpha_bar[t] = prod_{s<=t} (1 - beta[s]) drives the Gaussian process;
    flip[t] = (1 - sqrt(alpha_bar[t])) / 2 is the per-cell flip probability
    of the binary process.
    """

    T: int = DEFAULT_T
    beta_start: float = BETA_START
    beta_end: float = BETA_END
    beta: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)
    flip: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if not 0.0 <= self.beta_start < self.beta_end < 1.0:
            raise ValueError("need 0 <= beta_start < beta_end < 1")
        beta = np.linspace(self.beta_start, self.beta_end, self.T, dtype=np.float64)
        alpha_bar = np.cumprod(1.0 - beta)
        flip = 0.5 * (1.0 - np.sqrt(alpha_bar))
        for name, arr in (("beta", beta), ("alpha_bar", alpha_bar), ("flip", flip)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def describe(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": "linear"}

    @classmethod
    def from_description(cls, desc: dict) -> "DiffusionSchedule":
        return cls(int(desc["T"]), float(desc["beta_start"]), float(desc["beta_end"]))

    def check_t(self, t) -> None:
        arr = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
        if arr.size and (arr.min() < 0 or arr.max() >= self.T):
            raise ValueError(f"timestep out of range [0, {self.T}): {arr.min()}..{arr.max()}")

    def _gather(self, table: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
        self.check_t(t)
        idx = torch.as_tensor(t, dtype=torch.long).reshape(-1).cpu()
        vals = torch.from_numpy(np.asarray(table))[idx].to(dtype=like.dtype, device=like.device)
        # broadcast over every non-batch dim
        return vals.reshape(-1, *([1] * (like.dim() - 1)))

    def sqrt_alpha_bar(self, t, like: torch.Tensor) -> torch.Tensor:
        return self._gather(np.sqrt(self.alpha_bar), t, like)

    def sqrt_one_minus_alpha_bar(self, t, like: torch.Tensor) -> torch.Tensor:
        return self._gather(np.sqrt(1.0 - self.alpha_bar), t, like)

    def flip_prob(self, t, like: torch.Tensor) -> torch.Tensor:
        return self._gather(self.flip, t, like)

    def timesteps(self, steps: int, start: int | None = None) -> np.ndarray:
        """`steps` descending timesteps spread uniformly over [0, start]."""
        start = self.T - 1 if start is None else start
        if not 1 <= steps <= start + 1:
            raise ValueError(f"steps must be in [1, {start + 1}], got {steps}")
        if steps == 1:
            return np.array([start], dtype=np.int64)
        return np.round(np.linspace(start, 0, steps)).astype(np.int64)


def forward_noise(schedule: DiffusionSchedule, x0: torch.Tensor, t, eps: torch.Tensor) -> torch.Tensor:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps; `t` is an int or one index per batch row."""
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} differs from x0 shape {tuple(x0.shape)}")
    return schedule.sqrt_alpha_bar(t, x0) * x0 + schedule.sqrt_one_minus_alpha_bar(t, x0) * eps
