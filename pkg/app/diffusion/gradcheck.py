"""Finite-difference check of autograd parameter gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class GradCheckResult:
    relative_error: float     # ||a - n|| / (||a|| + ||n||) over the sampled entries
    checked: int
    analytic_norm: float
    numeric_norm: float

    def passed(self, tol: float = 1e-3) -> bool:
        return self.relative_error < tol


def check_gradients(loss_fn: Callable[[], torch.Tensor], model: nn.Module, sample_fraction: float = 0.01,
                    h: float = 1e-3, seed: int = 0) -> GradCheckResult:
    """
    Compare autograd against central differences on a random sample of
    scalar parameters. `loss_fn` must be deterministic (fixed t, noise and
    dropout masks); run the model in float64.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    n = max(1, int(math.ceil(sample_fraction * total)))
    picks = np.random.default_rng(seed).choice(total, size=n, replace=False)
    offsets = np.cumsum([0] + sizes)

    a_vals: List[float] = []
    n_vals: List[float] = []
    with torch.no_grad():
        for flat in picks:
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[which])
            view = params[which].view(-1)
            original = view[j].item()
            view[j] = original + h
            plus = float(loss_fn())
            view[j] = original - h
            minus = float(loss_fn())
            view[j] = original
            n_vals.append((plus - minus) / (2.0 * h))
            a_vals.append(float(analytic[which].view(-1)[j]))

    a = np.asarray(a_vals)
    num = np.asarray(n_vals)
    a_norm, n_norm = float(np.linalg.norm(a)), float(np.linalg.norm(num))
    denom = a_norm + n_norm
    rel = float(np.linalg.norm(a - num) / denom) if denom > 0 else 0.0
    return GradCheckResult(rel, n, a_norm, n_norm)


def randomize_(model: nn.Module, std: float = 0.3, seed: int = 0) -> nn.Module:
    """Overwrite every parameter with N(0, std); wakes up zero-initialized output layers."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * std)
    return model
