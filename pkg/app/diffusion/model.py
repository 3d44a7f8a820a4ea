"""
Conditional U-Net denoiser.

Input is the noisy target stacked with clean context channels; the timestep
and the instruction embedding are summed into one conditioning vector that
biases every residual block. The output convolution starts at zero, so an
untrained model predicts eps = 0 (MSE ~ 1) or logits = 0 (BCE = ln 2).
"""
from __future__ import annotations

import math
from typing import Sequence, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from torch import nn

from app.instruct.embedder import EMBED_DIM, VOCAB_BUCKETS, InstructionEmbedder


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    in_channels: int = 2
    out_channels: int = 1
    widths: Tuple[int, int, int] = (32, 64, 128)
    time_features: int = 64
    embed_dim: int = EMBED_DIM
    vocab_size: int = VOCAB_BUCKETS
    max_groups: int = 8

    @field_validator("widths")
    @classmethod
    def _positive(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(w < 1 for w in v):
            raise ValueError("widths must be positive")
        return v

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if self.in_channels <= self.out_channels:
            raise ValueError("in_channels must include at least one context channel")
        if self.time_features % 2:
            raise ValueError("time_features must be even")
        return self

    @property
    def context_channels(self) -> int:
        return self.in_channels - self.out_channels

    @classmethod
    def spectrogram(cls, **overrides) -> "ModelConfig":
        """Noisy full mix + clean stem-subtracted mix -> eps."""
        return cls(in_channels=2, out_channels=1, **overrides)

    @classmethod
    def pianoroll(cls, **overrides) -> "ModelConfig":
        """Noisy target channel + two clean context channels -> x0 logits."""
        return cls(in_channels=3, out_channels=1, **overrides)


def timestep_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64).reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _groups(channels: int, max_groups: int) -> int:
    return math.gcd(channels, max_groups)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, cond_dim: int, max_groups: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in, max_groups), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.cond = nn.Linear(cond_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out, max_groups), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.cond(cond)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Up(nn.Module):
    def __init__(self, c_in: int, c_out: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class DenoiserModel(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None, verbose: bool = True) -> None:
        super().__init__()
        self.cfg = cfg or ModelConfig()
        w0, w1, w2 = self.cfg.widths
        d, g = self.cfg.embed_dim, self.cfg.max_groups

        self.instruct = InstructionEmbedder(self.cfg.vocab_size, d)
        self.time_mlp = nn.Sequential(nn.Linear(self.cfg.time_features, d), nn.SiLU(), nn.Linear(d, d))

        self.inp = nn.Conv2d(self.cfg.in_channels, w0, 3, padding=1)
        self.enc0 = ResBlock(w0, w0, d, g)
        self.down1 = nn.Conv2d(w0, w1, 3, stride=2, padding=1)
        self.enc1 = ResBlock(w1, w1, d, g)
        self.down2 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.mid = ResBlock(w2, w2, d, g)
        self.up2 = Up(w2, w1)
        self.dec1 = ResBlock(2 * w1, w1, d, g)
        self.up1 = Up(w1, w0)
        self.dec0 = ResBlock(2 * w0, w0, d, g)
        self.out_norm = nn.GroupNorm(_groups(w0, g), w0)
        self.out = nn.Conv2d(w0, self.cfg.out_channels, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

        # set by training; samplers refuse a model that never saw a step
        self.trained_steps = 0
        # [H, W] of the tensors it was trained on, None until known
        self.sample_shape: Tuple[int, int] | None = None
        if verbose:
            print(f"[Model] denoiser {self.cfg.widths} in={self.cfg.in_channels} "
                  f"out={self.cfg.out_channels}: {self.param_count:,} parameters")

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def embed_texts(self, texts: Sequence[str]) -> torch.Tensor:
        return self.instruct(texts)

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected [B, {self.cfg.in_channels}, H, W] input, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"H and W must be multiples of 4, got {tuple(x.shape[2:])}")
        t = torch.as_tensor(t, device=x.device).reshape(-1)
        if t.numel() == 1 and x.shape[0] > 1:
            t = t.expand(x.shape[0])
        temb = timestep_features(t, self.cfg.time_features).to(x.dtype)
        c = self.time_mlp(temb) + cond.to(x.dtype)

        h0 = self.enc0(self.inp(x), c)
        h1 = self.enc1(self.down1(h0), c)
        h = self.mid(self.down2(h1), c)
        h = self.dec1(torch.cat([self.up2(h), h1], dim=1), c)
        h = self.dec0(torch.cat([self.up1(h), h0], dim=1), c)
        return self.out(F.silu(self.out_norm(h)))
