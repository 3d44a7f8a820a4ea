"""
Toy audio classifiers whose penultimate features feed the Fréchet metrics.

Two variants with different widths, kernels and seeds stand in for the two
feature extractors of FD and FAD.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import nn
from tqdm import tqdm

from app import tensorio
from app.audio.dsp import MelSpec
from app.errors import CheckpointError, MetricError

EMBEDDER_KIND = "embedder"


class EmbedderConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "fd"
    widths: Tuple[int, int, int] = (16, 32, 64)
    kernel: int = 3
    feature_dim: int = 32
    n_classes: int = 4
    seed: int = 0

    @classmethod
    def preset(cls, name: str, n_classes: int = 4) -> "EmbedderConfig":
        if name == "fd":
            return cls(name="fd", widths=(16, 32, 64), kernel=3, n_classes=n_classes, seed=0)
        if name == "fad":
            return cls(name="fad", widths=(8, 24, 48), kernel=5, n_classes=n_classes, seed=1)
        raise ValueError(f"unknown embedder preset '{name}' (expected 'fd' or 'fad')")


class EmbedderTrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(20, ge=1)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-3, gt=0)
    holdout_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = 0


class Embedder(nn.Module):
    def __init__(self, cfg: EmbedderConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg or EmbedderConfig()
        w, k = self.cfg.widths, self.cfg.kernel
        # initialization depends only on the config seed, not on global RNG state
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.cfg.seed)
            layers: List[nn.Module] = []
            c_in = 1
            for c_out in w:
                layers += [nn.Conv2d(c_in, c_out, k, padding=k // 2), nn.ReLU(), nn.MaxPool2d(2)]
                c_in = c_out
            self.blocks = nn.Sequential(*layers)
            self.proj = nn.Linear(c_in, self.cfg.feature_dim)
            self.head = nn.Linear(self.cfg.feature_dim, self.cfg.n_classes)

    @property
    def identifier(self) -> str:
        h = hashlib.sha256()
        for value in self.state_dict().values():
            h.update(value.detach().cpu().numpy().tobytes())
        return f"{self.cfg.name}:{h.hexdigest()[:12]}"

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = self.blocks(x).mean(dim=(2, 3))
        return F.relu(self.proj(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))

    def freeze(self) -> "Embedder":
        self.eval()
        self.requires_grad_(False)
        return self


def _stack(specs: Sequence[MelSpec]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.values for s in specs])[:, None]).float()


@torch.no_grad()
def extract_features(emb: Embedder, specs: Sequence[MelSpec], batch_size: int = 32) -> np.ndarray:
    emb.eval()
    out = [emb.features(_stack(specs[i:i + batch_size])).double().numpy()
           for i in range(0, len(specs), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, emb.cfg.feature_dim))


@torch.no_grad()
def posteriors(emb: Embedder, specs: Sequence[MelSpec], batch_size: int = 32) -> np.ndarray:
    """Softmax class posteriors, float64, rows renormalized to sum to 1."""
    emb.eval()
    rows = [torch.softmax(emb(_stack(specs[i:i + batch_size])).double(), dim=1).numpy()
            for i in range(0, len(specs), batch_size)]
    p = np.concatenate(rows) if rows else np.zeros((0, emb.cfg.n_classes))
    return p / p.sum(axis=1, keepdims=True)


def _holdout(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class split so every class is represented on both sides when possible."""
    train, test = [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(round(fraction * len(idx)))
        if fraction > 0 and len(idx) > 1:
            n_test = min(max(1, n_test), len(idx) - 1)
        test += idx[:n_test].tolist()
        train += idx[n_test:].tolist()
    return np.asarray(sorted(train)), np.asarray(sorted(test))


@dataclass(frozen=True)
class EmbedderTrainResult:
    embedder: Embedder
    holdout_accuracy: float
    final_loss: float


def train_embedder(specs: Sequence[MelSpec], labels: Sequence[int], cfg: EmbedderConfig | None = None,
                   train_cfg: EmbedderTrainConfig | None = None, show_progress: bool = True) -> EmbedderTrainResult:
    """Cross-entropy training on labeled spectrograms; returns a frozen embedder."""
    train_cfg = train_cfg or EmbedderTrainConfig()
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise MetricError(f"embedder training needs at least 2 classes, got {len(classes)}")
    if len(specs) != len(labels):
        raise MetricError("need one label per spectrogram")
    n_classes = int(labels.max()) + 1
    cfg = (cfg or EmbedderConfig()).model_copy(update={"n_classes": n_classes})

    rng = np.random.default_rng(train_cfg.seed)
    train_idx, test_idx = _holdout(labels, train_cfg.holdout_fraction, rng)
    emb = Embedder(cfg)
    opt = torch.optim.Adam(emb.parameters(), lr=train_cfg.lr)
    g = torch.Generator().manual_seed(train_cfg.seed)
    x_all = _stack(specs)
    y_all = torch.from_numpy(labels)

    loss_value = float("nan")
    for _ in tqdm(range(train_cfg.epochs), desc=f"Embedder {cfg.name}", disable=not show_progress):
        emb.train()
        order = torch.from_numpy(train_idx)[torch.randperm(len(train_idx), generator=g)]
        for i in range(0, len(order), train_cfg.batch_size):
            idx = order[i:i + train_cfg.batch_size]
            loss = F.cross_entropy(emb(x_all[idx]), y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_value = float(loss.detach())

    emb.freeze()
    if len(test_idx):
        with torch.no_grad():
            pred = emb(x_all[torch.from_numpy(test_idx)]).argmax(dim=1).numpy()
        accuracy = float((pred == labels[test_idx]).mean())
    else:
        accuracy = float("nan")
    print(f"[Eval] embedder {cfg.name}: held-out accuracy {accuracy:.3f} on {len(test_idx)} clips")
    return EmbedderTrainResult(emb, accuracy, loss_value)


def save_embedder(path: str | Path, emb: Embedder, extra: dict | None = None) -> Path:
    tensors = {k: v.detach().cpu().float().numpy() for k, v in emb.state_dict().items()}
    tensorio.save(path, tensors, {"kind": EMBEDDER_KIND, "config": emb.cfg.model_dump(mode="json"), **(extra or {})})
    return Path(path)


def load_embedder(path: str | Path) -> Embedder:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(
            f"embedder checkpoint not found: {path}; train one with `stemctl train-embedder --manifest <corpus>`"
        )
    tensors, meta = tensorio.load(path)
    if meta.get("kind") != EMBEDDER_KIND:
        raise CheckpointError(f"{path} is a '{meta.get('kind')}' file, not an embedder")
    emb = Embedder(EmbedderConfig(**meta["config"]))
    try:
        emb.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    except RuntimeError as exc:
        raise CheckpointError(f"embedder tensors do not match its config: {exc}") from exc
    return emb.freeze()
