"""
Model checkpoints in the STWD container.

Tensor names: `param/<state-dict key>` for weights and, when an optimizer is
saved, `adam/<param name>/exp_avg` and `adam/<param name>/exp_avg_sq`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from app import tensorio
from app.diffusion.model import DenoiserModel, ModelConfig
from app.diffusion.schedule import DiffusionSchedule
from app.errors import CheckpointError

CHECKPOINT_KIND = "denoiser"


@dataclass
class Checkpoint:
    model: DenoiserModel
    schedule: DiffusionSchedule
    metadata: Dict
    adam: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))


def save_model(path: str | Path, model: DenoiserModel, schedule: DiffusionSchedule, step: int = 0,
               target: str = "", kind: str = "subtractive", optimizer: Optional[torch.optim.Optimizer] = None,
               extra: Optional[Dict] = None) -> Path:
    tensors: Dict[str, np.ndarray] = {
        f"param/{name}": value.detach().cpu().float().numpy()
        for name, value in model.state_dict().items()
    }
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                name = names[id(p)]
                tensors[f"adam/{name}/exp_avg"] = state["exp_avg"].detach().cpu().float().numpy()
                tensors[f"adam/{name}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().float().numpy()

    metadata = {
        "kind": CHECKPOINT_KIND,
        "method": kind,
        "architecture": model.cfg.model_dump(mode="json"),
        "schedule": schedule.describe(),
        "step": int(step),
        "param_count": model.param_count,
        "target": target,
        "sample_shape": list(model.sample_shape) if model.sample_shape else None,
        **(extra or {}),
    }
    path = Path(path)
    tensorio.save(path, tensors, metadata)
    print(f"[Checkpoint] saved step {step} ({model.param_count:,} params) to {path}")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    tensors, meta = tensorio.load(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is a '{meta.get('kind')}' file, not a denoiser checkpoint")
    try:
        cfg = ModelConfig(**meta["architecture"])
        schedule = DiffusionSchedule.from_description(meta["schedule"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint metadata is incomplete or invalid: {exc}") from exc

    model = DenoiserModel(cfg, verbose=False)
    if model.param_count != meta.get("param_count"):
        raise CheckpointError(
            f"header says {meta.get('param_count')} parameters, architecture builds {model.param_count}"
        )
    state = {}
    for name, ref in model.state_dict().items():
        key = f"param/{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor '{key}'")
        if tuple(tensors[key].shape) != tuple(ref.shape):
            raise CheckpointError(f"tensor '{key}' has shape {tensors[key].shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(tensors[key]).to(ref.dtype)
    model.load_state_dict(state)
    model.trained_steps = int(meta.get("step", 0))
    shape = meta.get("sample_shape")
    model.sample_shape = tuple(shape) if shape else None

    adam: Dict[str, Dict[str, np.ndarray]] = {}
    for key, value in tensors.items():
        if key.startswith("adam/"):
            name, slot = key[len("adam/"):].rsplit("/", 1)
            adam.setdefault(name, {})[slot] = value
    return Checkpoint(model, schedule, meta, adam)


def load_model(path: str | Path) -> DenoiserModel:
    return load_checkpoint(path).model


def restore_optimizer(optimizer: torch.optim.Optimizer, model: DenoiserModel, ckpt: Checkpoint) -> None:
    """Put saved AdamW moments back so a resumed run continues the same trajectory."""
    params = dict(model.named_parameters())
    for name, slots in ckpt.adam.items():
        p = params.get(name)
        if p is None:
            raise CheckpointError(f"optimizer state refers to unknown parameter '{name}'")
        optimizer.state[p] = {
            "step": torch.tensor(float(ckpt.step)),
            "exp_avg": torch.from_numpy(slots["exp_avg"]).to(p.dtype).reshape(p.shape),
            "exp_avg_sq": torch.from_numpy(slots["exp_avg_sq"]).to(p.dtype).reshape(p.shape),
        }
