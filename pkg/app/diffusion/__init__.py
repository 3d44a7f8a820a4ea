"""
Conditional diffusion: Gaussian on spectrograms, binary on piano rolls.
Both condition by concatenating the clean context to the noisy target.
"""
from app.diffusion.binary import RejectionConfig, binary_forward, binary_loss, binary_sample, binary_train_step
from app.diffusion.checkpoint import load_checkpoint, load_model, save_model
from app.diffusion.gradcheck import check_gradients
from app.diffusion.model import DenoiserModel, ModelConfig
from app.diffusion.sample import SamplerConfig, sample_insert, sample_sdedit
from app.diffusion.schedule import DiffusionSchedule, forward_noise
from app.diffusion.train import TrainConfig, TrainState, gaussian_loss, seed_all, train_step

__all__ = [
    "DenoiserModel",
    "DiffusionSchedule",
    "ModelConfig",
    "RejectionConfig",
    "SamplerConfig",
    "TrainConfig",
    "TrainState",
    "binary_forward",
    "binary_loss",
    "binary_sample",
    "binary_train_step",
    "check_gradients",
    "forward_noise",
    "gaussian_loss",
    "load_checkpoint",
    "load_model",
    "sample_insert",
    "sample_sdedit",
    "save_model",
    "seed_all",
    "train_step",
]
