"""Evaluation: Fréchet distances on two toy embedders, pairwise KLD, IS and onset alignment."""
from app.metrics.divergence import (
    inception_score,
    inception_score_from_posteriors,
    kl_divergence,
    mean_pairwise_kld,
    pairwise_kld,
)
from app.metrics.embedder import (
    Embedder,
    EmbedderConfig,
    EmbedderTrainConfig,
    extract_features,
    load_embedder,
    posteriors,
    save_embedder,
    train_embedder,
)
from app.metrics.frechet import GaussianMoments, frechet_distance, moments
from app.metrics.onset import OnsetAlignment, onset_alignment, onset_steps
from app.metrics.report import EvalReport, evaluate_pairs

__all__ = [
    "Embedder",
    "EmbedderConfig",
    "EmbedderTrainConfig",
    "EvalReport",
    "GaussianMoments",
    "OnsetAlignment",
    "evaluate_pairs",
    "extract_features",
    "frechet_distance",
    "inception_score",
    "inception_score_from_posteriors",
    "kl_divergence",
    "load_embedder",
    "mean_pairwise_kld",
    "moments",
    "onset_alignment",
    "onset_steps",
    "pairwise_kld",
    "posteriors",
    "save_embedder",
    "train_embedder",
]
