"""Posterior-based metrics: pairwise KL divergence and Inception Score."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import rel_entr

from app.audio.dsp import MelSpec
from app.errors import MetricError
from app.metrics.embedder import Embedder, posteriors

KLD_SMOOTHING = 1e-6


def _smooth(p: np.ndarray, eps: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64) + eps
    return p / p.sum(axis=-1, keepdims=True)


def kl_divergence(p_target, p_generated, smoothing: float = KLD_SMOOTHING) -> float:
    """KL(target || generated) over class posteriors."""
    p = _smooth(p_target, smoothing)
    q = _smooth(p_generated, smoothing)
    if p.shape != q.shape:
        raise MetricError(f"posterior shapes differ: {p.shape} vs {q.shape}")
    return float(rel_entr(p, q).sum())


def pairwise_kld(generated: MelSpec, target: MelSpec, emb: Embedder,
                 smoothing: float = KLD_SMOOTHING) -> float:
    p = posteriors(emb, [target, generated])
    return kl_divergence(p[0], p[1], smoothing)


def mean_pairwise_kld(generated: Sequence[MelSpec], targets: Sequence[MelSpec], emb: Embedder,
                      smoothing: float = KLD_SMOOTHING) -> float:
    """Average KL over aligned (generated, target) pairs."""
    if len(generated) != len(targets) or not generated:
        raise MetricError("need equally many, at least one, generated and target spectrograms")
    pg = posteriors(emb, generated)
    pt = posteriors(emb, targets)
    return float(np.mean([kl_divergence(t, g, smoothing) for t, g in zip(pt, pg)]))


def inception_score_from_posteriors(p_yx) -> float:
    """exp(mean_x KL(p(y|x) || p(y))), one split."""
    p = np.asarray(p_yx, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise MetricError(f"inception score needs at least 2 posteriors, got shape {p.shape}")
    marginal = p.mean(axis=0, keepdims=True)
    return float(np.exp(rel_entr(p, marginal).sum(axis=1).mean()))


def inception_score(specs: Sequence[MelSpec], emb: Embedder) -> float:
    if len(specs) < 2:
        raise MetricError(f"inception score needs at least 2 spectrograms, got {len(specs)}")
    return inception_score_from_posteriors(posteriors(emb, specs))
