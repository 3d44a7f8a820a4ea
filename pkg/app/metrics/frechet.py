from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.errors import MetricError

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if mu.ndim != 1 or sigma.shape != (mu.shape[0], mu.shape[0]):
            raise MetricError(f"moments shapes disagree: mu {mu.shape}, sigma {sigma.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def moments(features) -> GaussianMoments:
    """Sample mean and unbiased covariance of an [n, d] feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise MetricError(f"need at least 2 feature vectors, got {x.shape[0]}")
    return GaussianMoments(x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False, ddof=1)))


def _check_symmetric(sigma: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.abs(sigma).max()))
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise MetricError(f"covariance {name} is not symmetric")


def psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigh, negative eigenvalues clamped to 0."""
    w, v = np.linalg.eigh((sigma + sigma.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianMoments, b: GaussianMoments) -> float:
    """
    Squared Fréchet distance between two Gaussians:

        |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)

    Everything stays in symmetric eigensolvers; the result is clamped at 0.
    """
    if a.dim != b.dim:
        raise MetricError(f"dimension mismatch: {a.dim} vs {b.dim}")
    _check_symmetric(a.sigma, "a")
    _check_symmetric(b.sigma, "b")
    root_a = psd_sqrt(a.sigma)
    inner = root_a @ b.sigma @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = a.mu - b.mu
    d2 = float(diff @ diff) + float(np.trace(a.sigma) + np.trace(b.sigma)) - 2.0 * trace_sqrt
    return max(d2, 0.0)
