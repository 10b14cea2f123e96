"""Bootstrap particle filter conditioned on one structure."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import (
    Belief,
    NumericOverflowError,
    Structure,
    effective_sample_size,
    normalize_log_weights,
)


class PredictedParticles(NamedTuple):
    particles: np.ndarray
    log_weights: np.ndarray  # inherited, normalized


class StepOutput(NamedTuple):
    posterior: Belief
    innovation_loglik: float
    ess_before_resample: float


def predict(b: Belief, s: Structure, t: int, rng: np.random.Generator) -> PredictedParticles:
    """Propagate every particle through the structure's transition sampler."""
    z = np.asarray(s.transition.sample(b.particles, t, rng), dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    bad = ~np.isfinite(z).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericOverflowError(f"non-finite predicted particle at index {i}", index=i)
    return PredictedParticles(z, b.log_weights)


def _obs_loglik(pred: PredictedParticles, s: Structure, y) -> np.ndarray:
    return np.asarray(s.observation.log_density(np.asarray(y, dtype=float), pred.particles), dtype=float)


def innovation_likelihood(pred: PredictedParticles, s: Structure, y) -> float:
    """Log of the Monte-Carlo estimate of the predictive likelihood of ``y``."""
    _, log_norm = normalize_log_weights(pred.log_weights + _obs_loglik(pred, s, y))
    return log_norm


def bayes_update(pred: PredictedParticles, s: Structure, y) -> Belief:
    lw, _ = normalize_log_weights(pred.log_weights + _obs_loglik(pred, s, y))
    return Belief(pred.particles, lw)


def systematic_indices(weights: np.ndarray, u0: float, n_out: int | None = None) -> np.ndarray:
    """Ancestor indices for the grid u0 + k/n, k = 0..n-1, with u0 in [0, 1/n)."""
    n = len(weights) if n_out is None else n_out
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    positions = u0 + np.arange(n) / n
    return np.minimum(np.searchsorted(cdf, positions, side="right"), len(weights) - 1)


def resample_systematic(b: Belief, rng: np.random.Generator | None = None,
                        u0: float | None = None, n_out: int | None = None) -> Belief:
    """Systematic resampling to uniform weights.

    ``u0`` overrides the random offset (must lie in [0, 1/n)); otherwise a
    single uniform is drawn from ``rng``. ``n_out`` defaults to the input size.
    """
    n = b.n_particles if n_out is None else n_out
    if u0 is None:
        u0 = rng.random() / n
    elif not 0.0 <= u0 < 1.0 / n:
        raise ValueError(f"offset must lie in [0, 1/N), got {u0}")
    idx = systematic_indices(b.weights, u0, n)
    return Belief(b.particles[idx], np.full(n, -math.log(n)))


def pf_step(b: Belief, s: Structure, t: int, y, rng: np.random.Generator) -> StepOutput:
    """One bootstrap filter step: predict, weight, resample.

    The innovation likelihood is evaluated on the predicted particles with
    the weights inherited from ``b``, before resampling.
    """
    pred = predict(b, s, t, rng)
    lw, log_norm = normalize_log_weights(pred.log_weights + _obs_loglik(pred, s, y))
    weighted = Belief(pred.particles, lw)
    ess = effective_sample_size(weighted)
    return StepOutput(resample_systematic(weighted, rng), log_norm, ess)

