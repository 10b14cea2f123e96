"""Particle interacting-multiple-model baseline.

One bootstrap filter per structure. Before each step the mode filters are
mixed: every mode's input belief is the Markov-weighted mixture of all mode
beliefs, realised by systematic resampling from the pooled particle set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    Belief,
    DegenerateLikelihoodError,
    InvalidParameterError,
    ModelBank,
    belief_mean,
    normalize_log_weights,
)
from .pf import pf_step, resample_systematic


@dataclass(frozen=True)
class IMMConfig:
    self_transition: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.self_transition <= 1.0:
            raise InvalidParameterError(
                f"self-transition probability must lie in (0, 1], got {self.self_transition}")

    def transition_matrix(self, n_modes: int) -> np.ndarray:
        """Row-stochastic mode chain; off-diagonal mass split evenly."""
        if n_modes == 1:
            return np.ones((1, 1))
        p = self.self_transition
        m = np.full((n_modes, n_modes), (1.0 - p) / (n_modes - 1))
        np.fill_diagonal(m, p)
        return m


@dataclass(frozen=True, eq=False)
class IMMState:
    mode_probs: np.ndarray
    beliefs: tuple[Belief, ...]
    logliks: np.ndarray | None = None  # per-mode log-likelihoods of the last step
    loglik: float = math.nan            # log sum_s predicted(s) * likelihood(s)

    def __post_init__(self):
        mu = np.asarray(self.mode_probs, dtype=float)
        if mu.shape != (len(self.beliefs),):
            raise InvalidParameterError("one mode probability per belief required")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(f"mode probabilities off the simplex: {mu}")
        object.__setattr__(self, "mode_probs", mu)
        object.__setattr__(self, "beliefs", tuple(self.beliefs))

    @classmethod
    def initial(cls, belief: Belief, n_modes: int, mode_probs=None) -> "IMMState":
        mu = np.full(n_modes, 1.0 / n_modes) if mode_probs is None else mode_probs
        return cls(mu, (belief,) * n_modes)


def mixing_weights(mode_probs: np.ndarray, transition: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted mode probabilities and the mixing matrix.

    ``mix[j, i]`` is the probability that mode ``i`` was active given that
    mode ``j`` is active after the transition. Rows for modes with zero
    predicted probability are left as the indicator of the mode itself.
    """
    predicted = transition.T @ mode_probs
    n = len(mode_probs)
    mix = np.eye(n)
    for j in range(n):
        if predicted[j] > 0:
            mix[j] = transition[:, j] * mode_probs / predicted[j]
    return predicted, mix


def update_mode_probs(predicted: np.ndarray, logliks: Sequence[float]) -> tuple[np.ndarray, float]:
    """Posterior mode probabilities proportional to predicted * likelihood.

    Also returns the log of the normaliser (the mixture predictive likelihood).
    """
    with np.errstate(divide="ignore"):
        lp = np.log(predicted) + np.asarray(logliks, dtype=float)
    lw, log_norm = normalize_log_weights(lp)
    return np.exp(lw), log_norm


def _mixed_belief(beliefs: Sequence[Belief], weights: np.ndarray, n: int,
                  rng: np.random.Generator) -> Belief:
    nz = np.flatnonzero(weights > 0)
    if len(nz) == 1:
        return beliefs[nz[0]]
    particles = np.concatenate([beliefs[i].particles for i in nz])
    with np.errstate(divide="ignore"):
        lw = np.concatenate([math.log(weights[i]) + beliefs[i].log_weights for i in nz])
    lw, _ = normalize_log_weights(lw)
    pooled = Belief(particles, lw)
    return resample_systematic(pooled, rng, n_out=n)


def imm_step(state: IMMState, bank: ModelBank, cfg: IMMConfig, t: int, y,
             belief_rngs: Sequence[np.random.Generator],
             mix_rngs: Sequence[np.random.Generator]) -> IMMState:
    n_modes = len(bank)
    trans = cfg.transition_matrix(n_modes)
    predicted, mix = mixing_weights(state.mode_probs, trans)
    logliks = np.empty(n_modes)
    beliefs = []
    for s in bank:
        n = state.beliefs[s.id].n_particles
        b_in = _mixed_belief(state.beliefs, mix[s.id], n, mix_rngs[s.id])
        try:
            out = pf_step(b_in, s, t, y, belief_rngs[s.id])
        except DegenerateLikelihoodError:
            beliefs.append(b_in)
            logliks[s.id] = -math.inf
            continue
        beliefs.append(out.posterior)
        logliks[s.id] = out.innovation_loglik
    mu, log_norm = update_mode_probs(predicted, logliks)
    return IMMState(mu, tuple(beliefs), logliks, log_norm)


def imm_estimate(state: IMMState) -> np.ndarray:
    means = np.array([belief_mean(b) for b in state.beliefs])
    return state.mode_probs @ means
