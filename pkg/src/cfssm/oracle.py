"""Exact filtering on small discrete hidden-Markov instances.

Each structure of a :class:`DiscreteHMM` owns a transition matrix and an
emission matrix over a finite alphabet; every quantity the particle code
estimates (predictive likelihood, posterior, IMM mode probabilities) has a
closed form here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Belief, DegenerateLikelihoodError, InvalidParameterError, ModelBank

MAX_STATES = 8
SIMPLEX_TOL = 1e-12


def check_simplex(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise InvalidParameterError(f"not a probability vector: {p}")
    return p


@dataclass(frozen=True, eq=False)
class DiscreteHMM:
    transitions: np.ndarray  # (S, n, n), row-stochastic
    emissions: np.ndarray    # (S, n, m), row-stochastic

    def __post_init__(self):
        tr = np.asarray(self.transitions, dtype=float)
        em = np.asarray(self.emissions, dtype=float)
        if tr.ndim == 2:
            tr = tr[None]
        if em.ndim == 2:
            em = em[None]
        if tr.ndim != 3 or tr.shape[1] != tr.shape[2]:
            raise InvalidParameterError("transitions must have shape (S, n, n)")
        if em.ndim != 3 or em.shape[:2] != tr.shape[:2]:
            raise InvalidParameterError("emissions must have shape (S, n, m)")
        if tr.shape[1] > MAX_STATES:
            raise InvalidParameterError(f"at most {MAX_STATES} states supported")
        for m in (tr, em):
            if np.any(m < 0) or np.any(np.abs(m.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
                raise InvalidParameterError("matrices must be row-stochastic")
        object.__setattr__(self, "transitions", tr)
        object.__setattr__(self, "emissions", em)

    @property
    def n_structures(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_symbols(self) -> int:
        return self.emissions.shape[2]


def _flat_dirichlet_rows(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    m = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    # renormalise so rows pass the 1e-12 check exactly enough
    return m / m.sum(axis=-1, keepdims=True)


def random_hmm(rng: np.random.Generator, n_states: int, n_symbols: int,
               n_structures: int = 2) -> DiscreteHMM:
    return DiscreteHMM(
        _flat_dirichlet_rows(rng, (n_structures, n_states, n_states)),
        _flat_dirichlet_rows(rng, (n_structures, n_states, n_symbols)),
    )


def exact_predict(b, hmm: DiscreteHMM, s: int) -> np.ndarray:
    return check_simplex(b, 1e-9) @ hmm.transitions[s]


def exact_update(b_pred, hmm: DiscreteHMM, s: int, y: int) -> tuple[np.ndarray, float]:
    """Posterior over states and the exact predictive likelihood of ``y``."""
    joint = np.asarray(b_pred, dtype=float) * hmm.emissions[s][:, int(y)]
    ell = float(joint.sum())
    if ell <= 0.0:
        raise DegenerateLikelihoodError(f"symbol {y} impossible under structure {s}")
    return joint / ell, ell


def exact_step(b, hmm: DiscreteHMM, s: int, y: int) -> tuple[np.ndarray, float]:
    return exact_update(exact_predict(b, hmm, s), hmm, s, y)


def exact_score(b, hmm: DiscreteHMM, s: int, y: int) -> float:
    ell = float(exact_predict(b, hmm, s) @ hmm.emissions[s][:, int(y)])
    return math.inf if ell <= 0.0 else -math.log(ell)


def exact_scores(b, hmm: DiscreteHMM, y: int) -> np.ndarray:
    return np.array([exact_score(b, hmm, s, y) for s in range(hmm.n_structures)])


def exact_filter(b0, hmm: DiscreteHMM, s: int, ys: Sequence[int]) -> list[np.ndarray]:
    out = [np.asarray(b0, dtype=float)]
    for y in ys:
        out.append(exact_step(out[-1], hmm, s, y)[0])
    return out


def exact_imm_step(mode_probs, beliefs: Sequence[np.ndarray], hmm: DiscreteHMM,
                   transition: np.ndarray, y: int):
    """Classical IMM recursion with exact per-mode filters.

    Returns (mode_probs, beliefs, per-mode likelihoods).
    """
    mu = np.asarray(mode_probs, dtype=float)
    predicted = transition.T @ mu
    n = len(mu)
    new_beliefs, ells = [], np.empty(n)
    for j in range(n):
        w = transition[:, j] * mu / predicted[j] if predicted[j] > 0 else np.eye(n)[j]
        mixed = sum(w[i] * np.asarray(beliefs[i]) for i in range(n))
        post, ell = exact_step(mixed, hmm, j, y)
        new_beliefs.append(post)
        ells[j] = ell
    new_mu = predicted * ells
    return new_mu / new_mu.sum(), new_beliefs, ells


def cf_select_exact(active: int, scores: np.ndarray, delta: float) -> int:
    best = scores.min()
    if scores[active] <= best + delta:
        return active
    return int(np.flatnonzero(scores == best)[0])


def hull_separation_check(b, hmm: DiscreteHMM, mix_weights, y: int) -> tuple[float, bool]:
    """Distance from the IMM-style mixture of exact updates to the nearest single update.

    Also reports whether the CF update (argmin-score structure, lowest id on
    ties) coincides with one of the per-structure updates.
    """
    w = check_simplex(mix_weights, 1e-9)
    updates = np.array([exact_step(b, hmm, s, y)[0] for s in range(hmm.n_structures)])
    mixture = w @ updates
    distance = float(np.min(np.linalg.norm(updates - mixture, axis=1)))
    scores = exact_scores(b, hmm, y)
    chosen = int(np.flatnonzero(scores == scores.min())[0])
    cf_update = exact_step(b, hmm, chosen, y)[0]
    cf_is_vertex = any(np.array_equal(cf_update, u) for u in updates)
    return distance, cf_is_vertex


def sample_path(hmm: DiscreteHMM, s: int, b0, horizon: int,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """States x_0..x_T and symbols y_1..y_T (``ys[0]`` is unused, -1)."""
    xs = np.empty(horizon + 1, dtype=int)
    ys = np.full(horizon + 1, -1, dtype=int)
    xs[0] = rng.choice(hmm.n_states, p=b0)
    for t in range(horizon):
        xs[t + 1] = rng.choice(hmm.n_states, p=hmm.transitions[s][xs[t]])
        ys[t + 1] = rng.choice(hmm.n_symbols, p=hmm.emissions[s][xs[t + 1]])
    return xs, ys


class DiscreteTransition:
    """Transition sampler over state indices stored as floats in an (N, 1) array."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        self._cdf = np.cumsum(self.matrix, axis=1)
        self._cdf[:, -1] = 1.0

    def sample(self, z, t, rng):
        idx = np.asarray(z, dtype=float)[:, 0].astype(int)
        u = rng.random(len(idx))
        nxt = (self._cdf[idx] <= u[:, None]).sum(axis=1)
        return np.minimum(nxt, self.matrix.shape[1] - 1).astype(float)[:, None]


class DiscreteEmission:
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        with np.errstate(divide="ignore"):
            self._log = np.log(self.matrix)

    def log_density(self, y, z):
        sym = int(np.ravel(y)[0])
        return self._log[np.asarray(z, dtype=float)[:, 0].astype(int), sym]

    def sample(self, z, rng):
        idx = np.asarray(z, dtype=float)[:, 0].astype(int)
        return np.array([[rng.choice(self.matrix.shape[1], p=self.matrix[i])] for i in idx], float)


def to_bank(hmm: DiscreteHMM) -> ModelBank:
    return ModelBank.from_models([
        (f"s{s}", DiscreteTransition(hmm.transitions[s]), DiscreteEmission(hmm.emissions[s]))
        for s in range(hmm.n_structures)
    ])


def belief_from_probs(probs, n_particles: int, rng: np.random.Generator) -> Belief:
    """Equally weighted particles drawn from a discrete distribution."""
    states = rng.choice(len(probs), size=n_particles, p=probs)
    return Belief.uniform(states.astype(float)[:, None])


def particle_histogram(b: Belief, n_states: int) -> np.ndarray:
    idx = b.particles[:, 0].astype(int)
    return np.bincount(idx, weights=b.weights, minlength=n_states)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
