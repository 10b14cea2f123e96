"""Cognitive-flexibility structure selection on top of the particle filter.

Each step scores every candidate structure by its negative log innovation
likelihood, averages the scores over a sliding window, and keeps the
incumbent structure unless another one beats it by more than the hysteresis
margin. The belief is then propagated by the ordinary filter under the
selected structure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import (
    Belief,
    DegenerateLikelihoodError,
    InvalidParameterError,
    ModelBank,
    NoViableStructureError,
)
from .pf import innovation_likelihood, pf_step, predict


@dataclass(frozen=True)
class CFConfig:
    delta: float = 1.0
    window: int = 10

    def __post_init__(self):
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise InvalidParameterError(f"hysteresis margin must be >= 0, got {self.delta}")
        if int(self.window) != self.window or self.window < 1:
            raise InvalidParameterError(f"window must be a positive integer, got {self.window}")


@dataclass(frozen=True)
class CFState:
    active: int
    score_windows: tuple[tuple[float, ...], ...]
    switch_count: int = 0
    step_count: int = 0

    @classmethod
    def initial(cls, active: int, n_structures: int) -> "CFState":
        if not 0 <= active < n_structures:
            raise InvalidParameterError(f"initial structure {active} not in bank")
        return cls(active, tuple(() for _ in range(n_structures)))


class CFStepDiagnostics(NamedTuple):
    scores: np.ndarray
    windowed_scores: np.ndarray
    selected: int
    switched: bool
    innovation_loglik: float = math.nan
    ess: float = math.nan


def phi_score(log_innovation_likelihood: float) -> float:
    """Structural inconsistency score; a zero likelihood scores +inf."""
    if log_innovation_likelihood == -math.inf:
        return math.inf
    return -float(log_innovation_likelihood)


def windowed_score(buffer: Sequence[float], window: int) -> float:
    if len(buffer) == 0:
        raise InvalidParameterError("empty score buffer")
    recent = list(buffer)[-window:]
    return math.fsum(recent) / len(recent)


def select_structure(state: CFState, windowed: Sequence[float], cfg: CFConfig) -> int:
    """Hysteresis rule: stay unless the incumbent is worse than the best by more than delta.

    Exact ties among minimisers go to the lowest structure id.
    """
    scores = np.asarray(windowed, dtype=float)
    if np.any(np.isnan(scores)):
        raise InvalidParameterError("NaN structure score")
    best = float(scores.min())
    if best == math.inf:
        raise NoViableStructureError("every candidate structure has infinite score")
    if scores[state.active] <= best + cfg.delta:
        return state.active
    return int(np.flatnonzero(scores == best)[0])


def advance_selection(state: CFState, scores: Sequence[float],
                      cfg: CFConfig) -> tuple[CFState, np.ndarray, int]:
    """Push one round of raw scores and apply the selection rule.

    Windows average whatever entries are available during warm-up.
    Returns the new state, the windowed scores and the selected structure.
    """
    if len(scores) != len(state.score_windows):
        raise InvalidParameterError("one score per structure required")
    windows = tuple((buf + (float(v),))[-cfg.window:]
                    for buf, v in zip(state.score_windows, scores))
    windowed = np.array([windowed_score(w, cfg.window) for w in windows])
    selected = select_structure(state, windowed, cfg)
    switched = selected != state.active
    new = CFState(selected, windows, state.switch_count + switched, state.step_count + 1)
    return new, windowed, selected


def score_structures(b: Belief, bank: ModelBank, t: int, y,
                     score_rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Innovation score of every structure against the current belief."""
    out = np.empty(len(bank))
    for s in bank:
        pred = predict(b, s, t, score_rngs[s.id])
        try:
            out[s.id] = phi_score(innovation_likelihood(pred, s, y))
        except DegenerateLikelihoodError:
            out[s.id] = math.inf
    return out


Scorer = Callable[[Belief, ModelBank, int, object], np.ndarray]


def cf_step(b: Belief, state: CFState, bank: ModelBank, cfg: CFConfig, t: int, y,
            belief_rng: np.random.Generator,
            score_rngs: Sequence[np.random.Generator] | None = None,
            scorer: Scorer | None = None) -> tuple[Belief, CFState, CFStepDiagnostics]:
    """Coupled belief/structure update for one measurement.

    Scores come from ``score_structures`` on the per-structure score streams
    unless ``scorer`` is given (used to inject scripted score sequences).
    The belief stream is only consumed by the committed filter step.
    """
    if scorer is None:
        scores = score_structures(b, bank, t, y, score_rngs)
    else:
        scores = np.asarray(scorer(b, bank, t, y), dtype=float)
    new_state, windowed, selected = advance_selection(state, scores, cfg)
    out = pf_step(b, bank[selected], t, y, belief_rng)
    diag = CFStepDiagnostics(scores, windowed, selected, selected != state.active,
                             out.innovation_loglik, out.ess_before_resample)
    return out.posterior, new_state, diag


def switch_rate(structure_sequence: Sequence[int]) -> float:
    seq = np.asarray(structure_sequence)
    if seq.ndim != 1 or len(seq) < 2:
        raise InvalidParameterError("switch rate needs a sequence of length >= 2")
    return float(np.count_nonzero(seq[1:] != seq[:-1]) / (len(seq) - 1))
