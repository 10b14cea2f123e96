"""Beliefs, Gaussian densities, model banks and seeded random streams."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

NORMALIZATION_TOL = 1e-9


class CFSSMError(Exception):
    """Base class for library errors."""


class InvalidParameterError(CFSSMError, ValueError):
    pass


class DegenerateLikelihoodError(CFSSMError):
    """Every particle received zero likelihood (estimated likelihood is 0)."""


class NumericOverflowError(CFSSMError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class NoViableStructureError(CFSSMError):
    pass


class InvariantViolation(CFSSMError, AssertionError):
    pass


def gaussian_logpdf(x, mean, variance):
    """Log-density of N(mean, variance) at x. Broadcasts over arrays."""
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise InvalidParameterError(f"variance must be positive, got {variance}")
    resid = np.asarray(x, dtype=float) - mean
    out = -0.5 * (LOG_2PI + np.log(variance)) - resid * resid / (2.0 * variance)
    return float(out) if np.ndim(out) == 0 else out


def normalize_log_weights(log_weights) -> tuple[np.ndarray, float]:
    """Shift-by-max log-sum-exp normalisation.

    Returns the normalised log-weights and the log of the original total mass.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise InvalidParameterError("empty weight vector")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise InvalidParameterError("log-weights must be finite or -inf")
    m = lw.max()
    if m == -np.inf:
        raise DegenerateLikelihoodError("all log-weights are -inf")
    log_norm = m + math.log(np.exp(lw - m).sum())
    return lw - log_norm, float(log_norm)


@dataclass(frozen=True, eq=False)
class Belief:
    """Weighted particle approximation of a belief.

    ``particles`` has shape (N, d); ``log_weights`` has shape (N,).
    """

    particles: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        lw = np.asarray(self.log_weights, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or lw.shape != (p.shape[0],):
            raise InvalidParameterError(
                f"inconsistent belief shapes {p.shape} / {lw.shape}")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, particles) -> "Belief":
        p = np.asarray(particles, dtype=float)
        n = p.shape[0]
        return cls(p, np.full(n, -math.log(n)))

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def is_normalized(self, tol: float = NORMALIZATION_TOL) -> bool:
        return (
            abs(self.weights.sum() - 1.0) <= tol
            and bool(np.all(np.isfinite(self.log_weights)))
            and bool(np.all(np.isfinite(self.particles)))
        )

    def check(self, tol: float = NORMALIZATION_TOL) -> "Belief":
        if not self.is_normalized(tol):
            raise InvariantViolation(
                f"belief not normalized: sum of weights = {self.weights.sum()!r}")
        return self


def belief_mean(b: Belief) -> np.ndarray:
    return b.weights @ b.particles


def effective_sample_size(b: Belief) -> float:
    w = b.weights
    return float(1.0 / np.dot(w, w))


class TransitionModel(Protocol):
    def sample(self, z: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        """Draw z_{t+1} for every row of ``z`` (shape (N, d))."""
        ...


class ObservationModel(Protocol):
    def log_density(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Log q(y | z) for every row of ``z``; returns shape (N,)."""
        ...

    def sample(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


@dataclass(frozen=True)
class Structure:
    id: int
    label: str
    transition: Any
    observation: Any


@dataclass(frozen=True)
class ModelBank:
    structures: tuple[Structure, ...]

    def __post_init__(self):
        structs = tuple(self.structures)
        if not structs:
            raise InvalidParameterError("model bank must be non-empty")
        for i, s in enumerate(structs):
            if s.id != i:
                raise InvalidParameterError(
                    f"structure ids must be 0..{len(structs) - 1} in bank order")
        if len({s.label for s in structs}) != len(structs):
            raise InvalidParameterError("structure labels must be unique")
        object.__setattr__(self, "structures", structs)

    @classmethod
    def from_models(cls, models: Sequence[tuple[str, Any, Any]]) -> "ModelBank":
        """Build a bank from ``(label, transition, observation)`` triples."""
        return cls(tuple(Structure(i, lab, tr, ob) for i, (lab, tr, ob) in enumerate(models)))

    def __len__(self) -> int:
        return len(self.structures)

    def __iter__(self):
        return iter(self.structures)

    def __getitem__(self, i: int) -> Structure:
        return self.structures[i]

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.structures]

    def index(self, label: str) -> int:
        for s in self.structures:
            if s.label == label:
                return s.id
        raise KeyError(label)


# Purpose tags for substreams. ``belief`` and ``score`` carry a structure slot.
PURPOSES = {"data": 0, "belief": 1, "score": 2, "init": 3, "mix": 4}


@dataclass(frozen=True)
class RngStreams:
    """Named, reproducible random substreams derived from one master seed.

    A key ``(purpose, run_index, structure_id)`` always maps to the same
    draw sequence for a given master seed; distinct keys are independent
    (``numpy.random.SeedSequence`` spawn keys).
    """

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidParameterError("master seed must be a 64-bit unsigned integer")

    def stream(self, purpose: str, run_index: int = 0, structure_id: int = 0) -> np.random.Generator:
        """A fresh generator positioned at the start of the keyed stream."""
        try:
            tag = PURPOSES[purpose]
        except KeyError:
            raise InvalidParameterError(f"unknown stream purpose {purpose!r}") from None
        ss = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(tag, int(run_index), int(structure_id)))
        return np.random.Generator(np.random.PCG64(ss))
