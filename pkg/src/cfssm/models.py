"""Benchmark systems, candidate structures and the four experiment scenarios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .cf import CFConfig
from .core import CFSSMError, InvalidParameterError, ModelBank, gaussian_logpdf
from .imm import IMMConfig


class UnknownScenarioError(CFSSMError, KeyError):
    def __str__(self):
        return f"unknown scenario {self.args[0]!r}"


def growth_mean(z, t, phase=0.0):
    """Deterministic part of the nonlinear growth map."""
    z = np.asarray(z, dtype=float)
    return 0.5 * z + 25.0 * z / (1.0 + z * z) + 8.0 * np.cos(1.2 * t + np.asarray(phase))


def quad_observation(z):
    z = np.asarray(z, dtype=float)
    return z * z / 20.0


def sat_observation(z):
    return np.tanh(quad_observation(z))


OBSERVATION_MAPS = {"quad": quad_observation, "sat": sat_observation}


def growth_transition_1d(z: float, t: int, sigma_w2: float, rng: np.random.Generator) -> float:
    return float(growth_mean(z, t) + math.sqrt(sigma_w2) * rng.standard_normal())


def growth_transition_2d(z, t: int, sigma_w2: float, rng: np.random.Generator,
                         phases=(0.0, 1.0)) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return growth_mean(z, t, np.asarray(phases)) + math.sqrt(sigma_w2) * rng.standard_normal(z.shape)


def linear_transition(z: float, alpha: float, sigma_w2: float, rng: np.random.Generator) -> float:
    return float(alpha * z + math.sqrt(sigma_w2) * rng.standard_normal())


@dataclass(frozen=True)
class GrowthTransition:
    """z+ = growth_mean(z, t, phase_i) + N(0, variance), coordinate-wise."""

    variance: float
    phases: tuple[float, ...] = (0.0,)

    def sample(self, z, t, rng):
        z = np.asarray(z, dtype=float)
        noise = math.sqrt(self.variance) * rng.standard_normal(z.shape)
        return growth_mean(z, t, np.asarray(self.phases)) + noise


@dataclass(frozen=True)
class LinearTransition:
    alpha: float
    variance: float

    def sample(self, z, t, rng):
        z = np.asarray(z, dtype=float)
        return self.alpha * z + math.sqrt(self.variance) * rng.standard_normal(z.shape)


@dataclass(frozen=True)
class GaussianObservation:
    """y_i ~ N(h(z_i), variance) independently per coordinate; h named in OBSERVATION_MAPS."""

    kind: str
    variance: float

    def __post_init__(self):
        if self.kind not in OBSERVATION_MAPS:
            raise InvalidParameterError(f"unknown observation map {self.kind!r}")
        if not self.variance > 0:
            raise InvalidParameterError("observation variance must be positive")

    def mean(self, z):
        return OBSERVATION_MAPS[self.kind](z)

    def log_density(self, y, z):
        z = np.asarray(z, dtype=float)
        return gaussian_logpdf(np.asarray(y, dtype=float), self.mean(z), self.variance).sum(axis=-1)

    def sample(self, z, rng):
        m = self.mean(z)
        return m + math.sqrt(self.variance) * rng.standard_normal(np.shape(m))


@dataclass(frozen=True)
class Scenario:
    name: str
    dim: int
    horizon: int
    true_transition: object
    true_observation: object
    bank: ModelBank
    n_particles: int
    cf_config: CFConfig
    sigma_w2: float
    sigma_v2: float
    sigma0_2: float
    s0: int
    runs: int
    imm_config: Optional[IMMConfig] = None
    change_time: Optional[int] = None
    observation_after_change: object = None
    methods: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidParameterError("dim must be 1 or 2")
        if self.horizon < 2:
            raise InvalidParameterError("horizon must be >= 2")
        if self.n_particles < 1:
            raise InvalidParameterError("need at least one particle")
        if self.runs < 1:
            raise InvalidParameterError("need at least one run")
        for v in (self.sigma_w2, self.sigma_v2, self.sigma0_2):
            if not v > 0:
                raise InvalidParameterError("noise variances must be positive")
        if not 0 <= self.s0 < len(self.bank):
            raise InvalidParameterError("initial structure not in bank")
        if self.change_time is not None:
            if not 0 < self.change_time < self.horizon:
                raise InvalidParameterError(
                    f"change time {self.change_time} must lie strictly inside (0, {self.horizon})")
            if self.observation_after_change is None:
                raise InvalidParameterError("change time given without a post-change observation")

    def observation_at(self, t: int):
        """True observation model generating y_t."""
        if self.change_time is not None and t >= self.change_time:
            return self.observation_after_change
        return self.true_observation


class TrueTrajectory:
    def __init__(self, states: np.ndarray, observations: np.ndarray):
        self.states = states              # (T+1, d), z_0 .. z_T
        self.observations = observations  # (T+1, d), row 0 unused (nan)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1


# Noise defaults for experiments whose variances are not given explicitly.
DEFAULT_SIGMA_W2 = 10.0
DEFAULT_SIGMA_V2 = 1.0
DEFAULT_SIGMA0_2 = 10.0
LINEAR_ALPHA = 0.5

SCENARIO_NAMES = ("exp4_1", "exp4_2", "exp4_3", "exp4_4")

_OVERRIDABLE = {"horizon", "n_particles", "delta", "window", "sigma_w2", "sigma_v2",
                "sigma0_2", "runs", "change_time", "self_transition"}


def build_scenario(name: str, **overrides) -> Scenario:
    """Fully populated scenario for one of the four benchmark experiments.

    Keyword overrides (``horizon``, ``n_particles``, ``delta``, ``window``,
    ``sigma_w2``, ``sigma_v2``, ``sigma0_2``, ``runs``, ``change_time``,
    ``self_transition``) replace the built-in values; ``None`` means keep.
    """
    if name not in SCENARIO_NAMES:
        raise UnknownScenarioError(name)
    unknown = set(overrides) - _OVERRIDABLE
    if unknown:
        raise InvalidParameterError(f"unknown override(s): {sorted(unknown)}")
    ov = {k: v for k, v in overrides.items() if v is not None}

    sw2 = ov.get("sigma_w2", DEFAULT_SIGMA_W2)
    sv2 = ov.get("sigma_v2", DEFAULT_SIGMA_V2)
    s02 = ov.get("sigma0_2", DEFAULT_SIGMA0_2)
    quad = GaussianObservation("quad", sv2)
    sat = GaussianObservation("sat", sv2)

    if name == "exp4_4":
        dim, horizon, runs, n_p, delta = 2, 200, 100, 1000, 2.0
        truth = GrowthTransition(sw2, (0.0, 1.0))
    else:
        dim, horizon, runs, n_p, delta = 1, 400, 50, 2500, 1.0
        truth = GrowthTransition(sw2)

    imm = None
    change_time = None
    after = None
    if name in ("exp4_1", "exp4_4"):
        bank = ModelBank.from_models([
            ("lin", LinearTransition(LINEAR_ALPHA, sw2), quad),
            ("nl", truth, quad),
        ])
        s0 = bank.index("lin")
        methods = ("fixed:lin", "fixed:nl", "cf")
        if name == "exp4_1":
            imm = IMMConfig(ov.get("self_transition", 0.95))
            methods = ("fixed:lin", "fixed:nl", "imm", "cf")
    else:
        n_p = 2000
        bank = ModelBank.from_models([("quad", truth, quad), ("sat", truth, sat)])
        s0 = bank.index("quad")
        methods = ("fixed:quad", "fixed:sat", "cf")
        if name == "exp4_2":
            # the change sits mid-horizon (200 of 400) unless given explicitly
            change_time = ov.get("change_time", ov.get("horizon", horizon) // 2)
            after = sat
    if "change_time" in ov and name != "exp4_2":
        raise InvalidParameterError(f"{name} has no observation change")

    return Scenario(
        name=name,
        dim=dim,
        horizon=ov.get("horizon", horizon),
        true_transition=truth,
        true_observation=quad,
        bank=bank,
        n_particles=ov.get("n_particles", n_p),
        cf_config=CFConfig(ov.get("delta", delta), ov.get("window", 10)),
        sigma_w2=sw2,
        sigma_v2=sv2,
        sigma0_2=s02,
        s0=s0,
        runs=ov.get("runs", runs),
        imm_config=imm,
        change_time=change_time,
        observation_after_change=after,
        methods=methods,
    )


def with_overrides(sc: Scenario, **changes) -> Scenario:
    return replace(sc, **changes)


def simulate_truth(sc: Scenario, rng: np.random.Generator) -> TrueTrajectory:
    """Latent path z_0..z_T and observations y_1..y_T from the data stream."""
    T, d = sc.horizon, sc.dim
    z = np.empty((T + 1, d))
    y = np.full((T + 1, d), np.nan)
    z[0] = math.sqrt(sc.sigma0_2) * rng.standard_normal(d)
    for t in range(T):
        z[t + 1] = sc.true_transition.sample(z[t][None, :], t, rng)[0]
        y[t + 1] = sc.observation_at(t + 1).sample(z[t + 1][None, :], rng)[0]
    return TrueTrajectory(z, y)


def initial_particles(sc: Scenario, rng: np.random.Generator) -> np.ndarray:
    return math.sqrt(sc.sigma0_2) * rng.standard_normal((sc.n_particles, sc.dim))
