"""Executable checks of the CF guarantees, backed by exact discrete inference."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracle
from .bench import MethodId, run_method
from .cf import CFConfig, CFState, advance_selection, cf_step
from .core import Belief, CFSSMError, RngStreams
from .models import SCENARIO_NAMES, build_scenario, initial_particles, simulate_truth
from .pf import innovation_likelihood, pf_step, predict


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _random_instance(rng: np.random.Generator, n_structures=2) -> tuple[oracle.DiscreteHMM, np.ndarray]:
    n = int(rng.integers(2, 5))
    m = int(rng.integers(2, 5))
    hmm = oracle.random_hmm(rng, n, m, n_structures)
    b0 = rng.dirichlet(np.ones(n))
    return hmm, b0 / b0.sum()


def check_normalization(seed: int = 0, runs: int = 1, **_) -> PropertyResult:
    """Every belief of every method of every experiment sums to one (1e-9)."""
    checked = 0
    for name in SCENARIO_NAMES:
        sc = build_scenario(name)
        for m in sc.methods:
            for r in range(runs):
                try:
                    run_method(sc, MethodId.parse(m), r, seed, check_invariants=True)
                except CFSSMError as exc:
                    return PropertyResult("normalization", False,
                                          f"{name} {m} run {r} seed {seed}: {exc}")
                checked += sc.horizon
    return PropertyResult("normalization", True, f"{checked} filter steps normalized")


def check_descent(seed: int = 0, instances: int = 50, horizon: int = 30, **_) -> PropertyResult:
    """Exact-score CF with delta = 0 never selects a structure scoring above another."""
    steps = 0
    for i in range(instances):
        rng = np.random.default_rng([seed, 1, i])
        n_s = int(rng.integers(2, 4))
        hmm, b0 = _random_instance(rng, n_s)
        _, ys = oracle.sample_path(hmm, int(rng.integers(n_s)), b0, horizon, rng)
        for window in (1, 3):
            cfg = CFConfig(0.0, window)
            state = CFState.initial(0, n_s)
            b = b0
            for t in range(1, horizon + 1):
                scores = oracle.exact_scores(b, hmm, ys[t])
                state, windowed, sel = advance_selection(state, scores, cfg)
                target = scores if window == 1 else windowed
                if np.any(target[sel] > target):
                    return PropertyResult(
                        "descent", False,
                        f"instance {i} seed {seed} W={window} t={t}: selected {sel} "
                        f"scores {target.tolist()}")
                b = oracle.exact_step(b, hmm, sel, ys[t])[0]
                steps += 1
    return PropertyResult("descent", True, f"{steps} exact steps, zero tolerance")


def scripted_scores(rng: np.random.Generator, n_s: int, horizon: int, t0: int,
                    best: int, gap: float) -> np.ndarray:
    """Score stream that is arbitrary before t0 and separated by > ``gap`` from t0 on."""
    scores = rng.normal(5.0, 3.0, size=(horizon, n_s))
    for t in range(t0, horizon):
        base = rng.normal(2.0, 1.0)
        scores[t] = base + gap + rng.exponential(1.0, size=n_s)
        scores[t, best] = base
    return scores


def check_finite_switching(seed: int = 0, scripts: int = 100, delta: float = 1.0,
                           **_) -> PropertyResult:
    """Under score separation larger than delta: at most one switch, then locked."""
    for i in range(scripts):
        rng = np.random.default_rng([seed, 2, i])
        n_s = int(rng.integers(2, 5))
        horizon = 200
        t0 = int(rng.integers(10, 120))
        best = int(rng.integers(n_s))
        gap = delta + float(rng.uniform(0.05, 2.0))
        scores = scripted_scores(rng, n_s, horizon, t0, best, gap)
        for window in (1, 10):
            # the windowed scores are separated once the window holds only post-t0 entries
            t_sep = t0 + window - 1
            state = CFState.initial(int(rng.integers(n_s)), n_s)
            seq = []
            for t in range(horizon):
                state, _, sel = advance_selection(state, scores[t], CFConfig(delta, window))
                seq.append(sel)
            seq = np.array(seq)
            after = seq[t_sep - 1:]
            n_switch = int(np.count_nonzero(after[1:] != after[:-1]))
            if n_switch > 1 or after[-1] != best or np.any(seq[t_sep:] != best):
                return PropertyResult(
                    "finite_switching", False,
                    f"script {i} seed {seed} W={window}: {n_switch} switches after "
                    f"t0={t0}, final {after[-1]} expected {best}")
    return PropertyResult("finite_switching", True,
                          f"{scripts} scripts x 2 windows, delta={delta}")


def check_non_intrusiveness(seed: int = 0, scripts: int = 5, horizon: int = 60,
                            n_particles: int = 300, **_) -> PropertyResult:
    """With the incumbent score-dominant, CF's beliefs equal the fixed filter's bit for bit."""
    for name in SCENARIO_NAMES:
        sc = build_scenario(name, horizon=horizon, n_particles=n_particles,
                            change_time=horizon // 2 if name == "exp4_2" else None)
        for i in range(scripts):
            rng = np.random.default_rng([seed, 3, i])
            n_s = len(sc.bank)
            scores = rng.normal(3.0, 1.0, size=(horizon, n_s))
            scores[:, sc.s0] = scores.min(axis=1) - rng.exponential(0.5, size=horizon)
            streams = RngStreams(seed + i)
            truth = simulate_truth(sc, streams.stream("data", i))
            b0 = Belief.uniform(initial_particles(sc, streams.stream("init", i)))
            rng_cf = streams.stream("belief", i, sc.s0)
            rng_fx = streams.stream("belief", i, sc.s0)
            b_cf = b_fx = b0
            state = CFState.initial(sc.s0, n_s)
            for k in range(horizon):
                y = truth.observations[k + 1]
                b_cf, state, diag = cf_step(
                    b_cf, state, sc.bank, sc.cf_config, k, y, rng_cf,
                    scorer=lambda *_a, k=k: scores[k])
                b_fx = pf_step(b_fx, sc.bank[sc.s0], k, y, rng_fx).posterior
                if diag.switched or not (
                        np.array_equal(b_cf.particles, b_fx.particles)
                        and np.array_equal(b_cf.log_weights, b_fx.log_weights)):
                    return PropertyResult(
                        "non_intrusiveness", False,
                        f"{name} script {i} seed {seed}: divergence at step {k + 1}")
    return PropertyResult("non_intrusiveness", True,
                          f"{len(SCENARIO_NAMES)} scenarios x {scripts} scripts bitwise equal")


def check_hull_separation(seed: int = 0, instances: int = 50, **_) -> PropertyResult:
    """Interior mixtures of distinct exact updates are off the vertex set; CF lands on one."""
    done = attempts = 0
    while done < instances:
        rng = np.random.default_rng([seed, 4, attempts])
        attempts += 1
        n_s = int(rng.integers(2, 4))
        hmm, b = _random_instance(rng, n_s)
        y = int(rng.integers(hmm.n_symbols))
        updates = np.array([oracle.exact_step(b, hmm, s, y)[0] for s in range(n_s)])
        gaps = [np.linalg.norm(updates[i] - updates[j])
                for i in range(n_s) for j in range(i + 1, n_s)]
        if min(gaps) < 1e-6:
            continue
        w = rng.dirichlet(np.ones(n_s))
        dist, vertex = oracle.hull_separation_check(b, hmm, w / w.sum(), y)
        if not (dist > 1e-9 and vertex):
            return PropertyResult("hull_separation", False,
                                  f"attempt {attempts - 1} seed {seed}: distance {dist}, "
                                  f"cf_is_vertex {vertex}")
        done += 1
    return PropertyResult("hull_separation", True, f"{instances} instances separated")


def check_pf_oracle(seed: int = 0, instances: int = 20, n_particles: int = 100_000,
                    horizon: int = 5, tol: float = 0.02, **_) -> PropertyResult:
    """Particle posteriors approach the exact discrete filter (TV <= tol)."""
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([seed, 5, i])
        hmm, b0 = _random_instance(rng, 1)
        _, ys = oracle.sample_path(hmm, 0, b0, horizon, rng)
        bank = oracle.to_bank(hmm)
        pf_rng = np.random.default_rng([seed, 6, i])
        b = oracle.belief_from_probs(b0, n_particles, pf_rng)
        exact = b0
        for t in range(1, horizon + 1):
            b = pf_step(b, bank[0], t - 1, ys[t], pf_rng).posterior
            exact = oracle.exact_step(exact, hmm, 0, ys[t])[0]
        tv = oracle.total_variation(oracle.particle_histogram(b, hmm.n_states), exact)
        worst = max(worst, tv)
        if tv > tol:
            return PropertyResult("pf_oracle", False,
                                  f"instance {i} seed {seed}: TV {tv:.4f} > {tol}")
    return PropertyResult("pf_oracle", True,
                          f"{instances} instances, N_p={n_particles}, worst TV {worst:.4f}")


def pf_likelihood_error(hmm: oracle.DiscreteHMM, b, y: int, n_particles: int,
                        rng: np.random.Generator) -> float:
    """Relative error of the particle innovation likelihood against the exact one."""
    bank = oracle.to_bank(hmm)
    pred = predict(oracle.belief_from_probs(b, n_particles, rng), bank[0], 0, rng)
    est = math.exp(innovation_likelihood(pred, bank[0], y))
    exact = math.exp(-oracle.exact_score(b, hmm, 0, y))
    return abs(est - exact) / exact


PROPERTIES: dict[str, Callable[..., PropertyResult]] = {
    "normalization": check_normalization,
    "descent": check_descent,
    "finite_switching": check_finite_switching,
    "non_intrusiveness": check_non_intrusiveness,
    "hull_separation": check_hull_separation,
    "pf_oracle": check_pf_oracle,
}


def run_properties(names=None, seed: int = 0, delta: float = 1.0) -> list[PropertyResult]:
    names = list(PROPERTIES) if not names else list(names)
    results = []
    for n in names:
        try:
            results.append(PROPERTIES[n](seed=seed, delta=delta))
        except CFSSMError as exc:
            results.append(PropertyResult(n, False, f"seed {seed}: {exc}"))
    return results
