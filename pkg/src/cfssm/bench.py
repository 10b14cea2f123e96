"""Monte-Carlo runner: fixed-structure, CF and IMM methods on shared data."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cf import CFState, cf_step, score_structures, switch_rate
from .core import (
    Belief,
    CFSSMError,
    InvalidParameterError,
    InvariantViolation,
    RngStreams,
    belief_mean,
)
from .imm import IMMState, imm_estimate, imm_step
from .models import Scenario, initial_particles, simulate_truth
from .pf import pf_step


@dataclass(frozen=True)
class MethodId:
    kind: str            # "fixed" | "cf" | "imm"
    structure: str = ""  # label, fixed methods only

    @classmethod
    def parse(cls, text: str) -> "MethodId":
        text = text.strip()
        if text in ("cf", "imm"):
            return cls(text)
        kind, _, label = text.partition(":")
        if kind == "fixed" and label:
            return cls("fixed", label)
        raise InvalidParameterError(f"unknown method {text!r} (use cf, imm or fixed:<label>)")

    def __str__(self) -> str:
        return f"fixed:{self.structure}" if self.kind == "fixed" else self.kind

    @property
    def slug(self) -> str:
        return str(self).replace(":", "-")


@dataclass(eq=False)
class Trace:
    """Per-step record for t = 1..T. ``phi[k, s]`` scores y_{k+1} against B_k."""

    z_true: np.ndarray   # (T, d)
    z_hat: np.ndarray    # (T, d)
    s: np.ndarray        # (T,) structure that produced B_t
    phi: np.ndarray      # (T, |S|)
    loglik: np.ndarray   # (T,)
    ess: np.ndarray      # (T,)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, len(self.s) + 1)

    def __len__(self) -> int:
        return len(self.s)

    def identical_to(self, other: "Trace") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
                   for f in ("z_true", "z_hat", "s", "phi", "loglik", "ess"))


@dataclass(eq=False)
class RunResult:
    method: MethodId
    run_index: int
    trace: Trace
    rmse: float
    phi_bar: float
    switch_rate: float


class RunFailure(CFSSMError):
    pass


def rmse(z_hat, z_true) -> float:
    err = np.asarray(z_hat, dtype=float) - np.asarray(z_true, dtype=float)
    if err.ndim == 1:
        err = err[:, None]
    if len(err) == 0:
        raise InvalidParameterError("empty trace")
    return float(math.sqrt(np.mean(np.sum(err * err, axis=1))))


def phi_bar(phi, s) -> float:
    """Mean score of the incumbent: average over t=1..T-1 of phi[t][s[t-1]] (0-based rows)."""
    phi = np.asarray(phi, dtype=float)
    s = np.asarray(s, dtype=int)
    if len(s) < 2:
        raise InvalidParameterError("phi_bar needs at least two steps")
    return float(np.mean(phi[np.arange(1, len(s)), s[:-1]]))


def _estimate(b: Belief) -> np.ndarray:
    return belief_mean(b)


def run_method(sc: Scenario, method: MethodId | str, run_index: int, master_seed: int,
               check_invariants: bool = True) -> RunResult:
    if isinstance(method, str):
        method = MethodId.parse(method)
    bank = sc.bank
    n_s = len(bank)
    rngs = RngStreams(master_seed)
    truth = simulate_truth(sc, rngs.stream("data", run_index))
    b0 = Belief.uniform(initial_particles(sc, rngs.stream("init", run_index)))
    score_rngs = [rngs.stream("score", run_index, s.id) for s in bank]

    T = sc.horizon
    z_hat = np.empty((T, sc.dim))
    s_seq = np.empty(T, dtype=int)
    phi = np.empty((T, n_s))
    loglik = np.empty(T)
    ess = np.empty(T)

    def fail(t, exc):
        raise RunFailure(f"{sc.name} {method} run {run_index} step {t}: {exc}") from exc

    if method.kind == "fixed":
        try:
            sid = bank.index(method.structure)
        except KeyError:
            raise InvalidParameterError(
                f"structure {method.structure!r} not in bank {bank.labels}") from None
        belief_rng = rngs.stream("belief", run_index, sid)
        b = b0
        for k in range(T):
            t, y = k + 1, truth.observations[k + 1]
            try:
                phi[k] = score_structures(b, bank, t - 1, y, score_rngs)
                out = pf_step(b, bank[sid], t - 1, y, belief_rng)
            except CFSSMError as exc:
                fail(t, exc)
            b = out.posterior
            if check_invariants:
                b.check()
            z_hat[k], s_seq[k], loglik[k], ess[k] = (
                _estimate(b), sid, out.innovation_loglik, out.ess_before_resample)

    elif method.kind == "cf":
        cfg = sc.cf_config
        belief_rng = rngs.stream("belief", run_index, sc.s0)
        state = CFState.initial(sc.s0, n_s)
        b = b0
        for k in range(T):
            t, y = k + 1, truth.observations[k + 1]
            prev = state.active
            try:
                b, state, diag = cf_step(b, state, bank, cfg, t - 1, y, belief_rng, score_rngs)
            except CFSSMError as exc:
                fail(t, exc)
            if check_invariants:
                b.check()
                w = diag.windowed_scores
                if diag.switched and not w[prev] > w.min() + cfg.delta:
                    raise InvariantViolation(f"switch without hysteresis violation at t={t}")
            phi[k] = diag.scores
            z_hat[k], s_seq[k], loglik[k], ess[k] = (
                _estimate(b), diag.selected, diag.innovation_loglik, diag.ess)

    elif method.kind == "imm":
        if sc.imm_config is None:
            raise InvalidParameterError(f"scenario {sc.name} has no IMM configuration")
        belief_rngs = [rngs.stream("belief", run_index, s.id) for s in bank]
        mix_rngs = [rngs.stream("mix", run_index, s.id) for s in bank]
        state = IMMState.initial(b0, n_s)
        for k in range(T):
            t, y = k + 1, truth.observations[k + 1]
            try:
                state = imm_step(state, bank, sc.imm_config, t - 1, y, belief_rngs, mix_rngs)
            except CFSSMError as exc:
                fail(t, exc)
            if check_invariants:
                for bb in state.beliefs:
                    bb.check()
                if abs(state.mode_probs.sum() - 1.0) > 1e-9:
                    raise InvariantViolation(f"mode probabilities off the simplex at t={t}")
            z_hat[k] = imm_estimate(state)
            s_seq[k] = int(np.argmax(state.mode_probs))
            phi[k] = -state.logliks
            loglik[k] = state.loglik
            ess[k] = math.nan
    else:
        raise InvalidParameterError(f"unknown method {method}")

    trace = Trace(truth.states[1:].copy(), z_hat, s_seq, phi, loglik, ess)
    return RunResult(method, run_index, trace, rmse(z_hat, trace.z_true),
                     phi_bar(phi, s_seq), switch_rate(s_seq))


SUMMARY_FIELDS = ("experiment", "method", "runs", "rmse_mean", "rmse_se", "phi_bar_mean",
                  "phi_bar_se", "switch_rate_mean", "switch_rate_se", "seed")


@dataclass(frozen=True)
class SummaryRow:
    experiment: str
    method: str
    runs: int
    rmse_mean: float
    rmse_se: float
    phi_bar_mean: float
    phi_bar_se: float
    switch_rate_mean: float
    switch_rate_se: float
    seed: int


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    mean = math.fsum(v) / len(v)
    if len(v) < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2) / (len(v) - 1)
    return mean, math.sqrt(var / len(v))


def summarize(experiment: str, results: Sequence[RunResult], seed: int) -> list[SummaryRow]:
    """One row per method, in order of first appearance; runs sorted by index."""
    rows = []
    order = list(dict.fromkeys(str(r.method) for r in results))
    for m in order:
        rs = sorted((r for r in results if str(r.method) == m), key=lambda r: r.run_index)
        rm = _mean_se([r.rmse for r in rs])
        pb = _mean_se([r.phi_bar for r in rs])
        sw = _mean_se([r.switch_rate for r in rs])
        rows.append(SummaryRow(experiment, m, len(rs), *rm, *pb, *sw, seed))
    return rows


def _run_task(args):
    sc, method, run_index, seed = args
    return run_method(sc, method, run_index, seed)


def monte_carlo(sc: Scenario, methods: Iterable[str | MethodId] | None = None,
                runs: int | None = None, master_seed: int = 0,
                parallelism: int = 1) -> tuple[list[SummaryRow], list[RunResult]]:
    """Run every method on ``runs`` independent data sets.

    Output is independent of ``parallelism``: results are re-sorted by
    (method, run index) before aggregation.
    """
    methods = [MethodId.parse(m) if isinstance(m, str) else m
               for m in (methods if methods is not None else sc.methods)]
    runs = sc.runs if runs is None else runs
    if runs < 1:
        raise InvalidParameterError("runs must be >= 1")
    tasks = [(sc, m, r, master_seed) for m in methods for r in range(runs)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * parallelism))))
    else:
        results = [_run_task(t) for t in tasks]
    rank = {str(m): i for i, m in enumerate(methods)}
    results.sort(key=lambda r: (rank[str(r.method)], r.run_index))
    return summarize(sc.name, results, master_seed), results
