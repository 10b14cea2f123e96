import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfssm import oracle
from cfssm.core import Belief, DegenerateLikelihoodError, ModelBank, NumericOverflowError
from cfssm.models import GaussianObservation, GrowthTransition, LinearTransition
from cfssm.pf import (
    PredictedParticles,
    bayes_update,
    innovation_likelihood,
    pf_step,
    predict,
    resample_systematic,
    systematic_indices,
)

DATA = Path(__file__).parent / "data"
TINY = 1e-300  # effectively noise-free transition variance


class Identity:
    def sample(self, z, t, rng):
        return z.copy()


class FixedLogLik:
    """Observation model returning preset per-particle log-likelihoods."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def log_density(self, y, z):
        return self.values


class Blowup:
    def sample(self, z, t, rng):
        out = z.copy()
        out[2] = np.inf
        return out


def structure(transition, observation=None):
    return ModelBank.from_models([("s", transition, observation)])[0]


class TestPredict:
    def test_identity_transition(self, rng):
        b = Belief.uniform(np.array([[1.0], [2.0], [5.0]]))
        pred = predict(b, structure(Identity()), 0, rng)
        np.testing.assert_array_equal(pred.particles, b.particles)
        np.testing.assert_array_equal(pred.log_weights, b.log_weights)

    def test_linear_noise_free(self, rng):
        pred = predict(Belief.uniform([[4.0]]), structure(LinearTransition(0.5, TINY)), 0, rng)
        assert pred.particles[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_growth_two_particles_hand_stepped(self):
        z = np.array([[1.0], [-3.0]])
        t = 2
        noise = math.sqrt(10.0) * np.random.default_rng(5).standard_normal((2, 1))
        pred = predict(Belief.uniform(z), structure(GrowthTransition(10.0)), t,
                       np.random.default_rng(5))
        c = 8 * math.cos(2.4)
        hand = [0.5 + 25 / 2 + c, -1.5 - 75 / 10 + c]
        np.testing.assert_allclose(pred.particles[:, 0], np.array(hand) + noise[:, 0], rtol=1e-14)

    def test_non_finite_reports_index(self, rng):
        with pytest.raises(NumericOverflowError) as err:
            predict(Belief.uniform(np.zeros((4, 1))), structure(Blowup()), 0, rng)
        assert err.value.index == 2


class TestInnovationLikelihood:
    def test_exact_observation_single_particle(self):
        obs = GaussianObservation("quad", 0.7)
        pred = PredictedParticles(np.array([[3.0]]), np.array([0.0]))
        ll = innovation_likelihood(pred, structure(None, obs), np.array([0.45]))
        assert ll == pytest.approx(-0.5 * math.log(2 * math.pi * 0.7), abs=1e-12)

    def test_constant_loglik(self):
        pred = PredictedParticles(np.zeros((2, 1)), np.log([0.5, 0.5]))
        assert innovation_likelihood(pred, structure(None, FixedLogLik([-3.2, -3.2])), 0.0) == \
            pytest.approx(-3.2)

    def test_degenerate(self):
        pred = PredictedParticles(np.zeros((2, 1)), np.log([0.5, 0.5]))
        with pytest.raises(DegenerateLikelihoodError):
            innovation_likelihood(pred, structure(None, FixedLogLik([-np.inf, -np.inf])), 0.0)

    def test_matches_exact_discrete_likelihood(self):
        rng = np.random.default_rng(11)
        hmm = oracle.random_hmm(rng, 3, 3, 1)
        b = np.array([0.2, 0.5, 0.3])
        bank = oracle.to_bank(hmm)
        pred = predict(oracle.belief_from_probs(b, 100_000, rng), bank[0], 0, rng)
        est = math.exp(innovation_likelihood(pred, bank[0], 1))
        exact = math.exp(-oracle.exact_score(b, hmm, 0, 1))
        assert abs(est - exact) / exact < 0.02


class TestBayesUpdate:
    def test_uninformative(self):
        pred = PredictedParticles(np.arange(3.0)[:, None], np.log([0.2, 0.3, 0.5]))
        post = bayes_update(pred, structure(None, FixedLogLik([-1.0] * 3)), 0.0)
        np.testing.assert_allclose(post.weights, [0.2, 0.3, 0.5])

    def test_ratio_three_to_one(self):
        pred = PredictedParticles(np.arange(2.0)[:, None], np.log([0.5, 0.5]))
        post = bayes_update(pred, structure(None, FixedLogLik(np.log([0.3, 0.1]))), 0.0)
        np.testing.assert_allclose(post.weights, [0.75, 0.25])

    def test_prior_times_likelihood_three_particles(self):
        prior = np.array([0.5, 0.3, 0.2])
        lik = np.array([0.1, 0.4, 0.25])
        pred = PredictedParticles(np.arange(3.0)[:, None], np.log(prior))
        post = bayes_update(pred, structure(None, FixedLogLik(np.log(lik))), 0.0)
        np.testing.assert_allclose(post.weights, prior * lik / (prior * lik).sum(), rtol=1e-14)
        np.testing.assert_array_equal(post.particles, pred.particles)


def copy_counts(b_in: Belief, b_out: Belief) -> np.ndarray:
    """Copy count per input particle (particles are distinct integers)."""
    return np.bincount(b_out.particles[:, 0].astype(int), minlength=b_in.n_particles)


class TestResample:
    @pytest.mark.parametrize("u0", [0.0, 0.01, 0.0999])
    def test_uniform_copies_once(self, u0):
        b = Belief.uniform(np.arange(10.0))
        np.testing.assert_array_equal(copy_counts(b, resample_systematic(b, u0=u0)), np.ones(10))

    def test_hand_trace(self):
        b = Belief(np.arange(2.0), np.log([0.5, 0.5]))
        np.testing.assert_array_equal(copy_counts(b, resample_systematic(b, u0=0.25)), [1, 1])

    def test_degenerate_weight(self, rng):
        with np.errstate(divide="ignore"):
            b = Belief(np.arange(3.0), np.log([1.0, 0.0, 0.0]))
        out = resample_systematic(b, rng)
        np.testing.assert_array_equal(out.particles[:, 0], [0, 0, 0])
        np.testing.assert_allclose(out.weights, 1 / 3)

    def test_offset_out_of_range(self):
        with pytest.raises(ValueError):
            resample_systematic(Belief.uniform(np.zeros(4)), u0=0.25)

    @given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=40), st.floats(0.0, 0.999999))
    def test_copy_count_bounds(self, raw, frac):
        w = np.array(raw) / np.sum(raw)
        n = len(w)
        counts = np.bincount(systematic_indices(w, frac / n), minlength=n)
        assert counts.sum() == n
        assert np.all(counts >= np.floor(n * w - 1e-9))
        assert np.all(counts <= np.ceil(n * w + 1e-9))

    def test_unbiased_copy_counts(self):
        w = np.array([0.2, 0.3, 0.25, 0.15, 0.1])
        b = Belief(np.arange(5.0), np.log(w))
        rng = np.random.default_rng(2024)
        total = np.zeros(5)
        reps = 10_000
        for _ in range(reps):
            total += copy_counts(b, resample_systematic(b, rng))
        np.testing.assert_allclose(total / reps, 5 * w, rtol=0.02)


class TestPfStep:
    def test_noise_free_linear_chain(self, rng):
        obs = GaussianObservation("quad", 1.0)
        s = structure(LinearTransition(0.5, TINY), obs)
        b = Belief.uniform(np.full((5, 1), 8.0))
        z = 8.0
        for t in range(4):
            z *= 0.5
            out = pf_step(b, s, t, np.array([z * z / 20]), rng)
            b = out.posterior
            assert abs(b.weights @ b.particles[:, 0] - z) < 1e-9

    def test_one_step_matches_exact_filter(self):
        rng = np.random.default_rng(3)
        hmm = oracle.random_hmm(rng, 4, 3, 1)
        b0 = np.array([0.1, 0.4, 0.3, 0.2])
        bank = oracle.to_bank(hmm)
        b = oracle.belief_from_probs(b0, 100_000, rng)
        out = pf_step(b, bank[0], 0, 2, rng)
        exact, ell = oracle.exact_step(b0, hmm, 0, 2)
        assert oracle.total_variation(oracle.particle_histogram(out.posterior, 4), exact) <= 0.02
        assert out.posterior.is_normalized()

    def test_tv_shrinks_with_particles(self):
        hmm = oracle.random_hmm(np.random.default_rng(8), 3, 3, 1)
        b0 = np.array([0.3, 0.3, 0.4])
        _, ys = oracle.sample_path(hmm, 0, b0, 4, np.random.default_rng(9))
        exact = oracle.exact_filter(b0, hmm, 0, ys[1:])[-1]
        bank = oracle.to_bank(hmm)
        mean_tv = []
        for n in (100, 1_000, 10_000, 100_000):
            tvs = []
            for rep in range(10):
                r = np.random.default_rng([n, rep])
                b = oracle.belief_from_probs(b0, n, r)
                for t in range(1, 5):
                    b = pf_step(b, bank[0], t - 1, ys[t], r).posterior
                tvs.append(oracle.total_variation(oracle.particle_histogram(b, 3), exact))
            mean_tv.append(np.mean(tvs))
        assert all(a >= b for a, b in zip(mean_tv, mean_tv[1:]))
        assert mean_tv[-1] <= 0.02

    def test_golden_trace(self):
        gold = json.loads((DATA / "golden_pf_trace.json").read_text())
        bank = ModelBank.from_models([("nl", GrowthTransition(gold["sigma_w2"]),
                                       GaussianObservation("quad", gold["sigma_v2"]))])
        rng = np.random.default_rng(gold["seed"])
        b = Belief.uniform(np.array(gold["initial"])[:, None])
        for step in gold["steps"]:
            out = pf_step(b, bank[0], step["t"], np.array([step["y"]]), rng)
            b = out.posterior
            np.testing.assert_allclose(b.particles[:, 0], step["particles"], rtol=1e-12)
            assert out.innovation_loglik == pytest.approx(step["loglik"], rel=1e-12)
            assert out.ess_before_resample == pytest.approx(step["ess"], rel=1e-12)
