import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmip.flow import cond_rate_rows, cosine_schedule, sample_categorical
from fmip.guidance import (
    Candidate,
    CandidatePool,
    GuidanceConfig,
    boltzmann_weights,
    empirical_marginals,
    guided_cont_step,
    guided_rate_matrix,
    normalized_instance,
    sample_solutions,
)
from fmip.milp import from_dense, target_f


def oracle(label, inst):
    """Predictor that always returns the label as clean data."""
    q, K = inst.num_int, inst.int_bound
    onehot = np.eye(K + 1)[np.asarray(label[:q], dtype=int)]

    def predict(D, C, t):
        B = len(D)
        return np.broadcast_to(onehot, (B, q, K + 1)), np.broadcast_to(label[q:], (B, inst.num_cont))

    return predict


class TestConfig:
    def test_defaults(self):
        cfg = GuidanceConfig()
        assert (cfg.gamma, cfg.rho, cfg.tau, cfg.n_samples, cfg.n_iter) == (100.0, 1e-2, 1.0, 8, 3)

    @pytest.mark.parametrize("kwargs", [dict(gamma=-1), dict(rho=0), dict(tau=0), dict(n_samples=0),
                                        dict(n_iter=-1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GuidanceConfig(**kwargs)


class TestBoltzmann:
    def test_three_to_one(self):
        np.testing.assert_allclose(boltzmann_weights([0.0, 2.0 * math.log(3)], 2.0), [0.75, 0.25])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(-1e4, 1e4),
           st.floats(0.01, 100))
    def test_shift_invariant(self, f, shift, tau):
        f = np.array(f)
        np.testing.assert_allclose(boltzmann_weights(f + shift, tau), boltzmann_weights(f, tau),
                                   atol=1e-9)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_joint_scaling(self, f, tau, s):
        f = np.array(f)
        np.testing.assert_allclose(boltzmann_weights(s * f, s * tau), boltzmann_weights(f, tau), atol=1e-9)

    def test_extreme_values_do_not_underflow(self):
        w = boltzmann_weights([1e6, 1e6 + 1], 1e-3)
        assert np.all(np.isfinite(w)) and w[0] == pytest.approx(1.0)

    def test_degenerate_fallback(self, caplog):
        with caplog.at_level(logging.WARNING):
            w = boltzmann_weights([np.inf, np.inf], 1.0)
        np.testing.assert_array_equal(w, [0.5, 0.5])
        assert "degenerate" in caplog.text


class TestGuidedRates:
    def test_single_sample_is_conditional_rate(self, toy_binary):
        cfg = GuidanceConfig(n_samples=1)
        probs = np.array([[0.3, 0.7]])
        rng = np.random.default_rng(1)
        rates = guided_rate_matrix(np.array([0]), probs, np.array([0.2]), toy_binary, cfg, 0.4, rng)
        draw = sample_categorical(probs[None], np.random.default_rng(1))
        np.testing.assert_allclose(rates, cond_rate_rows([0], draw[0], 0.4, 1))

    @pytest.mark.parametrize("tau", [1e-3, 1.0, 1e3])
    def test_identical_samples(self, toy, tau):
        probs = np.zeros((1, 6))
        probs[0, 2] = 1.0
        rates = guided_rate_matrix(np.array([4]), probs, np.array([0.0]), toy, GuidanceConfig(tau=tau),
                                   0.5, np.random.default_rng(0))
        np.testing.assert_allclose(rates, cond_rate_rows([4], [2], 0.5, 5))

    def test_large_tau_is_unweighted_average(self, mixed3):
        cfg = GuidanceConfig(tau=1e6, n_samples=16)
        probs = np.array([[[0.4, 0.6], [0.7, 0.3]]] * 5)
        d_t = np.zeros((5, 2), dtype=int)
        c_hat = np.full((5, 1), 0.5)
        rates = guided_rate_matrix(d_t, probs, c_hat, mixed3, cfg, 0.3, np.random.default_rng(9))
        draws = sample_categorical(np.broadcast_to(probs[:, None], (5, 16, 2, 2)), np.random.default_rng(9))
        plain = cond_rate_rows(d_t[:, None, :], draws, 0.3, 1).mean(axis=1)
        np.testing.assert_allclose(rates, plain, rtol=1e-3, atol=1e-9)

    def test_prefers_low_target(self, toy_binary):
        # x1 = 1 violates 3x1 + x2 <= 1, so guidance should push toward 0
        probs = np.array([[[0.5, 0.5]]])
        cfg = GuidanceConfig(tau=0.1, n_samples=64)
        rates = guided_rate_matrix(np.array([[0]]), probs, np.array([[0.0]]), toy_binary, cfg, 0.0,
                                   np.random.default_rng(0))
        assert rates[0, 0, 1] < 0.5

    @given(st.integers(0, 10**6), st.floats(0.0, 0.99))
    def test_nonnegative_zero_diagonal(self, seed, t):
        rng = np.random.default_rng(seed)
        inst = from_dense([[1.0, 2.0, 1.0]], [2.0], [1.0, -1.0, 0.5], [0, 0, 0], [2, 2, 1], num_int=2,
                          int_bound=2)
        probs = rng.dirichlet(np.ones(3), size=(4, 2))
        d_t = rng.integers(0, 3, (4, 2))
        rates = guided_rate_matrix(d_t, probs, rng.random((4, 1)), inst, GuidanceConfig(), t, rng)
        assert np.all(rates >= 0)
        np.testing.assert_array_equal(np.take_along_axis(rates, d_t[..., None], -1), 0.0)


class TestGuidedContinuous:
    def test_no_iterations(self, toy):
        c, _ = guided_cont_step([0.7], [0], [0.1], toy, GuidanceConfig(n_iter=0))
        np.testing.assert_array_equal(c, [0.7])

    def test_interior_moves_against_objective(self, toy):
        cfg = GuidanceConfig(n_iter=1, rho=0.01)
        c, _ = guided_cont_step([0.5], [0], [0.2], toy, cfg)
        np.testing.assert_allclose(c, [0.5 - 0.01 * 1.0])

    @pytest.mark.parametrize("rho", [1e-2, 5e-3, 1e-3])
    def test_descent_on_violated_row(self, toy, rho):
        cfg = GuidanceConfig(n_iter=1, rho=rho, gamma=10.0)
        start = np.array([2.0])
        c, _ = guided_cont_step(start, [1], start, toy, cfg)
        assert target_f(toy, [1, c[0]], cfg.gamma) < target_f(toy, [1, start[0]], cfg.gamma)

    def test_repredict_called(self, toy):
        seen = []
        guided_cont_step([1.0], [0], [1.0], toy, GuidanceConfig(n_iter=3),
                         lambda c: seen.append(c.copy()) or c)
        assert len(seen) == 3

    def test_projection(self, toy):
        c, _ = guided_cont_step([0.0], [0], [0.0], toy, GuidanceConfig(n_iter=3, rho=10.0))
        assert c[0] == 0.0


class TestSampling:
    def test_oracle_single_step(self, mixed3):
        label = np.array([1.0, 1.0, 0.25])
        pool = sample_solutions(mixed3, oracle(label, mixed3), GuidanceConfig(enabled=False),
                                cosine_schedule(1), 16, np.random.default_rng(0))
        for c in pool.candidates:
            np.testing.assert_allclose(c.values, label)

    def test_guidance_flag(self, mixed3):
        def uniform(D, C, t):
            return np.full((len(D), 2, 2), 0.5), np.full((len(D), 1), 0.5)

        def run(enabled):
            return sample_solutions(mixed3, uniform, GuidanceConfig(enabled=enabled), cosine_schedule(5),
                                    16, np.random.default_rng(3))

        a = np.array([c.values for c in run(False).candidates])
        b = np.array([c.values for c in run(True).candidates])
        again = run(False)
        np.testing.assert_array_equal(a, np.array([c.values for c in again.candidates]))
        assert not np.array_equal(a, b)

    def test_integer_weights_ignore_guide_inst(self):
        # only the continuous descent reads guide_inst; the integer weights score the real instance
        pure = from_dense([[1.0, 1.0]], [1.0], [-3.0, -2.0], [0, 0], [1, 1], num_int=2)
        flipped = pure.replace(obj=-pure.obj)

        def run(inst, guide):
            def pred(D, C, t):
                return np.full((len(D), 2, 2), 0.5), np.zeros((len(D), 0))

            return np.array([c.values for c in sample_solutions(
                inst, pred, GuidanceConfig(), cosine_schedule(5), 16, np.random.default_rng(4),
                guide_inst=guide).candidates])

        np.testing.assert_array_equal(run(pure, pure), run(pure, flipped))

    def test_memorized_toy_mostly_feasible(self, toy):
        label = np.array([0.0, 0.5])
        pool = sample_solutions(toy, oracle(label, toy), GuidanceConfig(), cosine_schedule(30), 64,
                                np.random.default_rng(0), guide_inst=normalized_instance(toy))
        assert pool.num_feasible >= 0.9 * 64

    def test_bounds_and_marginals(self, toy):
        rng = np.random.default_rng(1)

        def noisy(D, C, t):
            B = len(D)
            return rng.dirichlet(np.ones(6), size=(B, 1)), rng.normal(0, 5, (B, 1))

        pool = sample_solutions(toy, noisy, GuidanceConfig(), cosine_schedule(10), 32,
                                np.random.default_rng(2))
        X = np.array([c.values for c in pool.candidates])
        assert np.all(X >= toy.lower) and np.all(X <= toy.upper)
        np.testing.assert_array_equal(X[:, 0], np.round(X[:, 0]))
        assert np.all(pool.marginals >= 0)
        np.testing.assert_allclose(pool.marginals.sum(axis=1), 1.0, atol=1e-9)

    def test_non_finite_resampled_once(self, toy):
        label = np.array([0.0, 0.5])
        good = oracle(label, toy)
        calls = {"n": 0}

        def flaky(D, C, t):
            calls["n"] += 1
            p, c = good(D, C, t)
            if calls["n"] == 1:
                c = np.array(c, dtype=float)
                c[0] = np.nan
            return p, c

        pool = sample_solutions(toy, flaky, GuidanceConfig(enabled=False), cosine_schedule(3), 4,
                                np.random.default_rng(0))
        assert all(np.all(np.isfinite(c.values)) for c in pool.candidates)

    def test_non_finite_twice_raises(self, toy):
        def broken(D, C, t):
            return np.full((len(D), 1, 6), np.nan), np.zeros((len(D), 1))

        with pytest.raises(FloatingPointError):
            sample_solutions(toy, broken, GuidanceConfig(), cosine_schedule(2), 2, np.random.default_rng(0))


class TestPool:
    def test_marginals(self):
        m = empirical_marginals(np.array([[0, 1], [1, 1], [0, 1], [0, 0]]), 1)
        np.testing.assert_allclose(m, [[0.75, 0.25], [0.25, 0.75]])

    def test_round_trip(self, tmp_path):
        pool = CandidatePool([Candidate(np.array([1.0, 0.1]), 4.1, False),
                              Candidate(np.array([0.0, 1 / 3]), 1 / 3, True)],
                             np.array([[0.5, 0.5]]), "toy", {"guided": True})
        pool.save(tmp_path / "p.json")
        back = CandidatePool.load(tmp_path / "p.json")
        assert back.to_dict() == pool.to_dict()
        assert back.best().f == 1 / 3 and back.best(feasible_only=False).f == 1 / 3
        assert back.num_feasible == 1

    def test_best_none(self):
        assert CandidatePool([Candidate(np.zeros(1), 1.0, False)], np.zeros((1, 2))).best() is None
