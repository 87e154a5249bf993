import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gclab.errors import (
    LengthMismatchError,
    NonPositiveInputError,
    NonPositiveTruthError,
    PoolTooSmallError,
)
from gclab.estimators import (
    EmaState,
    TabularAlpha,
    ema_update,
    estimation_error,
    minibatch_normalizers,
    mirror_descent_update,
    oracle_normalizers,
)
from gclab.objective import GclConfig, g_values

from conftest import unit_rows
from test_objective import TWO_PAIR, brute_force_g


class TestMinibatchNormalizers:
    def test_two_pair_orthogonal(self):
        E1, E2 = TWO_PAIR
        u1, u2 = minibatch_normalizers(E1, E2, GclConfig(tau=1.0, eps=0.0))
        assert np.allclose(u1, math.exp(-1.0), atol=1e-15)
        assert np.allclose(u2, math.exp(-1.0), atol=1e-15)

    def test_batch_equals_dataset_matches_oracle(self, rng):
        E1 = unit_rows(rng, 12, 4)
        E2 = unit_rows(rng, 12, 4)
        cfg = GclConfig(tau=0.4, eps=1e-6)
        assert np.array_equal(minibatch_normalizers(E1, E2, cfg)[0],
                              oracle_normalizers(E1, E2, cfg)[0])

    def test_identical_embeddings(self):
        E = np.tile(np.array([[1.0, 0.0]]), (4, 1))
        u1, u2 = minibatch_normalizers(E, E.copy(), GclConfig(tau=0.2, eps=0.0))
        assert np.allclose(u1, 1.0, atol=1e-14)
        assert np.allclose(u2, 1.0, atol=1e-14)

    def test_single_sample_rejected(self):
        E = np.array([[1.0, 0.0]])
        with pytest.raises(PoolTooSmallError):
            minibatch_normalizers(E, E, GclConfig())


class TestEmaUpdate:
    def _state(self, n, gamma, u=1.0):
        s = EmaState.fresh(n, gamma)
        s.u1[:] = u
        s.u2[:] = u
        s.initialized[:] = True
        return s

    def test_halfway_blend(self):
        s = self._state(1, 0.5)
        cfg = GclConfig(tau=1.0, eps=0.0)
        ema_update(s, [0], np.array([0.36787944]), np.array([0.36787944]), cfg)
        assert s.u1[0] == pytest.approx(0.68393972, abs=1e-8)

    def test_gamma_one_is_minibatch(self, rng):
        s = self._state(3, 1.0, u=7.7)
        cfg = GclConfig(tau=0.5, eps=1e-8)
        g1 = rng.uniform(0.1, 2.0, size=3)
        g2 = rng.uniform(0.1, 2.0, size=3)
        ema_update(s, np.arange(3), g1, g2, cfg)
        assert np.array_equal(s.u1, cfg.eps + g1)
        assert np.array_equal(s.u2, cfg.eps + g2)

    def test_gamma_zero_keeps_values(self):
        s = self._state(2, 0.0, u=3.3)
        ema_update(s, [0, 1], np.array([1.0, 2.0]), np.array([1.0, 2.0]),
                   GclConfig(eps=0.0))
        assert np.all(s.u1 == 3.3)

    def test_untouched_samples_unchanged(self):
        s = self._state(4, 0.5, u=2.0)
        ema_update(s, [1], np.array([1.0]), np.array([1.0]), GclConfig(eps=0.0))
        assert np.all(s.u1[[0, 2, 3]] == 2.0)
        assert s.u1[1] == pytest.approx(1.5)

    def test_first_touch_takes_batch_value(self):
        s = EmaState.fresh(2, 0.25)
        cfg = GclConfig(tau=1.0, eps=0.0)
        ema_update(s, [1], np.array([0.4]), np.array([0.9]), cfg)
        assert s.u1[1] == 0.4 and s.u2[1] == 0.9
        assert s.initialized[1] and not s.initialized[0]

    def test_bias_contracts_by_one_minus_gamma(self, rng):
        # fixed embeddings, repeated full-batch updates
        E1 = unit_rows(rng, 6, 3)
        E2 = unit_rows(rng, 6, 3)
        cfg = GclConfig(tau=0.5, eps=1e-8)
        g1, g2 = g_values(E1, E2, cfg)
        target = cfg.eps + g1
        s = self._state(6, 0.3, u=5.0)
        gap = np.abs(s.u1 - target)
        for _ in range(4):
            ema_update(s, np.arange(6), g1, g2, cfg)
            new_gap = np.abs(s.u1 - target)
            assert np.allclose(new_gap, (1 - 0.3) * gap, rtol=1e-12)
            gap = new_gap


class TestMirrorDescent:
    def test_eta_one_is_gamma_half(self):
        # gamma = eta/(1+eta) = 1/2
        y = mirror_descent_update(1.0, 1.0, 0.36787944)
        assert 1.0 / y == pytest.approx(0.68393972, abs=1e-8)

    def test_eta_zero_no_step(self):
        assert mirror_descent_update(2.5, 0.0, 9.9) == pytest.approx(2.5, abs=1e-15)

    def test_non_positive_rejected(self):
        with pytest.raises(NonPositiveInputError):
            mirror_descent_update(0.0, 1.0, 1.0)
        with pytest.raises(NonPositiveInputError):
            mirror_descent_update(1.0, 1.0, 0.0)
        with pytest.raises(NonPositiveInputError):
            mirror_descent_update(1.0, -0.5, 1.0)

    @given(st.floats(min_value=1e-3, max_value=1e3),
           st.floats(min_value=1e-4, max_value=1e2),
           st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=200, derandomize=True)
    def test_equivalent_to_ema_on_inverse(self, y_bar, eta, c):
        gamma = eta / (1.0 + eta)
        u = 1.0 / y_bar
        u_next = (1.0 - gamma) * u + gamma * c
        y_next = mirror_descent_update(y_bar, eta, c)
        assert 1.0 / y_next == pytest.approx(u_next, rel=1e-12)


class TestEstimationError:
    def test_exact_predictions(self):
        pred = np.array([0.0, -1.0])
        true = np.array([1.0, math.exp(-1.0)])
        assert estimation_error(pred, true) == pytest.approx(0.0, abs=1e-16)

    def test_constant_offset_one(self):
        assert estimation_error(np.array([1.0, 1.0]), np.array([1.0, 1.0])) == 1.0

    def test_single_anchor_zero(self):
        assert estimation_error(np.array([math.log(0.7)]), np.array([0.7])) == 0.0

    def test_nonnegative_and_zero_iff_exact(self, rng):
        true = rng.uniform(0.2, 3.0, size=10)
        pred = np.log(true)
        assert estimation_error(pred, true) == 0.0
        bumped = pred.copy()
        bumped[3] += 1e-3
        assert estimation_error(bumped, true) > 0.0

    def test_raw_truth_variant(self):
        pred = np.array([2.0])
        true = np.array([2.0])
        assert estimation_error(pred, true, log_truth=False) == 0.0
        assert estimation_error(pred, true) == pytest.approx((2.0 - math.log(2.0)) ** 2)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            estimation_error(np.zeros(2), np.ones(3))

    def test_non_positive_truth(self):
        with pytest.raises(NonPositiveTruthError):
            estimation_error(np.zeros(2), np.array([1.0, 0.0]))


class TestOracle:
    def test_matches_independent_double_loop(self):
        from gclab.numerics import Rng
        r = Rng(31)
        E1 = unit_rows(r, 3, 5)
        E2 = unit_rows(r, 3, 5)
        cfg = GclConfig(tau=0.33, eps=1e-8)
        u1, u2 = oracle_normalizers(E1, E2, cfg)
        b1, b2 = brute_force_g(E1, E2, cfg.tau)
        assert np.allclose(u1, cfg.eps + b1, atol=1e-14)
        assert np.allclose(u2, cfg.eps + b2, atol=1e-14)

    def test_identical_embeddings(self):
        E = np.tile(np.array([[0.0, 1.0]]), (5, 1))
        cfg = GclConfig(tau=0.1, eps=1e-3)
        u1, u2 = oracle_normalizers(E, E.copy(), cfg)
        assert np.allclose(u1, 1.0 + cfg.eps, atol=1e-13)
        assert np.allclose(u2, 1.0 + cfg.eps, atol=1e-13)


def test_tabular_alpha_container():
    t = TabularAlpha.zeros(4)
    assert t.alpha1.shape == (4,) and np.all(t.alpha2 == 0.0)
