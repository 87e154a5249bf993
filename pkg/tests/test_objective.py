import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gclab.errors import NonPositiveCError, PoolTooSmallError
from gclab.numerics import Rng, finite_diff_grad, grad_rel_error
from gclab.objective import (
    GclConfig,
    conjugate_argmin,
    conjugate_inner,
    g_values,
    gcl_grad_exact,
    gcl_value,
    unified_grad,
    unified_value,
)

from conftest import unit_rows


def brute_force_g(E1, E2, tau, anchors=None, pool=None):
    """Independent O(n^2) double-loop oracle for the contrast sums."""
    n = E1.shape[0]
    pool = list(range(n)) if pool is None else list(pool)
    anchors = pool if anchors is None else list(anchors)
    g1, g2 = [], []
    for i in anchors:
        sii = float(E1[i] @ E2[i])
        acc1 = acc2 = 0.0
        for j in pool:
            if j == i:
                continue
            acc1 += math.exp((float(E1[i] @ E2[j]) - sii) / tau)
            acc2 += math.exp((float(E1[j] @ E2[i]) - sii) / tau)
        g1.append(acc1 / (len(pool) - 1))
        g2.append(acc2 / (len(pool) - 1))
    return np.array(g1), np.array(g2)


TWO_PAIR = (np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))


class TestGValues:
    def test_two_pair_orthogonal(self):
        E1, E2 = TWO_PAIR
        g1, g2 = g_values(E1, E2, GclConfig(tau=1.0))
        # frozen from the brute-force oracle: single off-diagonal term e^-1
        assert np.allclose(g1, math.exp(-1.0), atol=1e-15)
        assert np.allclose(g2, math.exp(-1.0), atol=1e-15)

    def test_identical_embeddings_give_one(self):
        E = np.tile(np.array([[0.6, 0.8]]), (5, 1))
        g1, g2 = g_values(E, E.copy(), GclConfig(tau=0.3))
        assert np.allclose(g1, 1.0, atol=1e-14)
        assert np.allclose(g2, 1.0, atol=1e-14)

    def test_large_tau_limit(self, rng):
        E1 = unit_rows(rng, 6, 3)
        E2 = unit_rows(rng, 6, 3)
        g1, g2 = g_values(E1, E2, GclConfig(tau=1e9, tau_min=1e-3))
        assert np.allclose(g1, 1.0, atol=1e-8)
        assert np.allclose(g2, 1.0, atol=1e-8)

    def test_matches_double_loop_oracle(self, rng):
        E1 = unit_rows(rng, 9, 4)
        E2 = unit_rows(rng, 9, 4)
        g1, g2 = g_values(E1, E2, GclConfig(tau=0.4))
        b1, b2 = brute_force_g(E1, E2, 0.4)
        assert np.allclose(g1, b1, atol=1e-14)
        assert np.allclose(g2, b2, atol=1e-14)

    def test_anchor_subset_of_pool(self, rng):
        E1 = unit_rows(rng, 10, 4)
        E2 = unit_rows(rng, 10, 4)
        anchors = np.array([2, 5, 7])
        pool = np.arange(10)
        g1, g2 = g_values(E1, E2, GclConfig(tau=0.5), anchors=anchors, pool=pool)
        b1, b2 = brute_force_g(E1, E2, 0.5, anchors=anchors, pool=pool)
        assert np.allclose(g1, b1, atol=1e-14)
        assert np.allclose(g2, b2, atol=1e-14)

    def test_pool_too_small(self):
        E = np.array([[1.0, 0.0]])
        with pytest.raises(PoolTooSmallError):
            g_values(E, E, GclConfig())

    def test_anchor_outside_pool_rejected(self, rng):
        E1 = unit_rows(rng, 5, 3)
        E2 = unit_rows(rng, 5, 3)
        with pytest.raises(ValueError):
            g_values(E1, E2, GclConfig(), anchors=[4], pool=[0, 1, 2])

    def test_chunked_equals_unchunked(self, rng, monkeypatch):
        import gclab.objective as obj
        E1 = unit_rows(rng, 33, 4)
        E2 = unit_rows(rng, 33, 4)
        full = g_values(E1, E2, GclConfig(tau=0.2))
        monkeypatch.setattr(obj, "_CHUNK_BUDGET", 64)
        chunked = g_values(E1, E2, GclConfig(tau=0.2))
        # chunk boundaries change BLAS blocking, so only near-exact equality
        # is promised across chunk sizes (bitwise holds for a fixed size)
        assert np.allclose(full[0], chunked[0], rtol=1e-12, atol=0)
        assert np.allclose(full[1], chunked[1], rtol=1e-12, atol=0)


class TestGclValue:
    def test_two_pair_orthogonal_total(self):
        E1, E2 = TWO_PAIR
        rep = gcl_value(E1, E2, GclConfig(tau=1.0, eps=0.0, rho=0.0))
        # four identical log(e^-1) terms averaged with weight tau
        assert rep.total == pytest.approx(-2.0, abs=1e-12)

    def test_identical_embeddings_zero(self):
        E = np.tile(np.array([[1.0, 0.0]]), (4, 1))
        rep = gcl_value(E, E.copy(), GclConfig(tau=0.7, eps=0.0, rho=0.0))
        assert rep.total == pytest.approx(0.0, abs=1e-12)

    def test_rho_adds_two_tau_rho(self):
        E1, E2 = TWO_PAIR
        base = gcl_value(E1, E2, GclConfig(tau=0.5, eps=0.0, rho=0.0)).total
        with_rho = gcl_value(E1, E2, GclConfig(tau=0.5, eps=0.0, rho=1.0)).total
        assert with_rho - base == pytest.approx(1.0, abs=1e-12)

    def test_report_invariant(self, rng):
        E1 = unit_rows(rng, 7, 3)
        E2 = unit_rows(rng, 7, 3)
        cfg = GclConfig(tau=0.3, eps=1e-4)
        rep = gcl_value(E1, E2, cfg)
        assert np.allclose(rep.log_norm1, np.log(cfg.eps + rep.g1), atol=0)
        assert np.allclose(rep.log_norm2, np.log(cfg.eps + rep.g2), atol=0)

    def test_monotone_in_rho_slope_two_tau(self, rng):
        E1 = unit_rows(rng, 5, 4)
        E2 = unit_rows(rng, 5, 4)
        tau = 0.42
        vals = [gcl_value(E1, E2, GclConfig(tau=tau, rho=r)).total for r in (0.0, 1.0, 2.5)]
        assert vals[1] - vals[0] == pytest.approx(2 * tau * 1.0, abs=1e-12)
        assert vals[2] - vals[0] == pytest.approx(2 * tau * 2.5, abs=1e-12)


class TestGclGrad:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = Rng(100 + seed)
        n, d = 8, 4
        E1 = unit_rows(rng, n, d)
        E2 = unit_rows(rng, n, d)
        cfg = GclConfig(tau=rng.uniform(0.3, 1.2), eps=rng.uniform(0, 0.1),
                        rho=rng.uniform(0, 1))

        def f(theta):
            A = theta[:n * d].reshape(n, d)
            B = theta[n * d:2 * n * d].reshape(n, d)
            c = GclConfig(tau=float(theta[-1]), tau_min=cfg.tau_min,
                          eps=cfg.eps, rho=cfg.rho)
            return gcl_value(A, B, c).total

        dE1, dE2, dtau = gcl_grad_exact(E1, E2, cfg)
        theta = np.concatenate([E1.ravel(), E2.ravel(), [cfg.tau]])
        num = finite_diff_grad(f, theta)
        ana = np.concatenate([dE1.ravel(), dE2.ravel(), [dtau]])
        assert grad_rel_error(ana, num) <= 1e-6

    def test_identical_embeddings_dtau_is_two_rho(self):
        E = np.tile(np.array([[0.0, 1.0]]), (6, 1))
        _, _, dtau = gcl_grad_exact(E, E.copy(), GclConfig(tau=0.9, eps=0.0, rho=1.3))
        assert dtau == pytest.approx(2 * 1.3, abs=1e-12)

    def test_diagonal_coefficients_nonpositive(self, rng):
        # positives are pulled together: the s_ii coefficient is -mean of
        # g/(eps+g) terms, always <= 0
        E1 = unit_rows(rng, 6, 3)
        E2 = unit_rows(rng, 6, 3)
        cfg = GclConfig(tau=0.5, eps=1e-8)
        rep = gcl_value(E1, E2, cfg)
        diag = -(rep.g1 / (cfg.eps + rep.g1) + rep.g2 / (cfg.eps + rep.g2)) / 6
        assert np.all(diag <= 0)


class TestConjugate:
    def test_inner_identity_case(self):
        assert conjugate_inner(0.0, 1.0) == 0.0

    def test_inner_at_minimizer_of_e(self):
        assert conjugate_inner(1.0, math.e) == pytest.approx(1.0, abs=1e-15)

    def test_inner_alpha_zero_c_two(self):
        assert conjugate_inner(0.0, 2.0) == pytest.approx(1.0, abs=1e-15)

    def test_argmin_values(self):
        assert conjugate_argmin(1.0) == 0.0
        assert conjugate_argmin(math.e) == pytest.approx(1.0, abs=1e-15)
        assert conjugate_argmin(0.36787944) == pytest.approx(-1.0, abs=1e-8)

    def test_non_positive_rejected(self):
        for c in (0.0, -1.0):
            with pytest.raises(NonPositiveCError):
                conjugate_inner(0.0, c)
            with pytest.raises(NonPositiveCError):
                conjugate_argmin(c)

    @given(st.floats(min_value=-6, max_value=6),
           st.floats(min_value=1e-6, max_value=1e3))
    @settings(max_examples=150, derandomize=True)
    def test_inner_dominates_log(self, alpha, c):
        assert conjugate_inner(alpha, c) >= math.log(c) - 1e-8

    def test_grid_equivalence(self):
        # min over an alpha grid stays above log c; exact at alpha = log c
        for c in np.logspace(-6, 3, 40):
            grid = np.linspace(math.log(c) - 3, math.log(c) + 3, 61)
            vals = [conjugate_inner(a, c) for a in grid]
            assert min(vals) >= math.log(c) - 1e-8
            assert conjugate_inner(math.log(c), c) == pytest.approx(math.log(c), abs=1e-12)


class TestUnified:
    def test_plug_in_equals_gcl(self, rng):
        for trial in range(10):
            r = Rng(500 + trial)
            n = 4 + (r.u64() % 61)
            d = 2 + (r.u64() % 7)
            E1 = unit_rows(r, n, d)
            E2 = unit_rows(r, n, d)
            cfg = GclConfig(tau=r.uniform(0.05, 1.0), tau_min=0.01,
                            eps=r.uniform(0, 0.01), rho=r.uniform(0, 2))
            rep = gcl_value(E1, E2, cfg)
            a1 = np.log(cfg.eps + rep.g1)
            a2 = np.log(cfg.eps + rep.g2)
            val = unified_value(E1, E2, a1, a2, cfg)
            assert val == pytest.approx(rep.total, abs=1e-10)

    def test_lower_bounded_by_gcl(self, rng):
        E1 = unit_rows(rng, 8, 3)
        E2 = unit_rows(rng, 8, 3)
        cfg = GclConfig(tau=0.4, rho=0.7)
        best = gcl_value(E1, E2, cfg).total
        for _ in range(20):
            a1 = rng.normal(size=8)
            a2 = rng.normal(size=8)
            assert unified_value(E1, E2, a1, a2, cfg) >= best - 1e-10

    def test_two_pair_hand_value(self):
        E1, E2 = TWO_PAIR
        cfg = GclConfig(tau=1.0, eps=0.0, rho=0.0)
        val = unified_value(E1, E2, np.zeros(2), np.zeros(2), cfg)
        assert val == pytest.approx(2 * math.exp(-1.0) - 2.0, abs=1e-12)

    def test_dalpha_zero_at_optimum(self, rng):
        E1 = unit_rows(rng, 6, 4)
        E2 = unit_rows(rng, 6, 4)
        cfg = GclConfig(tau=0.3, eps=1e-8)
        rep = gcl_value(E1, E2, cfg)
        a1 = np.log(cfg.eps + rep.g1)
        a2 = np.log(cfg.eps + rep.g2)
        _, _, _, da1, da2 = unified_grad(E1, E2, a1, a2, cfg)
        assert np.allclose(da1, 0.0, atol=1e-14)
        assert np.allclose(da2, 0.0, atol=1e-14)

    def test_alpha_gradient_matches_finite_differences(self, rng):
        n, d = 6, 3
        E1 = unit_rows(rng, n, d)
        E2 = unit_rows(rng, n, d)
        cfg = GclConfig(tau=0.6, eps=0.05, rho=0.4)
        a1 = rng.normal(size=n)
        a2 = rng.normal(size=n)

        def f(theta):
            return unified_value(E1, E2, theta[:n], theta[n:], cfg)

        _, _, _, da1, da2 = unified_grad(E1, E2, a1, a2, cfg)
        num = finite_diff_grad(f, np.concatenate([a1, a2]))
        assert grad_rel_error(np.concatenate([da1, da2]), num) <= 1e-6

    def test_detached_at_optimum_matches_exact_dE(self, rng):
        E1 = unit_rows(rng, 7, 4)
        E2 = unit_rows(rng, 7, 4)
        cfg = GclConfig(tau=0.25, eps=1e-8, rho=0.9)
        rep = gcl_value(E1, E2, cfg)
        a1 = np.log(cfg.eps + rep.g1)
        a2 = np.log(cfg.eps + rep.g2)
        dE1u, dE2u, dtauu, _, _ = unified_grad(E1, E2, a1, a2, cfg)
        dE1, dE2, dtau = gcl_grad_exact(E1, E2, cfg)
        assert grad_rel_error(dE1u, dE1) <= 1e-10
        assert grad_rel_error(dE2u, dE2) <= 1e-10
        assert abs(dtauu - dtau) <= 1e-10 * max(1, abs(dtau))
