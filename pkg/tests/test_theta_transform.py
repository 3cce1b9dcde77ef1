import math

import numpy as np
import pytest

from bsdelab import bsde_solver as S
from bsdelab import forward_sde as F
from bsdelab import generator as G
from bsdelab import theta_transform as TT
from bsdelab.regression import RegressionBasis

from conftest import constant_terminal


def quad_map():
    # no closed form attached: goes through quadrature and root finding
    return TT.ThetaMap(lambda y: -(np.asarray(y) + 1.0) ** 2, lambda y: -2.0 * (np.asarray(y) + 1.0), 1.0)


def exp_map():
    return TT.ThetaMap(lambda y: -np.exp(y), lambda y: -np.exp(y), None)


class TestTheta:
    def test_quadratic(self):
        tm = quad_map()
        assert TT.theta(tm, 0.0) == pytest.approx(1.0, abs=1e-9)
        assert TT.xi(tm, 1.0) == pytest.approx(0.0, abs=1e-9)
        assert TT.theta(tm, 4.0) == pytest.approx(0.2, rel=1e-9)

    def test_exponential(self):
        tm = exp_map()
        assert TT.theta(tm, 1.3) == pytest.approx(math.exp(-1.3), rel=1e-9)
        assert TT.xi(tm, 0.5) == pytest.approx(math.log(2.0), rel=1e-9)

    def test_closed_forms_agree(self):
        x = np.linspace(0.0, 50.0, 11)
        np.testing.assert_allclose(TT.theta(quad_map(), x), TT.theta(TT.quadratic_map(), x), rtol=1e-9)
        np.testing.assert_allclose(TT.theta(exp_map(), x), TT.theta(TT.exponential_map(), x),
                                   rtol=1e-7, atol=1e-300)

    def test_inverse_pair(self):
        tm = TT.ThetaMap.from_generator(G.toy(3.0))
        assert TT.xi(tm, TT.theta(tm, 3.7)) == pytest.approx(3.7, rel=1e-9)

    def test_spline_matches_quadrature(self):
        tm = TT.ThetaMap.from_generator(G.toy(3.0))
        x = np.concatenate([np.linspace(0, 5, 40), np.logspace(1, 9, 40)])
        np.testing.assert_allclose(TT.theta(tm, x), TT.theta(tm, x, exact=True), rtol=1e-6)

    def test_domain(self):
        tm = TT.quadratic_map()
        assert TT.theta(tm, math.inf) == 0.0
        with pytest.raises(TT.ThetaDomainError):
            TT.theta(tm, -1.0)
        with pytest.raises(TT.ThetaDomainError):
            TT.xi(tm, 2.0)


@pytest.fixture(scope="module")
def toy_run():
    sde = F.SdeSpec(1, [0.3], diffusion=0.5)
    b = F.simulate(sde, F.make_grid(1.0, 60), 12000, 21)
    tc = S.singular_terminal(F.HalfLine(0.0, nu=0.4), lambda x: 1.0 + np.abs(x[:, 0]))
    g = G.toy(3.0)
    basis = RegressionBasis("partition", bins=30)
    sol = S.solve_truncated(g, tc, b, basis, 256.0)
    tm = TT.ThetaMap.from_generator(g)
    return g, b, tc, basis, sol, TT.psi_estimate(sol, tm, tc, b)


class TestPsi:
    def test_identity(self, toy_run):
        est = toy_run[-1]
        assert est.reconstruction_error() < 1e-12
        assert np.max(np.abs(est.split_residual()[:-1])) < 1e-10

    def test_parts(self, toy_run):
        est = toy_run[-1]
        np.testing.assert_allclose(est.psi_plus - est.psi_minus, est.psi)
        assert est.psi_plus.min() >= 0 and est.psi_minus.min() >= 0

    def test_negative_part_vanishes_near_T(self, toy_run):
        g, b, *_ , est = toy_run
        m = est.mean("psi_minus")
        se = est.mean_se("psi")
        bound = TT.neg_part_bound(g, 1, b.grid[-2])
        assert m[-2] <= bound + 3 * se[-2]
        assert m[-2] < m[-6]

    def test_supermartingale_parts(self, toy_run):
        _, b, _, basis, _, est = toy_run
        for part in (est.psi_plus, est.psi_minus):
            assert TT.supermartingale_test(part, b, basis, series_se=est.se).passed

    def test_constant_terminal_no_driver(self, bm_bundle):
        g = G.custom(lambda t, y, z, u: np.zeros(np.shape(y)), 1.0, a=lambda t: 0.0, f0=lambda t: 0.0)
        tc = constant_terminal(2.0)
        sol = S.solve_truncated(g, tc, bm_bundle, RegressionBasis(), math.inf, check=False)
        est = TT.psi_estimate(sol, TT.ThetaMap.from_generator(G.toy(1.0)), tc, bm_bundle)
        assert np.max(np.abs(est.psi)) < 1e-12

    def test_deterministic_against_oracle(self, flat_bundle, one_bin):
        g = G.toy(2.0)
        n = 20.0
        tc = constant_terminal(n)
        sol = S.solve_truncated(g, tc, flat_bundle, one_bin, n)
        tm = TT.ThetaMap.from_generator(g)
        est = TT.psi_estimate(sol, tm, tc, flat_bundle)
        orc = S.ode_oracle(g, n)
        idx = [0, 50, 150, 199]
        want = [TT.theta(tm, n) - TT.theta(tm, orc(flat_bundle.grid[i])) for i in idx]
        np.testing.assert_allclose(est.psi[0, idx], want, rtol=1e-6, atol=1e-10)


class TestSupermartingale:
    def test_constant(self, bm_bundle):
        V = np.full((bm_bundle.M, bm_bundle.N + 1), 3.0)
        rep = TT.supermartingale_test(V, bm_bundle, RegressionBasis())
        assert rep.passed and rep.violation_rate == 0.0

    def test_running_maximum_fails(self, bm_bundle):
        V = np.maximum.accumulate(bm_bundle.paths[:, :, 0], axis=1)
        states = np.stack([bm_bundle.paths[:, :, 0], V], axis=2)
        rep = TT.supermartingale_test(V, states, RegressionBasis("partition", bins=8))
        assert not rep.passed


class TestNegPartBound:
    def test_case1_no_lipschitz_part(self):
        g = G.toy(3.0)
        assert TT.neg_part_bound(g, 1, 0.25) == pytest.approx(0.75)  # b = 1

    def test_case1_with_lipschitz_part(self):
        gfun = lambda y: -np.asarray(y) ** 2 - np.asarray(y) - 1.0  # noqa: E731
        gp = lambda y: -2 * np.asarray(y) - 1.0  # noqa: E731
        gen = G.custom(lambda t, y, z, u: -y * np.abs(y), 1.0, a=lambda t: 1.0, f0=lambda t: 0.0,
                       L=1.0, g=gfun, g_prime=gp)
        t = 0.4
        assert TT.neg_part_bound(gen, 1, t) == pytest.approx(0.6 / 2 + 0.6)

    def test_case3_reduces_to_case1(self):
        g = G.toy(3.0)
        assert TT.neg_part_bound(g, 3, 0.5) == pytest.approx(TT.neg_part_bound(g, 1, 0.5))

    def test_premises(self, jump_measure):
        g = G.control(3.0, jump_measure, beta=1.0)
        with pytest.raises(ValueError, match="case 1"):
            TT.neg_part_bound(g, 1, 0.5)
        with pytest.raises(ValueError, match="case 2"):
            TT.neg_part_bound(g, 2, 0.5, kappa_star=-1.0)

    def test_constants(self):
        gfun = lambda y: -np.asarray(y) ** 2 - np.asarray(y) - 1.0  # noqa: E731
        assert TT.constant_K_g(gfun) > 0
        # kappa* = 0 gives sup y / (y^2 + y + 1), attained at y = 1
        assert TT.constant_K_g_kappa(gfun, 0.0) == pytest.approx(1 / 3, rel=1e-4)


def test_spline_survives_underflow():
    # Theta(x) = e^-x drops below the double range long before the table ends
    tm = TT.ThetaMap(lambda y: -np.exp(np.minimum(y, 700.0)), None, None)
    x = np.linspace(0.0, 30.0, 100)
    assert np.allclose(TT.theta(tm, x), np.exp(-x), rtol=1e-6, atol=1e-12)
    assert np.all(TT.theta(tm, np.array([1e3] * 40)) < 1e-200)
