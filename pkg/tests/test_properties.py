"""Property-based checks on the small numerical kernels."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from bsdelab import _rng
from bsdelab import generator as G
from bsdelab import theta_transform as TT
from bsdelab.bsde_solver import power_flow
from bsdelab.liquidation import pointwise_min
from bsdelab.regression import RegressionBasis, regress_conditional

qs = st.floats(0.25, 6.0)
pos = st.floats(1e-3, 50.0)


@given(qs, st.floats(-1e3, 1e3), pos, pos)
def test_power_flow_semigroup(q, e, a1, a2):
    two = power_flow(power_flow(e, q, a1), q, a2)
    one = power_flow(e, q, a1 + a2)
    assert math.isclose(float(two), float(one), rel_tol=1e-10, abs_tol=1e-300)


@given(qs, pos, st.floats(0, 1e6), st.floats(0, 1e6))
def test_power_flow_monotone_and_capped(q, a, e1, e2):
    lo, hi = sorted((e1, e2))
    f_lo, f_hi = power_flow([lo, hi], q, a)
    cap = (q * a) ** (-1.0 / q)
    assert f_lo <= f_hi * (1 + 1e-14) and f_hi <= cap * (1 + 1e-12)
    assert math.isclose(float(power_flow(np.inf, q, a)), cap, rel_tol=1e-12)


@given(qs, st.floats(0.01, 20.0), st.floats(0.0, 20.0), st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3))
@settings(max_examples=60)
def test_block_fraction_closed_form(q, beta, c, x):
    p = 1.0 + 1.0 / q
    v, _ = pointwise_min(beta, 0.0, c, x, p)
    frac = c**q / (c**q + beta**q)
    assert math.isclose(-v / x, frac, rel_tol=1e-8, abs_tol=1e-10)


@given(st.lists(st.floats(0, 40.0), min_size=1, max_size=10))
def test_xi_inverts_theta(xs):
    tm = TT.quadratic_map()
    x = np.array(xs)
    assert np.allclose(TT.xi(tm, TT.theta(tm, x)), x, rtol=1e-10, atol=1e-10)


@given(st.floats(-1e3, 1e3), st.sampled_from(["partition", "polynomial"]), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_regression_reproduces_constants(c, kind, seed):
    x = _rng.normals(seed, np.arange(400), 0, np.array([0]))
    fit = regress_conditional(np.full(400, c), x, RegressionBasis(kind, degree=2, bins=5))
    assert np.allclose(fit.fitted, c, rtol=1e-9, atol=1e-9)


@given(st.floats(0.1, 10.0), st.floats(1.0, 5.0), st.floats(-2.0, 0.99))
def test_rho_decomposition(q, ell, eta):
    r = G.rho(q, ell, eta)
    assert math.isclose(r - G.rho(q, 1.0, eta), 2 * (1 - 1 / ell) * (1 - eta), rel_tol=1e-9, abs_tol=1e-12)
    assert G.rho(2 * q, ell, eta) < r


@given(st.integers(0, 2**63), st.lists(st.integers(0, 10**6), min_size=1, max_size=20, unique=True),
       st.integers(0, 500))
def test_streams_do_not_depend_on_batch(seed, paths, step):
    paths = np.array(paths)
    slots = np.arange(3)
    full = _rng.uniforms(seed, paths, step, slots)
    rev = _rng.uniforms(seed, paths[::-1], step, slots)[::-1]
    single = np.vstack([_rng.uniforms(seed, paths[i:i + 1], step, slots) for i in range(len(paths))])
    assert np.array_equal(full, rev) and np.array_equal(full, single)
    assert np.all((full > 0) & (full < 1))
