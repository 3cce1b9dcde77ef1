import numpy as np
import pytest

from bsdelab import _rng
from bsdelab import forward_sde as F
from bsdelab import generator as G


def test_grid_refinement():
    g = F.make_grid(2.0, 10, 3.0)
    assert g[0] == 0.0 and g[-1] == 2.0
    assert np.all(np.diff(np.diff(g)) < 0)  # steps shrink toward T
    np.testing.assert_allclose(F.make_grid(1.0, 4), [0, 0.25, 0.5, 0.75, 1.0])


def test_zero_dynamics():
    b = F.simulate(F.SdeSpec(2, [0.5, -1.0]), F.make_grid(1.0, 20), 100, 1)
    assert np.all(b.paths == np.array([0.5, -1.0]))


def test_pure_drift():
    b = F.simulate(F.SdeSpec(1, [0.2], drift=1.0), F.make_grid(1.0, 37), 64, 1)
    np.testing.assert_allclose(b.terminal[:, 0], 1.2, atol=1e-12)


def test_compensated_jumps_are_centred():
    jm = G.JumpMeasure([0.0, 1.0], [0.5, 1.5])
    b = F.simulate(F.SdeSpec(1, [0.0], jump=1.0, jumps=jm), F.make_grid(1.0, 50), 20000, 9)
    inc = b.terminal[:, 0]
    assert abs(inc.mean()) < 3 * inc.std(ddof=1) / np.sqrt(len(inc))
    # counts have the right intensity
    assert b.jump_counts.sum(axis=(1,)).mean(axis=0) == pytest.approx([0.5, 1.5], rel=0.05)


def test_brownian_increments_have_unit_rate():
    b = F.simulate(F.SdeSpec(1, [0.0], diffusion=1.0), F.make_grid(1.0, 10), 40000, 2)
    v = b.brownian_increments[:, :, 0].var(axis=0) / b.dt
    np.testing.assert_allclose(v, 1.0, rtol=0.05)


def test_thread_independence(monkeypatch):
    sde = F.SdeSpec(1, [0.1], diffusion=0.3, jump=-0.2, jumps=G.JumpMeasure([0.0], [2.0]))
    grid = F.make_grid(1.0, 20)
    a = F.simulate(sde, grid, 10000, 17, threads=1)
    b = F.simulate(sde, grid, 10000, 17, threads=4)
    assert np.array_equal(a.paths, b.paths)
    assert np.array_equal(a.jump_counts, b.jump_counts)
    monkeypatch.setenv("BSDE_LAB_THREADS", "3")
    assert F.thread_count() == 3


def test_bundle_is_read_only():
    b = F.simulate(F.SdeSpec(1, [0.0], diffusion=1.0), F.make_grid(1.0, 5), 10, 1)
    with pytest.raises(ValueError):
        b.paths[0, 0, 0] = 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported():
    sde = F.SdeSpec(1, [1.0], drift=lambda t, x: 1e300 * x ** 2)
    with pytest.raises(F.SimulationError) as ei:
        F.simulate(sde, F.make_grid(1.0, 10), 4, 1)
    assert ei.value.step is not None


def test_rng_streams_are_counter_based():
    paths = np.arange(5, dtype=np.uint64)
    slots = np.arange(2, dtype=np.uint64)
    a = _rng.uniforms(3, paths, 7, slots)
    b = _rng.uniforms(3, paths[2:], 7, slots)
    np.testing.assert_array_equal(a[2:], b)
    assert np.all((a > 0) & (a < 1))


class TestConditionE:
    jm = G.JumpMeasure([0.0], [1.0])

    def test_inward_jumps(self):
        sde = F.SdeSpec(1, [0.3], jump=-0.5, jumps=self.jm)
        assert F.check_condition_E(sde, F.HalfLine(0.0, nu=0.4)).passed

    def test_outward_jumps(self):
        sde = F.SdeSpec(1, [0.3], jump=0.5, jumps=self.jm)
        rep = F.check_condition_E(sde, F.HalfLine(0.0, nu=0.4))
        assert not rep.passed
        assert any(abs(c["x"][0]) < 1e-12 for c in rep.counterexamples)

    def test_margin(self):
        sde = F.SdeSpec(1, [0.3], jump=0.0, jumps=self.jm)
        rep = F.check_condition_E(sde, F.HalfLine(0.0, nu=0.1))
        assert not rep.passed
        assert {c["kind"] for c in rep.counterexamples} == {"boundary"}


class TestBump:
    s = F.HalfLine(0.0, nu=0.4)

    def test_plateau_and_support(self):
        eps = 0.1
        phi = F.build_bump(self.s, eps, 4.0)
        assert phi(np.array([[2 * eps]]))[0] == 1.0
        assert phi(np.array([[-0.3], [0.0]])).max() == 0.0
        assert phi(np.array([[eps / 4]]))[0] == 0.0

    def test_gamma_floor(self):
        with pytest.raises(ValueError):
            F.build_bump(self.s, 0.1, 2.0, q=4.0)  # 2(q+1)/q = 2.5
        with pytest.raises(ValueError):
            F.build_bump(self.s, 0.0, 4.0)

    def test_derivatives(self):
        phi = F.build_bump(self.s, 0.2, 3.5)
        x = np.linspace(0.11, 0.19, 9)[:, None]
        h = 1e-6
        num = (phi(x + h) - phi(x - h)) / (2 * h)
        np.testing.assert_allclose(phi.grad(x)[:, 0], num, rtol=1e-5, atol=1e-8)
        num2 = (phi.grad(x + h)[:, 0] - phi.grad(x - h)[:, 0]) / (2 * h)
        np.testing.assert_allclose(phi.hess(x)[:, 0, 0], num2, rtol=1e-4, atol=1e-6)

    def test_ball_bump_vanishes_inside(self):
        ball = F.Ball((0.0, 0.0), 1.0, nu=0.2)
        phi = F.build_bump(ball, 0.1, 3.0)
        inside = ball.sample_inside(200)
        assert np.all(ball.contains(inside))
        assert phi(inside).max() == 0.0
        assert phi(np.array([[3.0, 0.0]]))[0] == 1.0
