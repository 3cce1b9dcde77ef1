"""The Theta transform ``Theta(x) = int_x^inf -1/g``, its inverse, and the psi decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .bsde_solver import BsdeSolution, TerminalCondition
from .forward_sde import PathBundle
from .generator import GeneratorSpec
from .regression import RegressionBasis, regress_conditional

__all__ = [
    "ThetaMap",
    "ThetaDomainError",
    "theta",
    "xi",
    "quadratic_map",
    "exponential_map",
    "PsiEstimate",
    "psi_estimate",
    "SupermartingaleReport",
    "supermartingale_test",
    "constant_K_g",
    "constant_K_g_kappa",
    "neg_part_bound",
]


class ThetaDomainError(ValueError):
    pass


@dataclass
class ThetaMap:
    """Theta for a decreasing concave ``g < 0``.

    ``q`` (when known) is the exponent with ``g(y) <= -y^{1+q}``, used for
    the quadrature tail.  ``closed_form`` is an optional ``(Theta, Xi)``
    pair that bypasses quadrature.
    """

    g: Callable
    g_prime: Optional[Callable] = None
    q: Optional[float] = None
    closed_form: Optional[tuple] = None
    root_tol: float = 1e-13
    _table: Optional[tuple] = field(default=None, repr=False)

    @classmethod
    def from_generator(cls, gen: GeneratorSpec) -> "ThetaMap":
        return cls(gen.g, gen.g_prime, gen.q)

    def _integrand(self, y):
        return -1.0 / float(self.g(y))

    def scalar(self, x: float) -> float:
        if math.isinf(x):
            return 0.0
        if x < 0:
            raise ThetaDomainError("Theta is defined on [0, inf)")
        head, _ = integrate.quad(self._integrand, x, x + 1.0, limit=200, epsabs=1e-300, epsrel=1e-12)
        lo = math.log(x + 1.0)
        if self.q is not None:
            # g(y) <= -y^{1+q} makes the tail negligible after 60/q e-folds
            tail, _ = integrate.quad(lambda s: math.exp(s) * self._integrand(math.exp(s)),
                                     lo, lo + 60.0 / self.q, limit=400, epsabs=1e-300, epsrel=1e-12)
        else:
            with np.errstate(over="ignore"):
                tail, _ = integrate.quad(self._integrand, x + 1.0, np.inf, limit=200,
                                         epsabs=1e-300, epsrel=1e-12)
        return head + tail

    def table(self):
        if self._table is None:
            u = np.concatenate([np.linspace(0.0, 3.0, 400), np.linspace(3.0, math.log1p(1e8), 800)[1:]])
            vals = np.array([self.scalar(math.expm1(s)) for s in u])
            # fast-decaying Theta underflows well before 1e8; stop the table there
            keep = vals > 1e-280
            keep[:2] = True
            u, vals = u[keep], vals[keep]
            spline = CubicSpline(u, np.log(vals))
            slope = float(spline(u[-1], 1))
            self._table = (u, vals, spline, slope)
        return self._table


def quadratic_map() -> ThetaMap:
    """``g(y) = -(y+1)^2`` with ``Theta(x) = 1/(x+1)``."""
    return ThetaMap(lambda y: -(np.asarray(y) + 1.0) ** 2, lambda y: -2.0 * (np.asarray(y) + 1.0), 1.0,
                    (lambda x: 1.0 / (x + 1.0), lambda v: 1.0 / v - 1.0))


def exponential_map() -> ThetaMap:
    """``g(y) = -e^y`` with ``Theta(x) = e^{-x}``."""
    return ThetaMap(lambda y: -np.exp(y), lambda y: -np.exp(y), None,
                    (lambda x: np.exp(-x), lambda v: -np.log(v)))


def theta(tm: ThetaMap, x, *, exact: bool = False):
    """Theta at ``x >= 0``; ``Theta(inf) = 0``.

    Arrays longer than a few dozen entries go through a cached spline of
    ``log Theta`` against ``log(1 + x)`` unless ``exact`` is set.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ThetaDomainError("Theta is defined on [0, inf)")
    if tm.closed_form is not None:
        with np.errstate(over="ignore"):
            out = np.where(np.isinf(arr), 0.0, tm.closed_form[0](np.where(np.isinf(arr), 0.0, arr)))
        return out if out.ndim else float(out)
    if arr.ndim == 0:
        return tm.scalar(float(arr))
    if exact or arr.size <= 32:
        return np.vectorize(tm.scalar, otypes=[float])(arr)
    u, vals, spline, slope = tm.table()
    lu = np.log1p(np.where(np.isinf(arr), 0.0, arr))
    out = np.exp(spline(np.minimum(lu, u[-1])))
    far = lu > u[-1]
    if np.any(far):
        out = np.where(far, vals[-1] * np.exp(slope * (lu - u[-1])), out)
    return np.where(np.isinf(arr), 0.0, out)


def xi(tm: ThetaMap, v):
    """Inverse of Theta on ``(0, Theta(0)]``."""
    arr = np.asarray(v, dtype=float)
    top = theta(tm, 0.0)
    if np.any(arr <= 0) or np.any(arr > top * (1.0 + 1e-12)):
        raise ThetaDomainError(f"Xi is defined on (0, {top:g}]")
    if tm.closed_form is not None:
        out = np.maximum(tm.closed_form[1](arr), 0.0)
        return out if out.ndim else float(out)

    def one(val):
        if val >= top:
            return 0.0
        hi = 1.0
        while tm.scalar(hi) > val:
            hi *= 4.0
            if hi > 1e300:
                raise ThetaDomainError("Xi bracket search overflowed")
        return optimize.brentq(lambda s: tm.scalar(s) - val, 0.0, hi, xtol=tm.root_tol * (1 + hi),
                               rtol=4 * np.finfo(float).eps, maxiter=500)

    out = np.vectorize(one, otypes=[float])(arr)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# psi decomposition


@dataclass
class PsiEstimate:
    """``psi = E[Theta(xi ^ n) | X_t] - Theta(Y^n_t)`` split into nonnegative parts.

    ``psi_plus``/``psi_minus`` are the pointwise parts.  ``drift_plus`` and
    ``drift_minus`` are the conditional potentials of the positive and
    negative parts of the one-step drift of ``Theta(Y^n)``; their
    difference reproduces psi up to regression error (see
    :meth:`split_residual`).  ``se*`` hold per-point regression errors.
    """

    grid: np.ndarray
    psi: np.ndarray          # (M, N+1)
    cond_theta: np.ndarray   # (M, N+1) fitted E[Theta(xi ^ n) | X_t]
    theta_y: np.ndarray      # (M, N+1)
    se: np.ndarray           # (M, N+1)
    n: float
    drift_plus: Optional[np.ndarray] = None
    drift_minus: Optional[np.ndarray] = None
    se_plus: Optional[np.ndarray] = None
    se_minus: Optional[np.ndarray] = None

    @property
    def psi_plus(self):
        return np.maximum(self.psi, 0.0)

    @property
    def psi_minus(self):
        return np.maximum(-self.psi, 0.0)

    def mean(self, which="psi"):
        return getattr(self, which).mean(axis=0)

    def mean_se(self, which="psi"):
        """Standard error of the cross-sectional mean plus the mean per-path regression error.

        The second term covers the upward bias that regression noise puts
        on nonlinear functionals such as positive parts.
        """
        v = getattr(self, which)
        M = v.shape[0]
        return np.sqrt(v.var(axis=0, ddof=1) / M) + self.se.mean(axis=0)

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.theta_y + self.psi - self.cond_theta)))

    def split_residual(self) -> np.ndarray:
        """Per-time mean of ``psi - (drift_plus - drift_minus)``."""
        return (self.psi - self.drift_plus + self.drift_minus).mean(axis=0)

    def rows(self, bound: Optional[Callable] = None):
        mp, mpl, mmi = self.mean("psi"), self.mean("psi_plus"), self.mean("psi_minus")
        se = self.mean_se("psi")
        for i, t in enumerate(self.grid):
            cb = bound(t) if bound is not None and t < self.grid[-1] else float("nan")
            yield (float(t), float(mp[i]), float(mpl[i]), float(mmi[i]), float(se[i]), float(cb))


def psi_estimate(solution: BsdeSolution, tm: ThetaMap, tc: TerminalCondition, bundle: PathBundle,
                 basis: Optional[RegressionBasis] = None) -> PsiEstimate:
    """Regression estimate of psi and of its drift potentials on the solver's basis.

    The one-step drift ``d_i = E[Theta(Y_{i+1}) | X_i] - Theta(Y_i)``
    telescopes to psi; ``psi_plus``/``psi_minus`` regress the pathwise
    sums of ``d^+`` and ``d^-`` from ``t_i`` to ``T``.
    """
    basis = basis or solution.basis
    if solution.y.shape[0] != bundle.M or len(solution.grid) != len(bundle.grid):
        raise ValueError("solution and bundle do not match")
    M, N1 = solution.y.shape
    ty = theta(tm, solution.y.ravel()).reshape(M, N1)
    term = theta(tm, tc.truncated(bundle.terminal, solution.n))
    cond = np.empty((M, N1))
    se = np.zeros((M, N1))
    cond[:, -1] = term
    pp, pm = np.zeros((M, N1)), np.zeros((M, N1))
    sp, sm = np.zeros((M, N1)), np.zeros((M, N1))
    acc_p, acc_m = np.zeros(M), np.zeros(M)
    for i in range(N1 - 2, -1, -1):
        x = bundle.state(i)
        step = regress_conditional(ty[:, i + 1], x, basis).fitted - ty[:, i]
        acc_p += np.maximum(step, 0.0)
        acc_m += np.maximum(-step, 0.0)
        fit = regress_conditional(np.stack([term, acc_p, acc_m], axis=1), x, basis)
        cond[:, i] = fit.fitted[:, 0]
        se[:, i] = fit.se[:, 0]
        pp[:, i], pm[:, i] = fit.fitted[:, 1], fit.fitted[:, 2]
        sp[:, i], sm[:, i] = fit.se[:, 1], fit.se[:, 2]
    return PsiEstimate(solution.grid, cond - ty, cond, ty, se, solution.n, pp, pm, sp, sm)


@dataclass
class SupermartingaleReport:
    violation_rate: float
    per_step: np.ndarray
    threshold: float = 0.05
    se_factor: float = 3.0

    @property
    def passed(self) -> bool:
        return self.violation_rate < self.threshold

    def to_dict(self):
        return {"tag": "supermartingale property (psi+/psi-)", "verdict": "holds" if self.passed else "fails",
                "violation_rate": self.violation_rate, "threshold": self.threshold}


def supermartingale_test(series, states, basis: RegressionBasis, *, se_factor: float = 3.0,
                         threshold: float = 0.05, steps=None, series_se=None) -> SupermartingaleReport:
    """Flag ``(path, t_i)`` where ``E[V_{i+1} | state_i] - V_i`` exceeds ``se_factor`` standard errors.

    ``states`` is either a PathBundle or an ``(M, N+1, k)`` array of
    conditioning variables.  When ``V`` is itself an estimate, pass its
    per-point standard errors as ``series_se`` so they enter the comparison.
    """
    V = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(V)):
        raise ValueError("series must be finite")
    S = states.paths if isinstance(states, PathBundle) else np.asarray(states, dtype=float)
    if S.ndim == 2:
        S = S[:, :, None]
    N = V.shape[1] - 1
    steps = range(N) if steps is None else steps
    per = []
    for i in steps:
        fit = regress_conditional(V[:, i + 1], S[:, i, :], basis)
        diff = fit.fitted - V[:, i]
        se = fit.se if series_se is None else np.hypot(fit.se, series_se[:, i])
        scale = 1e-12 * (1.0 + np.abs(V[:, i]))
        per.append(float(np.mean(diff > se_factor * se + scale)))
    per = np.asarray(per)
    return SupermartingaleReport(float(per.mean()) if len(per) else 0.0, per, threshold, se_factor)


# ---------------------------------------------------------------------------
# negative-part bounds


def _lattice():
    return np.concatenate([[0.0], np.logspace(-6, 6, 2401)])


def constant_K_g(g: Callable) -> float:
    """``sup_{y >= 0} -y / g(y)``."""
    y = _lattice()
    return float(np.max(-y / np.asarray(g(y), dtype=float)))


def _g_inverse(g, target, y_hi=1e12):
    g0 = float(g(0.0))
    if target > g0:
        return math.nan
    hi = 1.0
    while float(g(hi)) > target:
        hi *= 2.0
        if hi > y_hi:
            return math.inf
    return optimize.brentq(lambda s: float(g(s)) - target, 0.0, hi, xtol=1e-14, rtol=1e-13)


def constant_K_g_kappa(g: Callable, kappa_star: float) -> float:
    """``sup_{y >= 0} g^{-1}(g(y)/(1+kappa_star)) / |g(y)|`` where the inverse exists."""
    if not kappa_star > -1:
        raise ValueError("kappa_star must exceed -1")
    ys = np.concatenate([[0.0], np.logspace(-4, 4, 241)])
    best = 0.0
    for y in ys:
        gy = float(g(y))
        v = _g_inverse(g, gy / (1.0 + kappa_star))
        if math.isfinite(v):
            best = max(best, v / abs(gy))
    return best


def _b_integral(gen: GeneratorSpec, t: float) -> float:
    if t >= gen.T:
        return 0.0
    val, _ = integrate.quad(lambda s: float(gen.b_lower(s)), t, gen.T, limit=200)
    return val


def neg_part_bound(gen: GeneratorSpec, case: int, t: float, *, kappa_star: Optional[float] = None,
                   tm: Optional[ThetaMap] = None) -> float:
    """Upper bound on the negative part of psi at time ``t`` under the given structural case.

    Case 1: no jumps in the generator (``vartheta = 0``).  Case 2: the jump
    compensator is bounded below by ``kappa_star > -1``.  Case 3: finite
    jump measure.
    """
    if case not in (1, 2, 3):
        raise ValueError("case must be 1, 2 or 3")
    T = gen.T
    tau = max(T - t, 0.0)
    gp0 = float(gen.g_prime(0.0))
    if not gp0 < 0:
        raise ValueError("premise g'(0) < 0 violated")
    lip = -gen.L**2 / (2.0 * gp0)
    bint = _b_integral(gen, t)
    theta_l1 = gen.jumps.l1_norm(gen.vartheta) if gen.jumps.size else 0.0
    if case == 1:
        if theta_l1 > 0:
            raise ValueError("premise of case 1 violated: generator depends on the jump component")
        return lip * tau + bint
    Kg = constant_K_g(gen.g)
    if case == 2:
        if kappa_star is None or not kappa_star > -1:
            raise ValueError("premise of case 2 violated: need kappa_star > -1")
        Kk = constant_K_g_kappa(gen.g, kappa_star)
        return (lip + theta_l1 * max(Kg, Kk)) * tau + bint
    lam = gen.jumps.total_intensity
    if not math.isfinite(lam):
        raise ValueError("premise of case 3 violated: jump measure must be finite")
    tm = tm or ThetaMap.from_generator(gen)
    return bint + tau * (lip + lam * (theta(tm, 0.0) + Kg) + theta_l1 * Kg)
