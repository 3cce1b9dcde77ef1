"""Generator families, their structural constants, and condition checks.

A generator ``f(t, y, z, u)`` is stored together with its decomposition
``f0`` (value at the origin), ``a`` (coefficient of the ``-y|y|^q`` decay),
the Lipschitz data ``L`` / ``vartheta`` and the pair ``(b, g)`` bounding the
``y``-part from below.  All evaluations are vectorised over paths: ``y`` has
shape ``(M,)``, ``z`` shape ``(M, d)`` and ``u`` shape ``(M, K)`` where ``K``
is the number of marks of the jump measure.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

__all__ = [
    "Family",
    "JumpMeasure",
    "GeneratorSpec",
    "GeneratorDomainError",
    "ConditionVerdict",
    "ConditionReport",
    "toy",
    "power_singularity",
    "control",
    "custom",
    "eval_generator",
    "eval_truncated",
    "eval_beta_hat",
    "d_beta_hat_dy",
    "remainder",
    "d_remainder_dy",
    "rho",
    "a_priori_bound",
    "a_priori_shape",
    "calibrate_bound_constant",
    "check_conditions",
    "continuity_regime",
    "tail_exponent",
]


class GeneratorDomainError(ValueError):
    """Raised when a generator is evaluated where it is undefined."""


class Family(str, enum.Enum):
    CONTROL = "control"
    TOY = "toy"
    POWER = "power_singularity"
    CUSTOM = "custom"


@dataclass(frozen=True)
class JumpMeasure:
    """Finite jump measure ``sum_k weights[k] * delta_{marks[k]}``."""

    marks: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        marks = np.atleast_1d(np.asarray(self.marks, dtype=float))
        if marks.ndim == 1:
            marks = marks[:, None]
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if marks.shape[0] != weights.shape[0]:
            raise ValueError("marks and weights must have the same length")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("jump intensities must be finite and strictly positive")
        if len(np.unique(marks, axis=0)) != len(marks):
            raise ValueError("marks must be distinct")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls) -> "JumpMeasure":
        return cls(np.zeros((0, 1)), np.zeros(0))

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def total_intensity(self) -> float:
        return float(self.weights.sum())

    def l2_norm(self, u: np.ndarray) -> np.ndarray:
        """``||u||_{L^2_lambda}`` along the last axis."""
        u = np.asarray(u, dtype=float)
        if self.size == 0:
            return np.zeros(u.shape[:-1])
        return np.sqrt(np.sum(self.weights * u**2, axis=-1))

    def l1_norm(self, u: np.ndarray) -> float:
        return float(np.sum(self.weights * np.abs(u)))


def _default_g(q: float):
    def g(y):
        y = np.asarray(y, dtype=float)
        return -(y ** (1.0 + q)) - y - 1.0

    def g_prime(y):
        y = np.asarray(y, dtype=float)
        return -(1.0 + q) * y**q - 1.0

    return g, g_prime


def _const(value: float) -> Callable:
    def fn(t):
        return value + 0.0 * np.asarray(t, dtype=float)

    fn.constant = value
    return fn


@dataclass(frozen=True)
class GeneratorSpec:
    """A generator together with its structural constants.

    Use the factories :func:`toy`, :func:`power_singularity`, :func:`control`
    and :func:`custom` rather than building instances by hand.
    """

    family: Family
    q: float
    T: float
    f0: Callable
    a: Callable
    b_lower: Callable
    g: Callable
    g_prime: Callable
    jumps: JumpMeasure = field(default_factory=JumpMeasure.empty)
    L: float = 0.0
    vartheta: Optional[np.ndarray] = None
    ell: float = 1.1
    eta: float = 0.05
    alpha: Optional[Callable] = None
    beta: Optional[Callable] = None
    gamma: Optional[Callable] = None
    varsigma: Optional[float] = None
    varpi: Optional[float] = None
    func: Optional[Callable] = None
    depends_on_u: bool = False
    power_split: bool = True
    name: str = ""

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("q must be positive")
        if not self.ell >= 1:
            raise ValueError("ell must be at least 1")
        if not self.eta < 1:
            raise ValueError("eta must be below 1")
        theta = np.zeros(self.jumps.size) if self.vartheta is None else np.asarray(self.vartheta, float)
        if theta.shape != (self.jumps.size,) or np.any(theta < 0):
            raise ValueError("vartheta must be a nonnegative vector over the marks")
        object.__setattr__(self, "vartheta", theta)

    @property
    def p(self) -> float:
        return 1.0 + 1.0 / self.q

    @property
    def time_singular(self) -> bool:
        if self.family is Family.POWER:
            return self.varpi > 0 or self.varsigma < 0
        return False

    def rho(self) -> float:
        return rho(self.q, self.ell, self.eta)


# ---------------------------------------------------------------------------
# factories


def toy(q: float, T: float = 1.0, *, ell: float = 1.1, eta: float = 0.05,
        jumps: Optional[JumpMeasure] = None) -> GeneratorSpec:
    """``f(y) = -y|y|^q``."""
    g, gp = _default_g(q)
    jumps = jumps or JumpMeasure.empty()
    return GeneratorSpec(
        family=Family.TOY, q=q, T=T, f0=_const(0.0), a=_const(1.0),
        b_lower=_const(1.0), g=g, g_prime=gp, jumps=jumps, L=0.0,
        vartheta=np.zeros(jumps.size), ell=ell, eta=eta, name=f"toy(q={q})",
    )


def power_singularity(q: float, varsigma: float, varpi: float, T: float = 1.0, *,
                      ell: float = 1.1, eta: float = 0.05,
                      jumps: Optional[JumpMeasure] = None) -> GeneratorSpec:
    """``f(t, y) = -(T-t)^varsigma y|y|^q + (T-t)^(-varpi)``."""
    g, gp = _default_g(q)
    jumps = jumps or JumpMeasure.empty()

    def a(t):
        return np.power(T - np.asarray(t, dtype=float), varsigma)

    def f0(t):
        return np.power(T - np.asarray(t, dtype=float), -varpi)

    return GeneratorSpec(
        family=Family.POWER, q=q, T=T, f0=f0, a=a, b_lower=a, g=g, g_prime=gp,
        jumps=jumps, L=0.0, vartheta=np.zeros(jumps.size), ell=ell, eta=eta,
        varsigma=float(varsigma), varpi=float(varpi),
        name=f"power(q={q}, varsigma={varsigma}, varpi={varpi})",
    )


def control(q: float, jumps: JumpMeasure, *, alpha=1.0, beta=math.inf, gamma=0.0,
            T: float = 1.0, ell: float = 1.1, eta: float = 0.05) -> GeneratorSpec:
    """Liquidation generator ``-y|y|^q / (q alpha^q) - beta_hat(t, y, u) + gamma``.

    ``alpha`` and ``gamma`` are constants or callables of ``t``; ``beta`` is a
    constant, a per-mark array, or a callable ``t -> array over marks``.
    ``math.inf`` entries switch off the jump control for that mark.
    """
    alpha_fn = alpha if callable(alpha) else _const(float(alpha))
    gamma_fn = gamma if callable(gamma) else _const(float(gamma))
    if callable(beta):
        beta_fn = beta
        beta_probe = np.asarray(beta(0.0), dtype=float)
    else:
        beta_arr = np.broadcast_to(np.asarray(beta, dtype=float), (jumps.size,)).copy()
        if np.any(beta_arr < 0):
            raise ValueError("beta must be nonnegative")

        def beta_fn(t, _b=beta_arr):
            return _b

        beta_probe = beta_arr
    # kappa lies in [-1, 0] for finite beta and vanishes for beta = inf
    vartheta = np.where(np.isinf(beta_probe), 0.0, 1.0) if jumps.size else np.zeros(0)
    lam = jumps.total_intensity

    def a(t):
        return 1.0 / (q * np.power(alpha_fn(t), q))

    def b_lower(t):
        return np.maximum(a(t), lam)

    g, gp = _default_g(q)
    return GeneratorSpec(
        family=Family.CONTROL, q=q, T=T, f0=gamma_fn, a=a, b_lower=b_lower, g=g,
        g_prime=gp, jumps=jumps, L=0.0, vartheta=vartheta, ell=ell, eta=eta,
        alpha=alpha_fn, beta=beta_fn, gamma=gamma_fn,
        depends_on_u=bool(np.any(np.isfinite(beta_probe))),
        name=f"control(q={q})",
    )


def custom(func: Callable, q: float, *, a: Callable, f0: Callable, T: float = 1.0,
           L: float = 0.0, jumps: Optional[JumpMeasure] = None, vartheta=None,
           b_lower: Optional[Callable] = None, g: Optional[Callable] = None,
           g_prime: Optional[Callable] = None, ell: float = 1.1, eta: float = 0.05,
           depends_on_u: bool = True, power_split: bool = False,
           name: str = "custom") -> GeneratorSpec:
    """Wrap a user generator ``func(t, y, z, u)``.

    With ``power_split=True`` the solver integrates the ``-a y|y|^q`` part of
    ``func`` exactly and treats the rest implicitly; only use it when the
    remainder ``func + a y|y|^q`` is nonincreasing in ``y``.
    """
    jumps = jumps or JumpMeasure.empty()
    dg, dgp = _default_g(q)
    return GeneratorSpec(
        family=Family.CUSTOM, q=q, T=T, f0=f0, a=a,
        b_lower=b_lower or a, g=g or dg, g_prime=g_prime or dgp, jumps=jumps, L=L,
        vartheta=np.zeros(jumps.size) if vartheta is None else vartheta,
        ell=ell, eta=eta, func=func, depends_on_u=depends_on_u,
        power_split=power_split, name=name,
    )


# ---------------------------------------------------------------------------
# evaluation


def _prep(spec: GeneratorSpec, t, y, z, u):
    if spec.time_singular and t >= spec.T:
        raise GeneratorDomainError("generator singular at T")
    y = np.asarray(y, dtype=float)
    if u is None:
        u = np.zeros(y.shape + (spec.jumps.size,))
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (spec.jumps.size,):
        u = np.broadcast_to(u, y.shape + (spec.jumps.size,))
    if z is None:
        z = np.zeros(y.shape + (1,))
    z = np.asarray(z, dtype=float)
    return y, z, u


def _power(y, q):
    return y * np.abs(y) ** q


def eval_beta_hat(spec: GeneratorSpec, t: float, y, u) -> np.ndarray:
    """Minimised jump-cost term of the liquidation generator."""
    if spec.family is not Family.CONTROL:
        raise ValueError("beta_hat is only defined for the control family")
    y = np.asarray(y, dtype=float)
    if spec.jumps.size == 0:
        return np.zeros_like(y)
    u = np.broadcast_to(np.asarray(u, dtype=float), y.shape + (spec.jumps.size,))
    beta = np.asarray(spec.beta(t), dtype=float)
    v = y[..., None] + u
    vp = np.maximum(v, 0.0)
    q = spec.q
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # v (1 - beta / (v^q + beta^q)^{1/q}) written to stay finite for large beta
        ratio = np.where(np.isinf(beta), 0.0, vp / np.where(beta > 0, beta, 1.0))
        frac = np.where(beta > 0, 1.0 - np.power(1.0 + ratio**q, -1.0 / q), 1.0)
        term = np.where(v >= 0, vp * frac, 0.0)
        term = np.where(np.isinf(beta), 0.0, term)
    return np.sum(spec.jumps.weights * term, axis=-1)


def d_beta_hat_dy(spec: GeneratorSpec, t: float, y, u) -> np.ndarray:
    """Partial derivative of ``beta_hat`` in ``y`` (each summand lies in ``[0, lambda_k]``)."""
    y = np.asarray(y, dtype=float)
    if spec.jumps.size == 0:
        return np.zeros_like(y)
    u = np.broadcast_to(np.asarray(u, dtype=float), y.shape + (spec.jumps.size,))
    beta = np.asarray(spec.beta(t), dtype=float)
    v = y[..., None] + u
    vp = np.maximum(v, 0.0)
    q = spec.q
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ratio = np.where(np.isinf(beta), 0.0, vp / np.where(beta > 0, beta, 1.0))
        # d/dv [v - beta v / (v^q+beta^q)^{1/q}] = 1 - (1 + (v/beta)^q)^{-1-1/q}
        der = np.where(beta > 0, 1.0 - np.power(1.0 + ratio**q, -1.0 - 1.0 / q), 1.0)
        der = np.where((v >= 0) & np.isfinite(beta), der, 0.0)
    return np.sum(spec.jumps.weights * der, axis=-1)


def eval_generator(spec: GeneratorSpec, t: float, y, z=None, u=None) -> np.ndarray:
    """Evaluate ``f(t, y, z, u)``; ``z``/``u`` default to zero."""
    y, z, u = _prep(spec, t, y, z, u)
    q = spec.q
    if spec.family is Family.TOY:
        return -_power(y, q)
    if spec.family is Family.POWER:
        return -spec.a(t) * _power(y, q) + spec.f0(t)
    if spec.family is Family.CONTROL:
        return -spec.a(t) * _power(y, q) - eval_beta_hat(spec, t, y, u) + spec.gamma(t)
    return np.asarray(spec.func(t, y, z, u), dtype=float)


def eval_truncated(spec: GeneratorSpec, t: float, y, z=None, u=None, n: float = math.inf) -> np.ndarray:
    """``f_n = (f - f0) + min(f0, n)``."""
    if math.isinf(n):
        return eval_generator(spec, t, y, z, u)
    if spec.family is Family.POWER and t >= spec.T:
        # f0 is +inf at T so the truncated source equals n there
        y = np.asarray(y, dtype=float)
        a_T = 0.0 if spec.varsigma > 0 else (1.0 if spec.varsigma == 0 else math.inf)
        return -a_T * _power(y, spec.q) + n
    f0 = spec.f0(t)
    return eval_generator(spec, t, y, z, u) - f0 + np.minimum(f0, n)


def remainder(spec: GeneratorSpec, t: float, y, z=None, u=None, n: float = math.inf) -> np.ndarray:
    """``f_n + a_t y|y|^q``: the part the solver treats implicitly."""
    y, z, u = _prep(spec, t, y, z, u)
    f0 = spec.f0(t)
    src = np.minimum(f0, n)
    if spec.family is Family.TOY:
        return np.zeros_like(y)
    if spec.family is Family.POWER:
        return np.zeros_like(y) + src
    if spec.family is Family.CONTROL:
        return src - eval_beta_hat(spec, t, y, u)
    return eval_truncated(spec, t, y, z, u, n) + spec.a(t) * _power(y, spec.q)


def d_remainder_dy(spec: GeneratorSpec, t: float, y, z=None, u=None, n: float = math.inf) -> np.ndarray:
    y, z, u = _prep(spec, t, y, z, u)
    if spec.family in (Family.TOY, Family.POWER):
        return np.zeros_like(y)
    if spec.family is Family.CONTROL:
        return -d_beta_hat_dy(spec, t, y, u)
    h = 1e-6 * (1.0 + np.abs(y))
    return (remainder(spec, t, y + h, z, u, n) - remainder(spec, t, y - h, z, u, n)) / (2 * h)


# ---------------------------------------------------------------------------
# exponents and a priori bounds


def rho(q: float, ell: float, eta: float) -> float:
    """Weight exponent of the weighted Z/U estimate."""
    if not (q > 0 and ell >= 1 and eta < 1):
        raise ValueError("need q > 0, ell >= 1 and eta < 1")
    return 2.0 / q + 2.0 * (1.0 - 1.0 / ell) + 2.0 * eta / ell


def a_priori_shape(spec: GeneratorSpec, t: float, ell: Optional[float] = None) -> float:
    """The a priori estimate without its unknown multiplicative constant."""
    T, q = spec.T, spec.q
    if t >= T:
        return math.inf
    ell = spec.ell if ell is None else ell

    def integrand(s):
        return float((1.0 / (q * spec.a(s))) ** (1.0 / q) + (T - s) ** spec.p * spec.f0(s)) ** ell

    val, _ = integrate.quad(integrand, t, T, limit=200)
    return (T - t) ** (-spec.p) * val ** (1.0 / ell)


def a_priori_bound(spec: GeneratorSpec, t, *, calibration: Optional[float] = None):
    """Upper bound for ``Y_t``; ``+inf`` at and after ``T``.

    Closed forms are used for the toy and power families.  Other families
    need the calibration constant from :func:`calibrate_bound_constant`.
    """
    t_arr = np.asarray(t, dtype=float)
    T, q = spec.T, spec.q
    tau = T - t_arr
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.family is Family.TOY:
            out = np.where(tau > 0, np.power(1.0 / (q * np.where(tau > 0, tau, 1.0)), 1.0 / q), np.inf)
        elif spec.family is Family.POWER:
            s, w = spec.varsigma, spec.varpi
            tp = np.where(tau > 0, tau, 1.0)
            out = ((1.0 / q) ** (1.0 / q) * q / (q - s) * tp ** (-(1.0 + s) / q)
                   + tp ** (1.0 - w) / (2.0 + 1.0 / q - w))
            out = np.where(tau > 0, out, np.inf)
        else:
            if calibration is None:
                raise ValueError("a calibration constant is required for this family")
            out = np.vectorize(lambda s: calibration * a_priori_shape(spec, s))(t_arr)
    return out if out.ndim else float(out)


def calibrate_bound_constant(spec: GeneratorSpec, y_levels, t_ref: float) -> float:
    """Smallest constant making the shape dominate the given ``Y^n_{t_ref}`` samples."""
    shape = a_priori_shape(spec, t_ref)
    return float(np.max(np.asarray(y_levels, dtype=float)) / shape)


# ---------------------------------------------------------------------------
# condition checking

HOLDS, FAILS, BOUND, INDETERMINATE = "holds", "fails", "holds-with-bound", "indeterminate"


@dataclass
class ConditionVerdict:
    name: str
    tag: str
    verdict: str
    evidence: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict in (HOLDS, BOUND)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "verdict": self.verdict, "evidence": _jsonable(self.evidence)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class ConditionReport:
    generator: str
    verdicts: dict

    def __getitem__(self, key) -> ConditionVerdict:
        return self.verdicts[key]

    def holds(self, *names) -> bool:
        return all(self.verdicts[n].ok for n in names)

    def failing(self, names=None) -> list:
        names = names or list(self.verdicts)
        return [n for n in names if not self.verdicts[n].ok]

    def to_dict(self) -> dict:
        return {"generator": self.generator,
                "conditions": {k: v.to_dict() for k, v in self.verdicts.items()}}


def tail_exponent(fn: Callable, T: float, taus=(1e-4, 1e-5, 1e-6, 1e-7)):
    """Log-log slope of ``fn(T - tau)`` as ``tau -> 0``.

    Returns ``(slope, spread)``; a large spread means the local power law has
    not settled and the caller must not trust the slope.
    """
    taus = np.asarray(taus, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.array([float(fn(T - s)) for s in taus])
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        return math.nan, math.inf
    if np.all(vals == 0):
        return math.inf, 0.0
    if np.any(vals == 0):
        return math.nan, math.inf
    lt, lv = np.log(taus), np.log(vals)
    slopes = np.diff(lv) / np.diff(lt)
    return float(slopes[-1]), float(np.ptp(slopes))


def _integrability(fn: Callable, T: float, name: str, tag: str, exponent: Optional[float] = None,
                   t0: float = 0.0) -> ConditionVerdict:
    """Is ``int_{t0}^T fn(s) ds`` finite?  Decided from the power-law tail at ``T``."""
    ev = {}
    if exponent is None:
        slope, spread = tail_exponent(fn, T)
        ev.update(tail_exponent=slope, spread=spread, source="numeric")
        if not math.isfinite(spread) or spread > 0.05:
            return ConditionVerdict(name, tag, INDETERMINATE, ev)
    else:
        slope = exponent
        ev.update(tail_exponent=slope, source="analytic")
    # interior part must be finite as well
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            interior, err = integrate.quad(lambda s: float(fn(s)), t0, T - 1e-4 * T, limit=200)
        except Exception:  # noqa: BLE001
            interior, err = math.nan, math.inf
    ev["interior_integral"] = interior
    if not math.isfinite(interior):
        return ConditionVerdict(name, tag, INDETERMINATE, ev)
    if slope > -1.0 + 1e-6:
        return ConditionVerdict(name, tag, HOLDS, ev)
    return ConditionVerdict(name, tag, FAILS, ev)


def _lattice(spec: GeneratorSpec, zdim: int):
    T = spec.T
    ts = T * np.array([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99])
    ys = np.array([0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0])
    zs = [np.zeros(zdim)]
    for c in (0.5, -0.5, 3.0, -3.0):
        v = np.zeros(zdim)
        v[0] = c
        zs.append(v)
    zs.append(np.full(zdim, 1.0))
    K = spec.jumps.size
    us = [np.zeros(K)]
    for c in (0.5, -0.5, 2.0, -3.0, 10.0):
        us.append(np.full(K, c))
    if K > 1:
        alt = np.ones(K)
        alt[::2] = -1.0
        us.append(alt)
    return ts, ys, np.array(zs), np.array(us)


def check_conditions(spec: GeneratorSpec, jm: Optional[JumpMeasure] = None, *, zdim: int = 1,
                     k_exponent: Optional[float] = None) -> ConditionReport:
    """Machine-check the structural conditions on a deterministic sample lattice.

    Verdicts cover (A1)-(A9), (A6*), (B), the positivity of ``f0``/``a`` and,
    for the power family, the closed-form parameter bounds.  Aggregates ``A``,
    ``A*`` and ``continuity_regime`` summarise them.
    """
    if jm is not None and jm is not spec.jumps:
        if jm.size != spec.jumps.size or not np.allclose(jm.weights, spec.jumps.weights):
            raise ValueError("jump measure does not match the generator")
    T, q, ell, eta = spec.T, spec.q, spec.ell, spec.eta
    ts, ys, zs, us = _lattice(spec, zdim)
    V: dict = {}
    tol = 1e-9

    def f(t, y, z, u):
        return eval_generator(spec, t, np.asarray([y], float), z[None, :], u[None, :])[0]

    # positivity of f0 and a
    f0s = np.array([float(spec.f0(t)) for t in ts])
    as_ = np.array([float(spec.a(t)) for t in ts])
    V["positivity"] = ConditionVerdict(
        "positivity", "(A) f0 >= 0, a > 0",
        HOLDS if np.all(f0s >= 0) and np.all(as_ > 0) else FAILS,
        {"min_f0": f0s.min(), "min_a": as_.min()})

    # (A1) monotonicity with chi = 0
    worst = -math.inf
    for t in ts:
        for z in zs:
            for u in us:
                vals = np.array([f(t, y, z, u) for y in np.concatenate([-ys[::-1], ys])])
                yy = np.concatenate([-ys[::-1], ys])
                d = (vals[:, None] - vals[None, :]) * (yy[:, None] - yy[None, :])
                scale = 1.0 + np.abs(vals[:, None]) + np.abs(vals[None, :])
                worst = max(worst, float(np.max(d / scale)))
    V["A1"] = ConditionVerdict("A1", "(A1)", HOLDS if worst <= tol else FAILS, {"max_violation": worst})

    # (A3) Lipschitz in z
    worst = 0.0
    for t in ts:
        for y in ys:
            for u in us:
                for z1 in zs:
                    for z2 in zs:
                        gap = abs(f(t, y, z1, u) - f(t, y, z2, u)) - spec.L * np.linalg.norm(z1 - z2)
                        worst = max(worst, gap)
    V["A3"] = ConditionVerdict("A3", "(A3)", HOLDS if worst <= tol * 10 else FAILS,
                               {"L": spec.L, "max_excess": worst})

    # (A4) through its Lipschitz consequence in u
    theta_l2 = float(spec.jumps.l2_norm(spec.vartheta)) if spec.jumps.size else 0.0
    worst = 0.0
    if spec.jumps.size:
        for t in ts:
            for y in ys:
                for z in zs[:2]:
                    for u1 in us:
                        for u2 in us:
                            lhs = abs(f(t, y, z, u1) - f(t, y, z, u2))
                            rhs = theta_l2 * float(spec.jumps.l2_norm(u1 - u2))
                            worst = max(worst, lhs - rhs)
    V["A4"] = ConditionVerdict("A4", "(A4)", HOLDS if worst <= 1e-8 else FAILS,
                               {"vartheta_l2": theta_l2, "max_excess": worst})

    # (A5)
    worst = -math.inf
    for t in ts:
        a_t = float(spec.a(t))
        for z in zs:
            for u in us:
                base = f(t, 0.0, z, u)
                for y in ys:
                    lhs = f(t, y, z, u)
                    rhs = -a_t * y ** (1 + q) + base
                    worst = max(worst, (lhs - rhs) / (1.0 + abs(rhs)))
    V["A5"] = ConditionVerdict("A5", "(A5)", HOLDS if worst <= tol else FAILS, {"max_violation": worst})

    power = spec.family is Family.POWER
    s_, w_ = (spec.varsigma, spec.varpi) if power else (None, None)
    p = spec.p

    # (A2): sup_{|y|<=n} |f(t,y,0,0) - f0| integrable; for these families it scales with a_t
    def a2(t, n=10.0):
        yy = np.linspace(-n, n, 41)
        return float(np.max(np.abs(eval_generator(spec, t, yy) - spec.f0(t))))

    V["A2"] = _integrability(a2, T, "A2", "(A2)", exponent=s_ if power else None)

    bracket = _bracket(spec)

    kappa0 = min(-s_ / q, p - w_) if power else None
    V["A6"] = _integrability(lambda s: bracket(s) ** ell, T, "A6", "(A6)",
                             exponent=ell * kappa0 if power else None)
    V["A6*"] = _integrability(lambda s: (T - s) ** (-1.0 + eta) * bracket(s) ** ell, T, "A6*", "(A6*)",
                              exponent=-1.0 + eta + ell * kappa0 if power else None)

    # (A7)
    if k_exponent is None:
        k_exponent = (max(2.0, ell / (ell - 1.0)) if ell > 1 else 2.0) + 1.0
    a7 = float(np.sum(spec.jumps.weights * spec.vartheta**k_exponent)) if spec.jumps.size else 0.0
    V["A7"] = ConditionVerdict("A7", "(A7)", BOUND if math.isfinite(a7) else FAILS,
                               {"k": k_exponent, "integral": a7})

    # (A8)
    V["A8"] = _integrability(spec.f0, T, "A8", "(A8)", exponent=-w_ if power else None)

    # (A9)
    r = rho(q, ell, eta)
    V["A9"] = ConditionVerdict("A9", "(A9) rho < 1", HOLDS if r < 1 else FAILS,
                               {"rho": r, "q": q, "ell": ell, "eta": eta})

    # (B)
    gy = np.concatenate([ys, [100.0, 1e3]])
    g_vals = np.asarray(spec.g(gy), float)
    gp_vals = np.asarray(spec.g_prime(gy), float)
    gpp = np.diff(gp_vals) / np.diff(gy)
    shape_ok = (g_vals[0] < 0 and gp_vals[0] < 0 and np.all(g_vals < 0) and np.all(gp_vals < 0)
                and np.all(gpp <= 1e-9) and np.all(g_vals <= -gy ** (1 + q) + 1e-12))
    worst = -math.inf
    for t in ts:
        b_t = float(spec.b_lower(t))
        for z in zs:
            for u in us:
                base = f(t, 0.0, z, u)
                for y in ys:
                    lhs = b_t * float(spec.g(y))
                    rhs = f(t, y, z, u) - base
                    worst = max(worst, (lhs - rhs) / (1.0 + abs(rhs)))
    b_int = _integrability(spec.b_lower, T, "B_L1", "(B) b in L1", exponent=s_ if power else None)
    ok = shape_ok and worst <= tol and b_int.ok
    V["B"] = ConditionVerdict("B", "(B)", HOLDS if ok else (INDETERMINATE if b_int.verdict == INDETERMINATE else FAILS),
                              {"g_shape_ok": bool(shape_ok), "max_violation": worst,
                               "b_integrability": b_int.verdict})

    if power:
        lo_ok = -1.0 < s_ < q
        w_ok = w_ < 1.0 + 1.0 / q + 1.0 / ell
        ell_ok = (ell < q / s_) if s_ > 0 else True
        V["A6_analytic"] = ConditionVerdict(
            "A6_analytic", "(A6) -1 < varsigma < q, varpi < 1 + 1/q + 1/ell",
            HOLDS if (lo_ok and w_ok and ell_ok) else FAILS,
            {"varsigma_range": lo_ok, "varpi_bound": w_ok, "ell_below_q_over_varsigma": ell_ok})

    base_A = ["positivity", "A1", "A2", "A3", "A4", "A5", "A7"]
    V["A"] = _aggregate("A", "(A)", V, base_A + ["A6"])
    V["A*"] = _aggregate("A*", "(A*)", V, base_A + ["A6*"])
    reg = continuity_regime(spec, report=V)
    V["continuity_regime"] = reg
    return ConditionReport(spec.name or spec.family.value, V)


def _aggregate(name, tag, V, parts) -> ConditionVerdict:
    verdicts = [V[p].verdict for p in parts]
    if all(V[p].ok for p in parts):
        v = HOLDS
    elif any(x == FAILS for x in verdicts):
        v = FAILS
    else:
        v = INDETERMINATE
    return ConditionVerdict(name, tag, v, {"parts": {p: V[p].verdict for p in parts}})


def _bracket(spec: GeneratorSpec) -> Callable:
    """``s -> (1/(q a_s))^{1/q} + (T-s)^p f0_s``; infinite where the damping vanishes."""
    q, T, p = spec.q, spec.T, spec.p

    def bracket(s):
        a_s = float(spec.a(s))
        if a_s <= 0:
            return math.inf
        return (1.0 / (q * a_s)) ** (1.0 / q) + (T - s) ** p * spec.f0(s)

    return bracket


def continuity_regime(spec: GeneratorSpec, report: Optional[dict] = None) -> ConditionVerdict:
    """Does some choice of ``(ell, eta)`` put the generator in the continuity regime?

    With the bracket ``(1/(q a))^{1/q} + (T-s)^p f0`` behaving like
    ``(T-s)^kappa0`` at ``T``, (A6*) needs ``eta > -ell kappa0`` so the
    infimum of ``rho`` over admissible ``(ell, eta)`` is ``2/q - 2 kappa0``
    (``ell -> 1``).  The regime also needs (A1)-(A5), (A7), (A8), (B) and
    ``kappa0 > -1`` so that (A6) holds for ``ell`` close to one.
    """
    if report is None:
        report = check_conditions(spec).verdicts
    q, T, p = spec.q, spec.T, spec.p
    if spec.family is Family.POWER:
        kappa0 = min(-spec.varsigma / q, p - spec.varpi)
        spread = 0.0
    else:
        with np.errstate(invalid="ignore"):
            kappa0, spread = tail_exponent(_bracket(spec), T)
    needed = ["positivity", "A1", "A2", "A3", "A4", "A5", "A7", "A8", "B"]
    ev = {"kappa0": kappa0, "needed": {k: report[k].verdict for k in needed}}
    if not math.isfinite(kappa0) or spread > 0.05:
        return ConditionVerdict("continuity_regime", "(A*)+(B)+(A8)+(A9) for some (ell, eta)",
                                INDETERMINATE, ev)
    # (A6*) needs eta > -ell kappa0 and ell -> 1 minimises rho
    eta_inf = -kappa0
    rho_inf = 2.0 / q - 2.0 * kappa0
    ev.update(eta_inf=eta_inf, rho_inf=rho_inf)
    ok = all(report[k].ok for k in needed) and kappa0 > -1.0 and rho_inf < 1.0
    undecided = any(report[k].verdict == INDETERMINATE for k in needed)
    verdict = HOLDS if ok else (INDETERMINATE if undecided else FAILS)
    return ConditionVerdict("continuity_regime", "(A*)+(B)+(A8)+(A9) for some (ell, eta)", verdict, ev)
