"""Behaviour at the terminal time: weighted Z/U norms, continuity in mean, blow-up."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .bsde_solver import BsdeSolution, PreconditionError, TerminalCondition, ode_oracle
from .forward_sde import PathBundle, SdeSpec, build_bump, check_condition_E
from .generator import Family, GeneratorSpec, JumpMeasure, check_conditions, rho as rho_fn

__all__ = [
    "WeightedNormReport",
    "weighted_zu_norm",
    "default_epsilon",
    "ContinuityReport",
    "continuity_test",
    "BlowupReport",
    "blowup_test",
]


@dataclass
class WeightedNormReport:
    n_levels: list
    values: list
    rho: float
    ell: float
    eta: Optional[float] = None
    se: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        v = np.asarray(self.values, dtype=float)
        if np.all(v == 0):
            return 1.0
        return float(v.max() / v.min()) if v.min() > 0 else math.inf

    def bounded(self, limit: float = 2.0) -> bool:
        return self.ratio <= limit

    def to_dict(self):
        return {"tag": "weighted Z/U estimate", "n": [float(n) for n in self.n_levels],
                "values": self.values, "se": self.se, "rho": self.rho, "ell": self.ell,
                "eta": self.eta, "ratio": self.ratio}


def weighted_zu_norm(solutions: Sequence[BsdeSolution], rho: float, ell: float,
                     jumps: Optional[JumpMeasure] = None, *, eta: Optional[float] = None) -> WeightedNormReport:
    """Path average of ``(int (T-s)^rho (|Z|^2 + ||U||^2) ds)^{ell/2}`` for each level.

    Trapezoidal quadrature on the grid; ``Z``, ``U`` on ``[t_i, t_{i+1})``
    are attached to ``t_i`` and the weight vanishes at ``T``.
    """
    if not solutions:
        raise ValueError("no solutions given")
    grid = solutions[0].grid
    for s in solutions[1:]:
        if len(s.grid) != len(grid) or not np.array_equal(s.grid, grid) or s.M != solutions[0].M:
            raise ValueError("solutions must share grid and bundle")
    T = grid[-1]
    w = (T - grid) ** rho
    dt = np.diff(grid)
    vals, ses = [], []
    for s in solutions:
        h = np.sum(s.z**2, axis=2)
        if s.u.shape[2]:
            lam = jumps.weights if jumps is not None else np.ones(s.u.shape[2])
            h = h + np.sum(lam * s.u**2, axis=2)
        wh = np.concatenate([h * w[:-1], np.zeros((s.M, 1))], axis=1)
        integral = np.sum(0.5 * (wh[:, :-1] + wh[:, 1:]) * dt, axis=1)
        per_path = integral ** (0.5 * ell)
        vals.append(float(per_path.mean()))
        ses.append(float(per_path.std(ddof=1) / math.sqrt(s.M)) if s.M > 1 else 0.0)
    return WeightedNormReport([s.n for s in solutions], vals, rho, ell, eta, ses)


# ---------------------------------------------------------------------------
# continuity in mean


def default_epsilon(sde: SdeSpec, shape, T: float = 1.0) -> float:
    """Width of the bump transition.

    Four forward-jump magnitudes or a radius over eight, whichever is
    smaller, then capped so that ``(1 + K_h) epsilon < nu``.
    """
    cands = []
    if sde.jumps.size:
        pts = np.vstack([shape.sample_boundary(16), shape.sample_inside(16)])
        mags = [np.max(np.linalg.norm(sde.h(t, pts, k), axis=1))
                for t in np.linspace(0.0, T, 5) for k in range(sde.jumps.size)]
        if max(mags) > 0:
            cands.append(4.0 * max(mags))
    if hasattr(shape, "radius"):
        cands.append(shape.radius / 8.0)
    cap = 0.99 * shape.nu / (1.0 + sde.K_h)
    return min(cands + [cap]) if cands else 0.5 * cap


@dataclass
class ContinuityReport:
    epsilon: float
    gamma: float
    grid: np.ndarray
    n_levels: list
    series: list            # per n: mean of Y^n_t phi(X_t) over the grid
    terminal: list          # per n: mean of (Phi ^ n) phi(X_T)
    gap: list               # per n: |series - terminal|
    gap_se: list            # per n: paired standard errors of the gap
    last: int = 5
    divergence_n: list = field(default_factory=list)
    divergence_values: list = field(default_factory=list)
    divergence_se: list = field(default_factory=list)
    thresholds: tuple = (10.0, 100.0, 1000.0)

    def tail(self, j: int = -1):
        g = self.gap[j][-self.last - 1:-1]
        s = self.gap_se[j][-self.last - 1:-1]
        return g, s

    def gap_monotone(self, j: int = -1, k: float = 3.0) -> bool:
        """Non-increasing up to sampling noise: no step up exceeds ``k`` combined SEs.

        ``k=0`` asks for strict monotonicity of the point estimates.
        """
        g, s = self.tail(j)
        return bool(np.all(np.diff(g) <= k * np.hypot(s[1:], s[:-1])))

    def final_within(self, j: int = -1, k: float = 3.0) -> bool:
        g, s = self.tail(j)
        return bool(g[-1] < k * s[-1]) if s[-1] > 0 else bool(g[-1] <= 1e-12)

    def crossings(self) -> dict:
        """Smallest level at which each divergence threshold is crossed (``None`` if never)."""
        out = {}
        for thr in self.thresholds:
            hit = [n for n, v in zip(self.divergence_n, self.divergence_values) if v >= thr]
            out[thr] = min(hit) if hit else None
        return out

    def to_dict(self):
        rows = []
        for j, n in enumerate(self.n_levels):
            g, s = self.tail(j)
            rows.append({"n": float(n), "tail_gap": g.tolist(), "tail_se": s.tolist(),
                         "monotone": self.gap_monotone(j),
                         "strictly_monotone": self.gap_monotone(j, 0.0), "final_within_3se": self.final_within(j)})
        return {"tag": "continuity in mean at T", "epsilon": self.epsilon, "gamma": self.gamma,
                "levels": rows,
                "divergence": {"n": [float(v) for v in self.divergence_n],
                               "values": self.divergence_values,
                               "crossings": {str(k): v for k, v in self.crossings().items()}}}


def _require_continuity(gen: GeneratorSpec, sde: SdeSpec, shape, T: float):
    rep = check_condition_E(sde, shape, T=T)
    if not rep.passed:
        raise PreconditionError("jump condition (E2) fails for the singular set", "E2")
    r = rho_fn(gen.q, gen.ell, gen.eta)
    if not r < 1:
        raise PreconditionError(f"(A9) fails: rho = {r:.4g} >= 1", "A9")
    cond = check_conditions(gen)
    if not cond["A8"].ok:
        raise PreconditionError("(A8) fails: f0 is not integrable", "A8")


def continuity_test(solutions: Sequence[BsdeSolution], tc: TerminalCondition, bundle: PathBundle,
                    epsilon: Optional[float] = None, gamma: Optional[float] = None, *,
                    gen: GeneratorSpec, sde: SdeSpec, last: int = 5,
                    divergence: Optional[tuple] = None,
                    phi_tilde: Optional[Callable] = None) -> ContinuityReport:
    """Compare ``E[Y^n_t phi(X_t)]`` with ``E[(Phi ^ n) phi(X_T)]`` for a bump supported off the set.

    ``divergence`` is an optional ``(solutions, bundle)`` pair (usually on a
    grid refined toward ``T``) for the on-set branch, evaluated with
    ``phi_tilde`` (default ``1``) at the last interior grid time.
    """
    shape = tc.singular_set
    if shape is None:
        raise PreconditionError("terminal condition has no singular set", "C1")
    _require_continuity(gen, sde, shape, bundle.T)
    eps = default_epsilon(sde, shape, bundle.T) if epsilon is None else float(epsilon)
    gam = 2.0 * (gen.q + 1.0) / gen.q + 1.0 if gamma is None else float(gamma)
    phi = build_bump(shape, eps, gam, gen.q)
    weights = np.stack([phi(bundle.state(i)) for i in range(bundle.N + 1)], axis=1)
    series, terms, gaps, ses = [], [], [], []
    for s in solutions:
        if s.M != bundle.M or len(s.grid) != len(bundle.grid):
            raise ValueError("solution does not match the bundle")
        term_path = np.where(weights[:, -1] > 0, tc.truncated(bundle.terminal, s.n), 0.0) * weights[:, -1]
        yphi = s.y * weights
        diff = yphi - term_path[:, None]
        series.append(yphi.mean(axis=0))
        terms.append(float(term_path.mean()))
        gaps.append(np.abs(diff.mean(axis=0)))
        ses.append(diff.std(axis=0, ddof=1) / math.sqrt(bundle.M))
    rep = ContinuityReport(eps, gam, bundle.grid, [s.n for s in solutions], series, terms, gaps, ses, last)
    if divergence is not None:
        dsols, dbundle = divergence
        for s in dsols:
            x = dbundle.state(dbundle.N - 1)
            w = np.ones(len(x)) if phi_tilde is None else np.asarray(phi_tilde(x), dtype=float)
            v = s.y[:, -2] * w
            rep.divergence_n.append(s.n)
            rep.divergence_values.append(float(v.mean()))
            rep.divergence_se.append(float(v.std(ddof=1) / math.sqrt(len(v))))
    return rep


# ---------------------------------------------------------------------------
# blow-up for non-integrable sources


@dataclass
class BlowupReport:
    t_probe: float
    n_levels: list
    values: list
    lower_bounds: list
    regime: str                  # "divergent" or "integrable"
    mode: str
    growth: list = field(default_factory=list)
    oracle_values: list = field(default_factory=list)
    min_path_values: list = field(default_factory=list)

    @property
    def lower_bound_holds(self) -> bool:
        return all(v >= lb * (1 - 1e-6) - 1e-12 for v, lb in zip(self.values, self.lower_bounds))

    @property
    def diverges(self) -> bool:
        return all(g >= 2.0 for g in self.growth)

    @property
    def stabilizes(self) -> bool:
        a, b = self.values[-2], self.values[-1]
        return abs(b - a) / abs(b) < 0.05

    @property
    def oracle_agreement(self) -> Optional[float]:
        if not self.oracle_values or self.mode != "solver":
            return None
        return max(abs(v - o) / abs(o) for v, o in zip(self.values, self.oracle_values))

    def to_dict(self):
        return {"tag": "blow-up for non-integrable f0", "t": self.t_probe, "regime": self.regime,
                "mode": self.mode, "n": [float(n) for n in self.n_levels], "values": self.values,
                "lower_bounds": self.lower_bounds, "growth_per_decade": self.growth,
                "lower_bound_holds": self.lower_bound_holds,
                "diverges": self.diverges if self.regime == "divergent" else None,
                "stabilizes": self.stabilizes if self.regime == "integrable" else None,
                "oracle_max_rel_error": self.oracle_agreement}


def _lower_bound(gen: GeneratorSpec, y_fn: Callable, t: float, n: float) -> float:
    """``exp(-int_t^T a |y|^q) * int_t^T (f0 ^ n)`` along a deterministic solution."""
    T, q = gen.T, gen.q
    brk = [T - 1.0 / n ** (1.0 / gen.varpi)] if gen.family is Family.POWER and gen.varpi > 0 else []
    brk = [b for b in brk if t < b < T]
    src, _ = integrate.quad(lambda s: min(float(gen.f0(s)), n), t, T, points=brk or None, limit=400)
    damp, _ = integrate.quad(lambda s: float(gen.a(s)) * abs(float(y_fn(s))) ** q, t, T,
                             points=brk or None, limit=400)
    return math.exp(-damp) * src


def blowup_test(gen: GeneratorSpec, bundle: Optional[PathBundle] = None, *,
                n_list: Sequence[float] = (10.0, 100.0, 1000.0), t_probe: Optional[float] = None,
                solutions: Optional[Sequence[BsdeSolution]] = None, xi: float = 0.0) -> BlowupReport:
    """Growth of ``Y^n`` near ``T`` as ``n`` increases, for a deterministic source ``f0``.

    Without ``solutions`` the deterministic oracle is used.  With solver
    output, the population mean at the grid time nearest ``t_probe`` is
    compared against the oracle and the minimum over paths is recorded.
    The terminal value ``xi`` is finite (zero by default) so any growth
    comes from the source term alone.
    """
    if gen.family is not Family.POWER:
        raise ValueError("blow-up test needs a deterministic power-type source")
    T = gen.T
    t_probe = T - 0.01 * T if t_probe is None else float(t_probe)
    regime = "divergent" if gen.varpi >= 1 else "integrable"
    oracles = [ode_oracle(gen, n, terminal=min(xi, n)) for n in n_list]
    ovals = [float(o(t_probe)) for o in oracles]
    lbs = [_lower_bound(gen, o, t_probe, n) for o, n in zip(oracles, n_list)]
    mode = "oracle"
    vals = ovals
    mins = []
    if solutions is not None:
        mode = "solver"
        i = int(np.argmin(np.abs(solutions[0].grid - t_probe)))
        t_probe = float(solutions[0].grid[i])
        ovals = [float(o(t_probe)) for o in oracles]
        lbs = [_lower_bound(gen, o, t_probe, n) for o, n in zip(oracles, n_list)]
        vals = [float(s.y[:, i].mean()) for s in solutions]
        mins = [float(s.y[:, i].min()) for s in solutions]
    growth = []
    for (n0, v0), (n1, v1) in zip(zip(n_list, vals), zip(n_list[1:], vals[1:])):
        decades = math.log10(n1 / n0)
        growth.append((v1 / v0) ** (1.0 / decades) if v0 > 0 else math.inf)
    return BlowupReport(t_probe, list(n_list), vals, lbs, regime, mode, growth, ovals, mins)
