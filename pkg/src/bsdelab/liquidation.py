"""Optimal liquidation driven by a solved truncated BSDE.

The inventory ``Q`` is liquidated at rate ``eta`` and by block trades ``zeta``
at the jump times of the factor process. With ``p = 1 + 1/q`` the running
cost is ``alpha |eta|^p + gamma |Q|^p`` plus ``beta |zeta|^p`` per jump and
the terminal cost is ``(Phi(X_T) ^ n) |Q_T|^p``. The value is ``Y_t |Q_t|^p``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bsde_solver import BsdeSolution, TerminalCondition
from .forward_sde import PathBundle
from .generator import Family, GeneratorSpec

__all__ = [
    "PolicyMode", "ControlPolicy", "ControlledRun", "PolicyComparison", "ControlError",
    "pointwise_min", "feedback_policy", "twap_policy", "perturbed_policy",
    "run_controlled", "compare_policies",
]


class ControlError(RuntimeError):
    def __init__(self, msg, detail=None):
        super().__init__(msg)
        self.detail = detail or {}


class PolicyMode(enum.Enum):
    BSDE_FEEDBACK = "BsdeFeedback"
    TWAP = "Twap"
    PERTURBED = "Perturbed"


def _pw(v, p):
    return np.abs(v) ** p


def pointwise_min(w, lin, c, x, p: float, *, tol: float = 1e-13, max_iter: int = 200):
    """Minimise ``w|v|^p + lin*v + c|x+v|^p`` over ``v`` (elementwise, vectorised).

    ``w`` may be ``inf`` (the minimiser is then 0); ``c`` must be nonnegative.
    Returns ``(v*, value)``.
    """
    if p <= 1.0:
        raise ValueError("need p > 1 for strict convexity")
    w, lin, c, x = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (w, lin, c, x)))
    shape = w.shape
    w, lin, c, x = (a.ravel().copy() for a in (w, lin, c, x))
    inf = np.isinf(w)
    w[inf] = 1.0
    if np.any(c < 0) or np.any(w < 0):
        raise ValueError("penalty weights must be nonnegative")

    def deriv(v):
        return (p * w * np.abs(v) ** (p - 1) * np.sign(v) + lin
                + p * c * np.abs(x + v) ** (p - 1) * np.sign(x + v))

    B = np.maximum(1.0, np.abs(x))
    for _ in range(200):
        bad = (deriv(-B) > 0) | (deriv(B) < 0)
        if not np.any(bad):
            break
        B = np.where(bad, 2.0 * B, B)
    lo, hi = -B, B.copy()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        up = deriv(mid) > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= tol * (1.0 + np.abs(mid))):
            break
    v = 0.5 * (lo + hi)
    v[inf] = 0.0
    val = np.where(inf, c * _pw(x, p), w * _pw(v, p) + lin * v + c * _pw(x + v, p))
    if not shape:
        return float(v[0]), float(val[0])
    return v.reshape(shape), val.reshape(shape)


@dataclass(frozen=True)
class ControlPolicy:
    """Feedback rules on a grid: liquidation rate ``rate[m, i]`` (so ``eta = -rate * Q``)
    and block fraction ``theta[m, i, k]`` (so ``zeta = -theta * Q`` on a mark-``k`` jump)."""

    mode: PolicyMode
    grid: np.ndarray
    rate: np.ndarray
    theta: np.ndarray
    factor: float = 1.0
    source_n: Optional[float] = None
    check: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.mode is PolicyMode.PERTURBED:
            return f"Perturbed(x{self.factor:g})"
        return self.mode.value

    def eta(self, i: int, q_inv) -> np.ndarray:
        return -self.rate[:, i] * np.asarray(q_inv, dtype=float)

    def zeta(self, i: int, q_inv, k: int) -> np.ndarray:
        return -self.theta[:, i, k] * np.asarray(q_inv, dtype=float)


def _require_control(gen):
    if gen.family is not Family.CONTROL:
        raise ValueError("liquidation needs a control-family generator")


def _alpha(gen, t):
    return float(np.asarray(gen.alpha(t)))


def feedback_policy(solution: BsdeSolution, gen: GeneratorSpec, *,
                    lattice: int = 9) -> ControlPolicy:
    """Rate ``(Y/alpha)^q`` and block fraction ``c^q / (c^q + beta^q)`` with ``c = (Y+U)^+``.

    The closed forms are checked against ``pointwise_min`` on a small lattice of
    values drawn from the solution; the worst discrepancy is kept in ``check``.
    """
    _require_control(gen)
    q, p = gen.q, gen.p
    grid = solution.grid
    M, N = solution.M, solution.N
    K = gen.jumps.size
    Y = solution.y[:, :N]
    rate = np.empty((M, N))
    theta = np.zeros((M, N, K))
    for i in range(N):
        rate[:, i] = np.power(Y[:, i] / _alpha(gen, grid[i]), q)
        if K:
            beta = np.asarray(gen.beta(grid[i]), dtype=float)
            c = np.maximum(Y[:, i, None] + solution.u[:, i, :], 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                cq = c**q
                th = np.where(np.isinf(beta), 0.0, cq / (cq + beta**q))
            theta[:, i, :] = np.where((c == 0) & ~np.isinf(beta), 0.0, th)

    # cross-check the closed forms by direct minimisation
    rng = np.random.default_rng(0)
    rows = rng.integers(0, M, size=lattice)
    cols = rng.integers(0, N, size=lattice)
    xs = np.linspace(-2.0, 2.0, lattice)
    ii, xx = np.meshgrid(np.arange(lattice), xs, indexing="ij")
    yv = Y[rows[ii], cols[ii]]
    al = np.array([_alpha(gen, grid[j]) for j in cols])[ii]
    lin = p * yv * np.sign(xx) * np.abs(xx) ** (p - 1.0)
    v, _ = pointwise_min(al, lin, 0.0, xx, p)
    cand = -np.power(yv / al, q) * xx
    rate_err = float(np.max(np.abs(v - cand) / (1.0 + np.abs(cand))))
    jump_err = 0.0
    if K:
        for k in range(K):
            beta = np.array([np.asarray(gen.beta(grid[j]), dtype=float)[k] for j in cols])[ii]
            c = np.maximum(yv + solution.u[rows[ii], cols[ii], k], 0.0)
            v, _ = pointwise_min(beta, 0.0, c, xx, p)
            cand = -theta[rows[ii], cols[ii], k] * xx
            jump_err = max(jump_err, float(np.max(np.abs(v - cand) / (1.0 + np.abs(cand)))))
    return ControlPolicy(PolicyMode.BSDE_FEEDBACK, grid, rate, theta, 1.0, solution.n,
                         {"rate_max_rel_err": rate_err, "jump_max_rel_err": jump_err})


def twap_policy(grid, M: int, K: int = 0) -> ControlPolicy:
    """Sell linearly to zero by ``T``: rate ``1/(T - t)``, no block trades."""
    grid = np.asarray(grid, dtype=float)
    T = grid[-1]
    rate = np.broadcast_to(1.0 / (T - grid[:-1]), (M, len(grid) - 1)).copy()
    return ControlPolicy(PolicyMode.TWAP, grid, rate, np.zeros((M, len(grid) - 1, K)))


def perturbed_policy(base: ControlPolicy, factor: float) -> ControlPolicy:
    """Scale the rate of ``base`` by ``factor``; block trades are unchanged."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    return ControlPolicy(PolicyMode.PERTURBED, base.grid, base.rate * factor, base.theta,
                         float(factor), base.source_n, dict(base.check))


@dataclass
class ControlledRun:
    policy: str
    inventory: np.ndarray       # (M, N+1)
    rate_cost: np.ndarray       # per path
    state_cost: np.ndarray
    jump_cost: np.ndarray
    terminal_cost: np.ndarray
    constraint: np.ndarray      # |Q_T| on paths ending in the singular set

    @property
    def total(self) -> np.ndarray:
        return self.rate_cost + self.state_cost + self.jump_cost + self.terminal_cost

    @property
    def cost(self) -> float:
        return float(self.total.mean())

    @property
    def cost_se(self) -> float:
        t = self.total
        return float(t.std(ddof=1) / math.sqrt(len(t))) if len(t) > 1 else 0.0

    def components(self) -> dict:
        return {"rate": float(self.rate_cost.mean()), "state": float(self.state_cost.mean()),
                "jump": float(self.jump_cost.mean()), "terminal": float(self.terminal_cost.mean()),
                "total": self.cost, "se": self.cost_se,
                "constraint_mean": float(self.constraint.mean()) if self.constraint.size else 0.0}


def run_controlled(policy: ControlPolicy, bundle: PathBundle, gen: GeneratorSpec,
                   tc: TerminalCondition, n: float, x0: float = 1.0) -> ControlledRun:
    """Drive the inventory from ``x0`` with ``policy`` on the bundle's noise.

    Within a step the rate is frozen and capped at ``1/dt`` so the inventory
    never crosses zero; block trades hit at the bundle's jump events. The
    jump cost uses the compensator ``beta |zeta|^p lambda dt``.
    """
    _require_control(gen)
    grid = bundle.grid
    if len(grid) != len(policy.grid) or not np.allclose(grid, policy.grid):
        raise ValueError("policy grid differs from the bundle grid")
    if policy.rate.shape[0] != bundle.M:
        raise ValueError("policy and bundle disagree on the number of paths")
    p = gen.p
    M, N, K = bundle.M, bundle.N, bundle.K
    lam = gen.jumps.weights
    Q = np.empty((M, N + 1))
    Q[:, 0] = x0
    rc, sc, jc = np.zeros(M), np.zeros(M), np.zeros(M)
    counts = bundle.jump_counts
    for i in range(N):
        t, dt = grid[i], grid[i + 1] - grid[i]
        qi = Q[:, i]
        r = np.minimum(policy.rate[:, i], 1.0 / dt)
        rc += _alpha(gen, t) * _pw(r * qi, p) * dt
        sc += float(np.asarray(gen.gamma(t))) * _pw(qi, p) * dt
        qn = qi * (1.0 - r * dt)
        if K:
            beta = np.asarray(gen.beta(t), dtype=float)
            for k in range(K):
                if np.isinf(beta[k]):
                    continue
                th = policy.theta[:, i, k]
                jc += beta[k] * _pw(th * qi, p) * lam[k] * dt
                qn = qn * np.power(1.0 - th, counts[:, i, k])
        Q[:, i + 1] = qn
    phi = tc.truncated(bundle.terminal, n)
    with np.errstate(invalid="ignore"):
        term = np.where(Q[:, N] == 0.0, 0.0, phi * _pw(Q[:, N], p))
    total = rc + sc + jc + term
    if not np.all(np.isfinite(total)):
        bad = np.flatnonzero(~np.isfinite(total))
        raise ControlError("non-finite cost", {"paths": bad[:10].tolist(), "count": int(bad.size)})
    in_set = np.zeros(M, dtype=bool)
    if tc.singular_set is not None:
        in_set = np.asarray(tc.singular_set.contains(bundle.terminal), dtype=bool)
    return ControlledRun(policy.label, Q, rc, sc, jc, term, np.abs(Q[in_set, N]))


@dataclass
class PolicyComparison:
    labels: list
    costs: list
    ses: list
    paired_diff: list          # cost(policy) - cost(reference)
    paired_se: list
    value: float
    value_gap: float
    value_tol: float
    reference: str

    @property
    def value_matches(self) -> bool:
        return abs(self.value_gap) <= self.value_tol

    def reference_best(self, k: float = 3.0) -> bool:
        """Reference cost does not exceed any alternative by more than ``k`` paired SEs."""
        return all(d >= -k * s for d, s in zip(self.paired_diff, self.paired_se))

    def strictly_worse(self, k: float = 3.0) -> list:
        return [d > k * s for d, s in zip(self.paired_diff, self.paired_se)]

    def ranking(self) -> list:
        return [self.labels[j] for j in np.argsort(self.costs, kind="stable")]

    def to_dict(self):
        return {"tag": "policy comparison", "reference": self.reference,
                "labels": self.labels, "costs": self.costs, "se": self.ses,
                "paired_diff": self.paired_diff, "paired_se": self.paired_se,
                "value": self.value, "value_gap": self.value_gap, "value_tol": self.value_tol,
                "value_matches": self.value_matches, "reference_best": self.reference_best(),
                "ranking": self.ranking()}


def compare_policies(runs: Sequence[ControlledRun], value: float, *, rel_tol: float = 0.03,
                     k: float = 3.0) -> PolicyComparison:
    """Paired comparison on common noise; ``runs[0]`` is the reference policy.

    ``value`` is ``Y_0 |x|^p``; the reference cost must match it within
    ``max(k * SE, rel_tol * value)``.
    """
    if not runs:
        raise ValueError("need at least one run")
    ref = runs[0].total
    diffs, ses = [], []
    for r in runs:
        d = r.total - ref
        diffs.append(float(d.mean()))
        ses.append(float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0)
    gap = runs[0].cost - value
    tol = max(k * runs[0].cost_se, rel_tol * abs(value))
    return PolicyComparison([r.policy for r in runs], [r.cost for r in runs],
                            [r.cost_se for r in runs], diffs, ses, float(value), float(gap),
                            float(tol), runs[0].policy)
