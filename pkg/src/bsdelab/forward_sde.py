"""Jump-diffusion simulation, singular sets and bump test functions."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import _rng
from .generator import JumpMeasure

__all__ = [
    "make_grid",
    "SdeSpec",
    "PathBundle",
    "SimulationError",
    "simulate",
    "HalfLine",
    "Ball",
    "ComplementOfBall",
    "ConditionEReport",
    "check_condition_E",
    "TestFunction",
    "build_bump",
    "thread_count",
]

BLOCK = 4096


class SimulationError(RuntimeError):
    def __init__(self, msg, path=None, step=None):
        super().__init__(msg)
        self.path = path
        self.step = step


def make_grid(T: float, N: int, refinement: float = 1.0) -> np.ndarray:
    """``t_i = T (1 - (1 - i/N)^refinement)``; ``refinement > 1`` packs points near ``T``."""
    if N < 1 or T <= 0 or refinement < 1:
        raise ValueError("need N >= 1, T > 0 and refinement >= 1")
    s = np.arange(N + 1) / N
    grid = T * (1.0 - (1.0 - s) ** refinement)
    grid[0], grid[-1] = 0.0, T
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid collapsed; lower the refinement or N")
    return grid


def thread_count() -> int:
    env = os.environ.get("BSDE_LAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


Coef = Union[float, np.ndarray, Callable]


def _as_drift(c: Coef, d: int) -> Callable:
    if callable(c):
        return c
    v = np.broadcast_to(np.asarray(c, dtype=float), (d,)).copy()
    return lambda t, x: np.broadcast_to(v, x.shape)


def _as_diffusion(c: Coef, d: int) -> Callable:
    if callable(c):
        return c
    arr = np.asarray(c, dtype=float)
    mat = arr * np.eye(d) if arr.ndim == 0 else (np.diag(arr) if arr.ndim == 1 else arr)
    return lambda t, x: np.broadcast_to(mat, x.shape[:1] + (d, d))


def _as_jump(c: Coef, d: int, K: int) -> Callable:
    if callable(c):
        return c
    arr = np.asarray(c, dtype=float)
    tab = np.broadcast_to(arr.reshape(-1, 1) if arr.ndim == 1 and arr.shape[0] == K and d == 1
                          else arr, (K, d)).copy()
    return lambda t, x, k: np.broadcast_to(tab[k], x.shape)


@dataclass(frozen=True)
class SdeSpec:
    """Forward dynamics ``dX = b dt + sigma dW + int h(X-, e) mu~(de, dt)``.

    ``drift(t, x)`` maps ``(M, d)`` to ``(M, d)``, ``diffusion(t, x)`` to
    ``(M, d, d)`` and ``jump(t, x, k)`` gives the jump for mark index ``k``.
    Constants are accepted in place of callables.
    """

    dim: int
    x0: np.ndarray
    drift: Coef = 0.0
    diffusion: Coef = 0.0
    jump: Coef = 0.0
    jumps: JumpMeasure = field(default_factory=JumpMeasure.empty)
    K_bsigma: float = 0.0
    K_h: float = 0.0
    C_bsigma: float = 0.0
    C_h: float = 0.0

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValueError("dim must be positive")
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (d,)).copy()
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "_b", _as_drift(self.drift, d))
        object.__setattr__(self, "_s", _as_diffusion(self.diffusion, d))
        object.__setattr__(self, "_h", _as_jump(self.jump, d, self.jumps.size))

    def b(self, t, x):
        return np.asarray(self._b(t, x), dtype=float)

    def sigma(self, t, x):
        return np.asarray(self._s(t, x), dtype=float)

    def h(self, t, x, k):
        return np.asarray(self._h(t, x, k), dtype=float)


@dataclass(frozen=True)
class PathBundle:
    grid: np.ndarray
    paths: np.ndarray            # (M, N+1, d)
    brownian_increments: np.ndarray  # (M, N, d)
    jump_counts: np.ndarray      # (M, N, K) int32
    seed: int
    stream_scheme: str = _rng.SCHEME

    @property
    def M(self) -> int:
        return self.paths.shape[0]

    @property
    def N(self) -> int:
        return len(self.grid) - 1

    @property
    def d(self) -> int:
        return self.paths.shape[2]

    @property
    def K(self) -> int:
        return self.jump_counts.shape[2]

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.grid)

    def state(self, i: int) -> np.ndarray:
        return self.paths[:, i, :]

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def jump_events(self, m: int) -> list:
        """``(step, mark)`` pairs for path ``m``, repeated by multiplicity."""
        steps, marks = np.nonzero(self.jump_counts[m])
        out = []
        for s, k in zip(steps, marks):
            out.extend([(int(s), int(k))] * int(self.jump_counts[m, s, k]))
        return out


def _simulate_block(sde: SdeSpec, grid, seed, lo, hi):
    d, K = sde.dim, sde.jumps.size
    N = len(grid) - 1
    idx = np.arange(lo, hi)
    m = hi - lo
    X = np.empty((m, N + 1, d))
    dW = np.empty((m, N, d))
    counts = np.zeros((m, N, K), dtype=np.int32)
    X[:, 0, :] = sde.x0
    slots_w = np.arange(d)
    slots_j = np.arange(d, d + K)
    lam = sde.jumps.weights
    for i in range(N):
        t, dt = grid[i], grid[i + 1] - grid[i]
        x = X[:, i, :]
        dw = _rng.normals(seed, idx, i, slots_w) * math.sqrt(dt)
        dW[:, i, :] = dw
        nxt = x + sde.b(t, x) * dt + np.einsum("mij,mj->mi", sde.sigma(t, x), dw)
        if K:
            u = _rng.uniforms(seed, idx, i, slots_j)
            for k in range(K):
                c = _rng.poisson_from_uniform(u[:, k], lam[k] * dt)
                counts[:, i, k] = c
                hk = sde.h(t, x, k)
                nxt = nxt + (c[:, None] - lam[k] * dt) * hk
        bad = ~np.all(np.isfinite(nxt), axis=1)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise SimulationError(f"non-finite state on path {lo + j} at step {i}", lo + j, i)
        X[:, i + 1, :] = nxt
    return X, dW, counts


def simulate(sde: SdeSpec, grid, M: int, seed: int, *, threads: Optional[int] = None) -> PathBundle:
    """Euler-Maruyama with compensated jumps binned to the end of each step."""
    grid = np.asarray(grid, dtype=float)
    if M < 1:
        raise ValueError("M must be at least 1")
    if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and be strictly increasing")
    blocks = [(lo, min(lo + BLOCK, M)) for lo in range(0, M, BLOCK)]
    threads = thread_count() if threads is None else threads
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda b: _simulate_block(sde, grid, seed, *b), blocks))
    else:
        parts = [_simulate_block(sde, grid, seed, *b) for b in blocks]
    X = np.concatenate([p[0] for p in parts])
    dW = np.concatenate([p[1] for p in parts])
    C = np.concatenate([p[2] for p in parts])
    for a in (X, dW, C):
        a.setflags(write=False)
    return PathBundle(grid=grid, paths=X, brownian_increments=dW, jump_counts=C, seed=int(seed))


# ---------------------------------------------------------------------------
# singular sets


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim == 1:
        x = x[:, None] if d == 1 else x[None, :]
    return x


class _Shape:
    nu: float
    dim: int

    def contains(self, x) -> np.ndarray:
        return self.distance(x) <= 0

    def distance(self, x) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def distance_grad(self, x) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def distance_hess(self, x) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class HalfLine(_Shape):
    """``{x <= threshold}`` (side ``"below"``) or ``{x >= threshold}`` in one dimension."""

    threshold: float = 0.0
    side: str = "below"
    nu: float = 0.1
    dim: int = 1

    def __post_init__(self):
        if self.side not in ("below", "above"):
            raise ValueError("side must be 'below' or 'above'")
        if self.dim != 1:
            raise ValueError("half-line sets live in one dimension")

    @property
    def _sgn(self):
        return 1.0 if self.side == "below" else -1.0

    def distance(self, x):
        x = _as_points(x, 1)
        return self._sgn * (x[:, 0] - self.threshold)

    def distance_grad(self, x):
        x = _as_points(x, 1)
        return np.full((len(x), 1), self._sgn)

    def distance_hess(self, x):
        return np.zeros((len(_as_points(x, 1)), 1, 1))

    def sample_boundary(self, n):
        return np.full((max(n, 1), 1), float(self.threshold))

    def sample_inside(self, n, span=5.0):
        r = np.linspace(0.0, span, max(n, 2))
        return (self.threshold - self._sgn * r)[:, None]


@dataclass(frozen=True)
class Ball(_Shape):
    center: tuple = (0.0,)
    radius: float = 1.0
    nu: float = 0.1

    @property
    def dim(self):
        return len(self.center)

    def _r(self, x):
        x = _as_points(x, self.dim)
        diff = x - np.asarray(self.center, dtype=float)
        return diff, np.linalg.norm(diff, axis=1)

    def distance(self, x):
        return self._r(x)[1] - self.radius

    def distance_grad(self, x):
        diff, r = self._r(x)
        return diff / np.where(r > 0, r, 1.0)[:, None]

    def distance_hess(self, x):
        diff, r = self._r(x)
        rr = np.where(r > 0, r, 1.0)
        n = diff / rr[:, None]
        eye = np.eye(self.dim)[None]
        return (eye - n[:, :, None] * n[:, None, :]) / rr[:, None, None]

    def _directions(self, n):
        d = self.dim
        if d == 1:
            return np.array([[1.0], [-1.0]])
        if d == 2:
            a = np.linspace(0, 2 * np.pi, max(n, 4), endpoint=False)
            return np.stack([np.cos(a), np.sin(a)], axis=1)
        g = np.random.default_rng(0).standard_normal((max(n, 2 * d), d))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def sample_boundary(self, n):
        return np.asarray(self.center) + self.radius * self._directions(n)

    def sample_inside(self, n, span=None):
        dirs = self._directions(n)
        radii = np.linspace(0.0, self.radius, 6)
        return np.concatenate([np.asarray(self.center) + r * dirs for r in radii])


@dataclass(frozen=True)
class ComplementOfBall(Ball):
    """``{|x - center| >= radius}``."""

    def distance(self, x):
        return self.radius - self._r(x)[1]

    def distance_grad(self, x):
        return -Ball.distance_grad(self, x)

    def distance_hess(self, x):
        return -Ball.distance_hess(self, x)

    def sample_inside(self, n, span=5.0):
        dirs = self._directions(n)
        radii = self.radius + np.linspace(0.0, span, 6)
        return np.concatenate([np.asarray(self.center) + r * dirs for r in radii])


@dataclass
class ConditionEReport:
    passed: bool
    nu: float
    counterexamples: list
    checked: int

    def to_dict(self):
        return {"tag": "(E2)", "verdict": "holds" if self.passed else "fails", "nu": self.nu,
                "checked": self.checked, "counterexamples": self.counterexamples[:20]}


def check_condition_E(sde: SdeSpec, s: _Shape, n_samples: int = 64, *, times=None, T: float = 1.0,
                      nu: Optional[float] = None) -> ConditionEReport:
    """Jumps must keep the singular set and push boundary points at least ``nu`` inside."""
    nu = s.nu if nu is None else nu
    times = np.linspace(0.0, T, 11) if times is None else np.asarray(times, dtype=float)
    inside = s.sample_inside(n_samples)
    boundary = s.sample_boundary(n_samples)
    bad = []
    checked = 0
    for t in times:
        for k in range(sde.jumps.size):
            for pts, limit, what in ((inside, 0.0, "inside"), (boundary, -nu, "boundary")):
                dist = s.distance(pts + sde.h(t, pts, k))
                checked += len(pts)
                viol = dist > limit + 1e-12
                for j in np.nonzero(viol)[0][:5]:
                    bad.append({"t": float(t), "mark": k, "x": pts[j].tolist(), "kind": what,
                                "distance_after_jump": float(dist[j])})
    return ConditionEReport(passed=not bad, nu=float(nu), counterexamples=bad, checked=checked)


# ---------------------------------------------------------------------------
# bump test functions


def _smoothstep(r):
    return r**3 * (10.0 + r * (-15.0 + 6.0 * r))


def _smoothstep_d1(r):
    return 30.0 * r**2 * (1.0 - r) ** 2


def _smoothstep_d2(r):
    return 60.0 * r * (1.0 - r) * (1.0 - 2.0 * r)


@dataclass(frozen=True)
class TestFunction:
    """``phi = psi^gamma`` with ``psi`` a C2 quintic transition on the outward distance."""

    shape: _Shape
    epsilon: float
    gamma: float

    __test__ = False  # keep pytest from collecting this class

    def _r(self, x):
        dist = self.shape.distance(x)
        half = 0.5 * self.epsilon
        raw = (dist - half) / half
        return np.clip(raw, 0.0, 1.0), (raw > 0) & (raw < 1), half

    def __call__(self, x) -> np.ndarray:
        r, _, _ = self._r(x)
        return _smoothstep(r) ** self.gamma

    def grad(self, x) -> np.ndarray:
        r, band, half = self._r(x)
        s = _smoothstep(r)
        coef = np.where(band, self.gamma * np.power(np.where(band, s, 1.0), self.gamma - 1)
                        * _smoothstep_d1(r) / half, 0.0)
        return coef[:, None] * self.shape.distance_grad(x)

    def hess(self, x) -> np.ndarray:
        r, band, half = self._r(x)
        s = np.where(band, _smoothstep(r), 1.0)
        g = self.gamma
        d1, d2 = _smoothstep_d1(r) / half, _smoothstep_d2(r) / half**2
        n = self.shape.distance_grad(x)
        H = self.shape.distance_hess(x)
        c1 = np.where(band, g * s ** (g - 1) * d1, 0.0)
        c2 = np.where(band, g * (g - 1) * s ** (g - 2) * d1**2 + g * s ** (g - 1) * d2, 0.0)
        return c2[:, None, None] * n[:, :, None] * n[:, None, :] + c1[:, None, None] * H


def build_bump(s: _Shape, epsilon: float, gamma: float, q: Optional[float] = None) -> TestFunction:
    """Test function equal to 1 at distance ``>= epsilon`` outside the set, 0 within ``epsilon/2``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if q is not None and not gamma > 2.0 * (q + 1.0) / q:
        raise ValueError(f"gamma must exceed 2(q+1)/q = {2 * (q + 1) / q:g}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return TestFunction(s, float(epsilon), float(gamma))
