"""Least-squares estimators of conditional expectations given the current state."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np

__all__ = ["RegressionBasis", "Fit", "regress_conditional", "BasisError"]


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionBasis:
    """``kind="polynomial"`` (total degree ``degree``) or ``kind="partition"`` (``bins`` per axis)."""

    kind: str = "partition"
    degree: int = 3
    bins: int = 40

    def __post_init__(self):
        if self.kind not in ("polynomial", "partition"):
            raise ValueError("basis kind must be 'polynomial' or 'partition'")
        if self.kind == "polynomial" and self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if self.kind == "partition" and self.bins < 1:
            raise ValueError("need at least one bin")

    def size(self, d: int) -> int:
        if self.kind == "partition":
            return self.bins**d
        return len(_monomials(d, self.degree))

    def to_dict(self):
        return {"kind": self.kind, "degree": self.degree, "bins": self.bins}


def _monomials(d, degree):
    out = [()]
    for k in range(1, degree + 1):
        out.extend(combinations_with_replacement(range(d), k))
    return out


def _design(z, monos):
    cols = [np.ones(len(z))]
    for m in monos[1:]:
        c = np.ones(len(z))
        for j in m:
            c = c * z[:, j]
        cols.append(c)
    return np.stack(cols, axis=1)


@dataclass
class Fit:
    """A fitted conditional expectation; ``fitted`` and ``se`` are per sample path."""

    kind: str
    fitted: np.ndarray
    se: np.ndarray
    flagged: bool = False
    condition_number: float = 1.0
    params: dict = field(default_factory=dict)

    def predict(self, states) -> np.ndarray:
        x = _states(states)
        if self.kind == "polynomial":
            z = (x - self.params["shift"]) / self.params["scale"]
            return _design(z, self.params["monos"]) @ self.params["coef"]
        cells = _cells(x, self.params["edges"])
        means = self.params["means"]
        out = means[np.clip(cells, 0, len(means) - 1)]
        empty = self.params["counts"][np.clip(cells, 0, len(means) - 1)] == 0
        out[empty] = self.params["global_mean"]
        return out

    @property
    def coefficients(self) -> np.ndarray:
        return self.params["coef"] if self.kind == "polynomial" else self.params["means"]


def _states(states):
    x = np.asarray(states, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _cells(x, edges):
    idx = np.zeros(len(x), dtype=np.int64)
    mult = 1
    for j in range(x.shape[1]):
        e = edges[j]
        c = np.clip(np.searchsorted(e, x[:, j], side="right") - 1, 0, max(len(e) - 2, 0))
        idx += c * mult
        mult *= max(len(e) - 1, 1)
    return idx


def _partition(x, y, bins, flagged=False):
    d = x.shape[1]
    edges = []
    for j in range(d):
        qs = np.quantile(x[:, j], np.linspace(0.0, 1.0, bins + 1))
        e = np.unique(qs)
        if len(e) == 1:
            e = np.array([e[0], e[0]])
        e[0], e[-1] = -np.inf, np.inf
        edges.append(e)
    cells = _cells(x, edges)
    ncell = int(np.prod([len(e) - 1 for e in edges]))
    counts = np.bincount(cells, minlength=ncell).astype(float)
    k = y.shape[1]
    sums = np.stack([np.bincount(cells, weights=y[:, c], minlength=ncell) for c in range(k)], axis=1)
    sq = np.stack([np.bincount(cells, weights=y[:, c] ** 2, minlength=ncell) for c in range(k)], axis=1)
    safe = np.maximum(counts, 1.0)[:, None]
    means = sums / safe
    var = np.maximum(sq / safe - means**2, 0.0) * (safe / np.maximum(safe - 1.0, 1.0))
    se_cell = np.sqrt(var / safe)
    gm = y.mean(axis=0)
    return Fit("partition", means[cells], se_cell[cells], flagged, 1.0,
               {"edges": edges, "means": means, "counts": counts, "global_mean": gm})


def regress_conditional(targets, states, basis: RegressionBasis, *, check_size: bool = True) -> Fit:
    """Project ``targets`` (shape ``(M,)`` or ``(M, k)``) onto functions of ``states``.

    Rank-deficient polynomial designs fall back to partition averages and
    the returned fit is flagged.
    """
    y = np.asarray(targets, dtype=float)
    squeeze = y.ndim == 1
    y2 = y[:, None] if squeeze else y
    x = _states(states)
    M, d = x.shape
    if len(y2) != M:
        raise ValueError("targets and states disagree on the sample size")
    if check_size and M < 10 * basis.size(d):
        raise BasisError(f"sample size {M} below 10 x basis size {basis.size(d)}")
    if not np.all(np.isfinite(y2)):
        raise FloatingPointError("non-finite regression targets")
    if basis.kind == "partition":
        fit = _partition(x, y2, basis.bins)
    else:
        fit = _polynomial(x, y2, basis)
    if squeeze:
        fit.fitted = fit.fitted[:, 0]
        fit.se = fit.se[:, 0]
        if fit.kind == "polynomial":
            fit.params["coef"] = fit.params["coef"][:, 0]
        else:
            fit.params["means"] = fit.params["means"][:, 0]
            fit.params["global_mean"] = fit.params["global_mean"][0]
    return fit


def _polynomial(x, y, basis) -> Fit:
    M, d = x.shape
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    if np.any(scale <= 1e-12 * (1.0 + np.abs(shift))):
        return _partition(x, y, 1, flagged=True)
    z = (x - shift) / scale
    monos = _monomials(d, basis.degree)
    A = _design(z, monos)
    Q, R = np.linalg.qr(A)
    sv = np.linalg.svd(R, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or cond > 1e10:
        return _partition(x, y, basis.degree + 1, flagged=True)
    coef = np.linalg.solve(R, Q.T @ y)
    fitted = A @ coef
    P = A.shape[1]
    dof = max(M - P, 1)
    sigma = np.sqrt(np.sum((y - fitted) ** 2, axis=0) / dof)
    lev = np.sum(Q**2, axis=1)
    se = np.sqrt(lev)[:, None] * sigma[None, :]
    return Fit("polynomial", fitted, se, False, cond,
               {"shift": shift, "scale": scale, "monos": monos, "coef": coef})
