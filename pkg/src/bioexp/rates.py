"""Optimal binning rates under an FA-exponent demand and a privacy budget.

Fixed-rate codes must use a single helper rate no larger than

    R_w*(E0) = min_{Q: D(Q||P_X) <= E0} E_Q ln 1/P_X(X) - E0
             = sup_{lam >= 0} -lam ln sum_x P_X(x)^(1 + 1/lam) - (1 + lam) E0,

while variable-rate codes may pick the rates per source type.  Both sides
of the fixed-rate identity are computed so callers can see the gap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .probability import (
    ZERO_TOL,
    SimplexGrid,
    SourceModel,
    entropy,
    grid_resolution_for,
    simplex_grid,
)
from .search import bracket_max, golden_max

log = logging.getLogger(__name__)

PRIMAL_GRID_CAP = 200_000
BINARY_PRIMAL_RESOLUTION = 2000
DUALITY_TOL = 1e-4


@dataclass(frozen=True)
class FixedRates:
    r_s: float
    r_w: float

    def __post_init__(self):
        if not (self.r_s >= 0 and self.r_w >= 0):
            raise ValueError("rates must be non-negative")


@dataclass(frozen=True)
class PrivacyBudget:
    h0: float

    def __post_init__(self):
        if not self.h0 >= 0:
            raise ValueError("privacy budget must be non-negative")


@dataclass(frozen=True)
class HelperRateCap:
    """R_w*(E0) together with how it was obtained.

    ``value`` is the usable (clamped) rate.  ``raw`` is the unclamped dual
    value, ``primal`` the grid-minimization value, ``lam`` the maximizing
    multiplier (``inf`` at E0 = 0) and ``useless`` marks a clamped point.
    """

    e0: float
    value: float
    raw: float
    lam: float
    primal: float
    gap: float
    useless: bool
    consistent: bool


def _check_e0(e0: float) -> None:
    if not e0 >= 0:
        raise ValueError(f"E0 must be non-negative, got {e0}")


def _support_px(model: SourceModel) -> np.ndarray:
    return model.px[model.px > ZERO_TOL]


def _log_sum_tilted(logp: np.ndarray, p: np.ndarray, eps: float) -> float:
    """ln sum_x p(x)^(1+eps), accurate for small eps."""
    if eps <= 1.0:
        return float(np.log1p(np.sum(p * np.expm1(eps * logp))))
    return float(logsumexp((1.0 + eps) * logp))


def _lemma1_dual_objective(p: np.ndarray, e0: float):
    logp = np.log(p)
    ln_inv_pmax = -float(logp.max())

    def g(lam: float) -> float:
        if lam == 0.0:
            return ln_inv_pmax - e0
        return -lam * _log_sum_tilted(logp, p, 1.0 / lam) - (1.0 + lam) * e0

    return g


def rw_star_dual(model: SourceModel, e0: float, lam_max: float = 1e12) -> tuple[float, float]:
    """Unclamped sup over lam of the dual objective; returns (value, lam)."""
    _check_e0(e0)
    p = _support_px(model)
    if e0 == 0.0:
        return entropy(p), math.inf
    g = _lemma1_dual_objective(p, e0)
    lo, hi, ok = bracket_max(g, start=1.0, growth=2.0, patience=3, max_x=lam_max)
    if not ok:
        log.warning("lambda bracket hit %g at E0=%g", lam_max, e0)
    best = golden_max(g, lo, hi, xtol=1e-10 * max(1.0, hi))
    return best.value, best.x


def _bisect_boundary(q0: np.ndarray, step: np.ndarray, logp: np.ndarray, e0: float,
                     iters: int = 60) -> np.ndarray:
    """For each row, the t in [0,1] with D(q0 + t*step || p) = e0.

    Every row must be feasible at t=0 and infeasible at t=1; D is convex
    along the segment so the crossing is unique.
    """
    lo = np.zeros(q0.shape[0])
    hi = np.ones(q0.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        q = q0 + mid[:, None] * step
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(q > ZERO_TOL, q * (np.log(q) - logp), 0.0).sum(axis=1)
        inside = d <= e0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return lo


def rw_star_primal(model: SourceModel, e0: float, resolution: int | None = None) -> float:
    """Unclamped min of E_Q ln 1/P_X - E0 over the divergence ball, by grid.

    The grid minimum is refined on every grid edge that leaves the ball:
    the crossing point is found by bisection.  A linear objective over a
    smooth convex set is first-order flat along the boundary at its
    minimizer, so this refinement is accurate to O(mesh^2).
    """
    _check_e0(e0)
    p = _support_px(model)
    k = p.size
    if k == 1:
        return -e0
    if resolution is None:
        resolution = (BINARY_PRIMAL_RESOLUTION if k == 2
                      else min(BINARY_PRIMAL_RESOLUTION, grid_resolution_for(k, PRIMAL_GRID_CAP)))
    grid = simplex_grid(k, resolution, cap=10 * PRIMAL_GRID_CAP)
    q = grid.points
    logp = np.log(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(q > 0, q * (np.log(q) - logp), 0.0).sum(axis=1)
    lin = -(q @ logp)
    feas = d <= e0
    best = lin[feas].min() if feas.any() else math.inf

    counts = grid.counts
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            ok = feas & (counts[:, j] >= 1)
            if not ok.any():
                continue
            base = q[ok]
            step = np.zeros(k)
            step[i] += 1.0 / resolution
            step[j] -= 1.0 / resolution
            nb = base + step
            with np.errstate(divide="ignore", invalid="ignore"):
                dn = np.where(nb > 0, nb * (np.log(np.clip(nb, 1e-300, None)) - logp), 0.0).sum(axis=1)
            leaving = dn > e0
            if not leaving.any():
                continue
            t = _bisect_boundary(base[leaving], step, logp, e0)
            qb = base[leaving] + t[:, None] * step
            best = min(best, float((-(qb @ logp)).min()))
    if e0 == 0.0:
        best = min(best, entropy(p))
    return float(best - e0)


def rw_star_fixed(model: SourceModel, e0: float, tol: float = DUALITY_TOL,
                  resolution: int | None = None, check: bool = True) -> HelperRateCap:
    """Largest fixed helper rate compatible with FA exponent ``e0``.

    The dual (sup over lambda) supplies the value; the primal grid
    minimization is computed alongside as a cross-check unless
    ``check=False``.  Negative values are clamped to 0 and the point is
    marked ``useless``.
    """
    raw, lam = rw_star_dual(model, e0)
    primal = rw_star_primal(model, e0, resolution) if check else raw
    gap = abs(raw - primal)
    consistent = gap <= tol
    if not consistent:
        log.warning("R_w* duality gap %.3g at E0=%g exceeds %.1g", gap, e0, tol)
    return HelperRateCap(e0=e0, value=max(raw, 0.0), raw=raw, lam=lam, primal=primal,
                         gap=gap, useless=raw < 0.0, consistent=consistent)


def rs_min_fixed(e0: float) -> float:
    """Smallest secret-key rate for FA exponent ``e0`` (blind guessing)."""
    _check_e0(e0)
    return float(e0)


@dataclass(frozen=True, eq=False)
class RateFunctionTable:
    """Per-type optimal rates on a simplex grid over X.

    ``r_w_values`` holds ``inf`` for types outside the open divergence ball
    (no limitation on the helper rate there).  Values are unclamped so that
    ``r_s + r_w = H_Q(X)`` holds exactly inside the ball.
    """

    grid: SimplexGrid
    r_s_values: np.ndarray
    r_w_values: np.ndarray
    e0: float
    divergences: np.ndarray

    @property
    def feasible(self) -> np.ndarray:
        return np.isfinite(self.r_w_values)

    def lookup(self, counts) -> tuple[float, float]:
        """(r_s, r_w) of the grid point with the given integer counts."""
        idx = self._index().get(tuple(int(c) for c in counts))
        if idx is None:
            raise KeyError(f"type {tuple(counts)} not on the grid")
        return float(self.r_s_values[idx]), float(self.r_w_values[idx])

    def _index(self) -> dict:
        cache = self.__dict__.get("_idx")
        if cache is None:
            cache = {tuple(c): i for i, c in enumerate(self.grid.counts.tolist())}
            object.__setattr__(self, "_idx", cache)
        return cache


def rate_functions_variable(model: SourceModel, e0: float, grid: SimplexGrid) -> RateFunctionTable:
    _check_e0(e0)
    if grid.alphabet.size != model.nx:
        raise ValueError("grid alphabet does not match the source")
    q = grid.points
    p = model.px
    supp = p > ZERO_TOL
    outside = (q[:, ~supp] > 0).any(axis=1)
    logp = np.log(np.where(supp, p, 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(q > 0, q * (np.log(q) - logp), 0.0).sum(axis=1)
        cross = -(np.where(q > 0, q * logp, 0.0)).sum(axis=1)
    d = np.maximum(d, 0.0)
    d[outside] = math.inf
    inside = d < e0
    r_w = np.full(q.shape[0], math.inf)
    r_w[inside] = cross[inside] - e0
    r_s = np.where(inside, e0 - d, 0.0)
    for arr in (r_w, r_s, d):
        arr.setflags(write=False)
    return RateFunctionTable(grid, r_s, r_w, float(e0), d)


def rw_star_privacy_fixed(model: SourceModel, h0: float | PrivacyBudget) -> float:
    """R_w**(H0) = min_{0<=s<=1} ln sum_x P_X(x)^s + s H0."""
    if isinstance(h0, PrivacyBudget):
        h0 = h0.h0
    if not h0 >= 0:
        raise ValueError("H0 must be non-negative")
    logp = np.log(_support_px(model))

    def objective(s: float) -> float:
        if s == 1.0:
            return h0             # ln sum_x P_X(x) = 0 exactly
        return float(logsumexp(s * logp)) + s * h0

    # convex in s: check both endpoints, then golden-section the interior
    res = golden_max(lambda s: -objective(s), 0.0, 1.0, xtol=1e-12)
    return max(0.0, min(-res.value, objective(0.0), objective(1.0)))


def privacy_feasible_variable(model: SourceModel, e0: float, h0: float) -> bool:
    """Whether a variable-rate code can meet both E0 and the leakage budget H0."""
    _check_e0(e0)
    if not h0 >= 0:
        raise ValueError("H0 must be non-negative")
    return h0 >= entropy(model.p_x) - e0 - 1e-12


def rw_cap_combined(model: SourceModel, e0: float, h0: float) -> float:
    return min(rw_star_fixed(model, e0, check=False).value, rw_star_privacy_fixed(model, h0))
