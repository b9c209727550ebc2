"""Csiszar-style (primal) exponents: divergence minimizations over pmfs.

Each solver scans a composition grid, then polishes the best few grid
points with SLSQP.  Hinge terms ``[A(Q)]_+`` are kept exact by moving them
into an epigraph variable ``tau >= max(0, A(Q))``, which leaves a smooth
convex program.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .gallager import TradeoffPoint
from .probability import (
    ZERO_TOL,
    SourceModel,
    compositions,
    composition_count,
    divergence,
    grid_resolution_for,
)
from .rates import rw_star_fixed

log = logging.getLogger(__name__)

JOINT_GRID_RESOLUTION = 60
JOINT_GRID_CAP = 200_000
N_STARTS = 5
TINY = 1e-300


class ConsistencyError(RuntimeError):
    """A computed curve violates a property it must satisfy."""


@dataclass(frozen=True)
class CurveSpec:
    e0_min: float
    e0_max: float
    steps: int
    mode: str = "both"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not 0 <= self.e0_min <= self.e0_max:
            raise ValueError("need 0 <= e0_min <= e0_max")
        if self.steps > 1 and self.e0_min == self.e0_max:
            raise ValueError("several steps need e0_min < e0_max")
        if self.mode not in ("fixed", "variable", "both"):
            raise ValueError("mode must be fixed, variable or both")

    def grid(self) -> np.ndarray:
        return np.linspace(self.e0_min, self.e0_max, self.steps)


# ---------------------------------------------------------------------------
# vectorized information measures over stacks of joint pmfs (rows = points)


def _xlogx(a: np.ndarray) -> np.ndarray:
    return np.where(a > 0, a * np.log(np.clip(a, TINY, None)), 0.0)


class _JointProblem:
    """Objective pieces for Q_XY restricted to the support of P_XY."""

    def __init__(self, model: SourceModel):
        self.model = model
        self.nx, self.ny = model.nx, model.ny
        self.cells = np.flatnonzero(model.pxy.ravel() > ZERO_TOL)
        self.p_cells = model.pxy.ravel()[self.cells]
        self.lp = np.log(self.p_cells)
        self.xi = self.cells // self.ny
        self.yi = self.cells % self.ny
        self.px = model.px
        with np.errstate(divide="ignore"):
            self.lpx = np.log(np.where(self.px > 0, self.px, 1.0))
        # one-hot maps from support cells to x and y marginals
        self.to_x = np.zeros((self.cells.size, self.nx))
        self.to_x[np.arange(self.cells.size), self.xi] = 1.0
        self.to_y = np.zeros((self.cells.size, self.ny))
        self.to_y[np.arange(self.cells.size), self.yi] = 1.0

    def full(self, q: np.ndarray) -> np.ndarray:
        out = np.zeros(self.nx * self.ny)
        out[self.cells] = q
        return out.reshape(self.nx, self.ny)

    # stacked (N, cells) evaluations ------------------------------------
    def div(self, q):
        return (_xlogx(q) - q * self.lp).sum(axis=-1)

    def cond_entropy(self, q):
        qy = q @ self.to_y
        return -_xlogx(q).sum(axis=-1) + _xlogx(qy).sum(axis=-1)

    def div_x(self, q):
        qx = q @ self.to_x
        return (_xlogx(qx) - qx * self.lpx).sum(axis=-1)

    def cross_x(self, q):
        """E_Q ln 1/P_X(X)."""
        return -(q @ self.lpx[self.xi])

    # gradients for a single point ----------------------------------------
    def grad_div(self, q):
        return np.log(np.clip(q, TINY, None)) + 1.0 - self.lp

    def grad_cond_entropy(self, q):
        qy = (q @ self.to_y)[self.yi]
        return -np.log(np.clip(q, TINY, None)) + np.log(np.clip(qy, TINY, None))

    def grad_div_x(self, q):
        qx = (q @ self.to_x)[self.xi]
        return np.log(np.clip(qx, TINY, None)) + 1.0 - self.lpx[self.xi]

    def grad_cross_x(self, q):
        return -self.lpx[self.xi]


def _joint_grid(prob: _JointProblem, resolution: int | None) -> np.ndarray:
    k = prob.cells.size
    if resolution is None:
        resolution = JOINT_GRID_RESOLUTION
        if composition_count(resolution, k) > JOINT_GRID_CAP:
            resolution = grid_resolution_for(k, JOINT_GRID_CAP)
    return compositions(resolution, k) / resolution


def _conditional_grid(prob: _JointProblem, resolution: int | None) -> np.ndarray:
    """Joint pmfs with X-marginal exactly P_X: P_X(x) times grid rows Q(y|x)."""
    model = prob.model
    per_x = []
    for x in range(prob.nx):
        cells_x = np.flatnonzero(prob.xi == x)
        if cells_x.size == 0:
            continue
        per_x.append(cells_x)
    m = resolution or JOINT_GRID_RESOLUTION
    while True:
        total = 1
        for c in per_x:
            total *= composition_count(m, c.size)
        if total <= JOINT_GRID_CAP or m <= 2:
            break
        m //= 2
    pts = np.zeros((1, prob.cells.size))
    for c in per_x:
        rows = compositions(m, c.size) / m * model.px[prob.xi[c[0]]]
        block = np.zeros((rows.shape[0], prob.cells.size))
        block[:, c] = rows
        pts = (pts[:, None, :] + block[None, :, :]).reshape(-1, prob.cells.size)
    return pts


def _top_indices(values: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n smallest finite values; ties go to the lower index."""
    order = np.lexsort((np.arange(values.size), values))
    order = order[np.isfinite(values[order])]
    return order[:n]


def _polish(prob: _JointProblem, starts: list[np.ndarray], hinge, hinge_grad,
            extra_cons: list[dict], objective: Callable[[np.ndarray], float],
            feasible: Callable[[np.ndarray], bool],
            project: Callable[[np.ndarray], np.ndarray] | None = None) -> tuple[np.ndarray, float]:
    """SLSQP on (q, tau): min D(q||p) + tau, tau >= 0, tau >= hinge(q).

    ``project`` maps the solver output back onto an equality-constrained
    set, since SLSQP only meets equalities to its own tolerance.
    """
    k = prob.cells.size
    best_q, best_val = None, math.inf
    for q0 in starts:
        z0 = np.append(q0, max(0.0, hinge(q0)))

        def fun(z):
            q = z[:-1]
            return float(prob.div(q)) + z[-1]

        def jac(z):
            return np.append(prob.grad_div(z[:-1]), 1.0)

        cons = [
            {"type": "eq", "fun": lambda z: np.sum(z[:-1]) - 1.0,
             "jac": lambda z: np.append(np.ones(k), 0.0)},
            {"type": "ineq", "fun": lambda z: z[-1] - hinge(z[:-1]),
             "jac": lambda z: np.append(-hinge_grad(z[:-1]), 1.0)},
        ] + extra_cons
        bounds = [(0.0, 1.0)] * k + [(0.0, None)]
        with np.errstate(all="ignore"):
            res = minimize(fun, z0, jac=jac, method="SLSQP", bounds=bounds, constraints=cons,
                           options={"ftol": 1e-14, "maxiter": 500})
        q = np.clip(res.x[:-1], 0.0, None)
        q = q / q.sum()
        if project is not None:
            q = project(q)
        for cand in (q, q0):
            if not feasible(cand):
                continue
            val = objective(cand)
            if val < best_val - 1e-15:
                best_q, best_val = cand, val
    return best_q, best_val


def _lipschitz_bound(prob: _JointProblem, q: np.ndarray, mesh: float) -> float:
    g = np.abs(prob.grad_div(q)) + np.abs(prob.grad_cond_entropy(q)) + np.abs(prob.grad_cross_x(q))
    return float(np.max(g) * mesh)


# ---------------------------------------------------------------------------
# public solvers


def fixed_objective(model: SourceModel, q_xy: np.ndarray, rw: float) -> float:
    """D(Q_XY||P_XY) + [R_w - H_Q(X|Y)]_+ evaluated at a joint matrix."""
    from .probability import conditional_entropy
    return divergence(q_xy, model.pxy) + max(0.0, rw - conditional_entropy(q_xy))


def variable_objective(model: SourceModel, q_xy: np.ndarray, e0: float) -> float:
    """D(Q_XY||P_XY) + [E_Q ln 1/P_X - E0 - H_Q(X|Y)]_+ (constraint not checked)."""
    from .probability import conditional_entropy
    q = np.asarray(q_xy, dtype=float)
    qx = q.sum(axis=1)
    with np.errstate(divide="ignore"):
        lpx = np.log(model.px)
    if np.any((qx > ZERO_TOL) & (model.px <= ZERO_TOL)):
        return math.inf
    cross = -float(np.sum(qx[qx > ZERO_TOL] * lpx[qx > ZERO_TOL]))
    return divergence(q, model.pxy) + max(0.0, cross - e0 - conditional_entropy(q))


def e_fr_fixed_csiszar(model: SourceModel, e0: float, resolution: int | None = None) -> TradeoffPoint:
    """min over Q_XY of D(Q_XY||P_XY) + [R_w*(E0) - H_Q(X|Y)]_+."""
    cap = rw_star_fixed(model, e0)
    point = e_fr_at_rate(model, cap.value, resolution)
    flags = ("helper_useless",) if cap.useless else ()
    return TradeoffPoint(e0, point.value, point.witness, "fixed/csiszar",
                         error_bound=point.error_bound, flags=flags)


def e_fr_at_rate(model: SourceModel, rw: float, resolution: int | None = None) -> TradeoffPoint:
    """FR exponent of MAP decoding with a single helper rate ``rw``.

    The point carries ``e0 = nan`` since no FA demand is involved.
    """
    if not rw >= 0:
        raise ValueError("helper rate must be non-negative")
    prob = _JointProblem(model)
    pts = _joint_grid(prob, resolution)
    vals = prob.div(pts) + np.maximum(0.0, rw - prob.cond_entropy(pts))
    idx = _top_indices(vals, N_STARTS)
    starts = [prob.p_cells] + [pts[i] for i in idx]
    q, _ = _polish(
        prob, starts,
        hinge=lambda q: rw - prob.cond_entropy(q),
        hinge_grad=lambda q: -prob.grad_cond_entropy(q),
        extra_cons=[],
        objective=lambda q: fixed_objective(model, prob.full(q), rw),
        feasible=lambda q: True,
    )
    mesh = 1.0 / (resolution or JOINT_GRID_RESOLUTION)
    witness = prob.full(q)
    return TradeoffPoint(math.nan, max(0.0, float(fixed_objective(model, witness, rw))), witness,
                         "fixed/csiszar", error_bound=_lipschitz_bound(prob, starts[0], mesh))


def e_fr_variable_csiszar(model: SourceModel, e0: float, resolution: int | None = None,
                          slack: float = 1e-9) -> TradeoffPoint:
    """min over {Q_XY : D(Q_X||P_X) <= E0} of
    D(Q_XY||P_XY) + [E_Q ln 1/P_X(X) - E0 - H_Q(X|Y)]_+.

    At E0 = 0 the ball is the single point Q_X = P_X and only Q_{Y|X} is
    searched.
    """
    if not e0 >= 0:
        raise ValueError("E0 must be non-negative")
    prob = _JointProblem(model)
    base = _conditional_grid(prob, resolution)
    if e0 > 0:
        pts = _joint_grid(prob, resolution)
        pts = np.concatenate([pts[prob.div_x(pts) <= e0], base])
    else:
        pts = base
    if pts.shape[0] == 0:
        raise RuntimeError("no feasible grid point")
    vals = prob.div(pts) + np.maximum(0.0, prob.cross_x(pts) - e0 - prob.cond_entropy(pts))
    idx = _top_indices(vals, N_STARTS)
    starts = [prob.p_cells] + [pts[i] for i in idx]

    if e0 > 0:
        extra = [{"type": "ineq", "fun": lambda z: e0 - prob.div_x(z[:-1]),
                  "jac": lambda z: np.append(-prob.grad_div_x(z[:-1]), 0.0)}]

        def feasible(q):
            return prob.div_x(q) <= e0 + slack
    else:
        # the last marginal follows from the others and sum(q) = 1; keeping
        # it would make the constraint Jacobian singular
        xs = [x for x in range(prob.nx) if np.any(prob.xi == x)][:-1]
        extra = [] if not xs else [{"type": "eq",
                  "fun": lambda z: (z[:-1] @ prob.to_x)[xs] - prob.px[xs],
                  "jac": lambda z: np.hstack([prob.to_x[:, xs].T, np.zeros((len(xs), 1))])}]

        def feasible(q):
            return np.max(np.abs(q @ prob.to_x - prob.px)) <= slack

        def project(q):
            qx = (q @ prob.to_x)[prob.xi]
            return np.where(qx > 0, q * prob.px[prob.xi] / np.clip(qx, TINY, None),
                            prob.px[prob.xi] / np.bincount(prob.xi, minlength=prob.nx)[prob.xi])

    q, val = _polish(
        prob, starts,
        hinge=lambda q: prob.cross_x(q) - e0 - prob.cond_entropy(q),
        hinge_grad=lambda q: prob.grad_cross_x(q) - prob.grad_cond_entropy(q),
        extra_cons=extra,
        objective=lambda q: variable_objective(model, prob.full(q), e0),
        feasible=feasible,
        project=None if e0 > 0 else project,
    )
    if q is None:
        raise RuntimeError("variable-rate primal found no feasible point")
    witness = prob.full(q)
    mesh = 1.0 / (resolution or JOINT_GRID_RESOLUTION)
    return TradeoffPoint(e0, max(0.0, float(variable_objective(model, witness, e0))), witness,
                         "variable/csiszar", error_bound=_lipschitz_bound(prob, starts[0], mesh))


@dataclass(frozen=True)
class FaExponent:
    value: float
    q_x: np.ndarray
    branch: str


def e_fa(model: SourceModel, r_w: float, r_s: float, resolution: int | None = None) -> FaExponent:
    """min over Q_X of D(Q_X||P_X) + min{R_s, [H_Q(X) - R_w]_+}.

    Splitting the inner min gives min(R_s, min_Q max{D(Q||P), E_Q ln 1/P - R_w}),
    and the second problem is convex.
    """
    if not (r_w >= 0 and r_s >= 0):
        raise ValueError("rates must be non-negative")
    p = model.px
    supp = p > ZERO_TOL
    ps = p[supp]
    lp = np.log(ps)
    k = ps.size
    if resolution is None:
        resolution = 2000 if k == 2 else grid_resolution_for(k, JOINT_GRID_CAP)
    pts = compositions(resolution, k) / resolution
    d = (_xlogx(pts) - pts * lp).sum(axis=1)
    lin = -(pts @ lp) - r_w
    vals = np.maximum(d, lin)
    idx = _top_indices(vals, N_STARTS)

    def obj(q):
        q = np.clip(q, 0, None)
        q = q / q.sum()
        return max(float((_xlogx(q) - q * lp).sum()), float(-(q @ lp)) - r_w), q

    best_val, best_q = math.inf, None
    for i in idx:
        q0 = pts[i]
        z0 = np.append(q0, vals[i])
        cons = [
            {"type": "eq", "fun": lambda z: np.sum(z[:-1]) - 1.0},
            {"type": "ineq", "fun": lambda z: z[-1] - (_xlogx(z[:-1]) - z[:-1] * lp).sum(),
             "jac": lambda z: np.append(-(np.log(np.clip(z[:-1], TINY, None)) + 1.0 - lp), 1.0)},
            {"type": "ineq", "fun": lambda z: z[-1] + z[:-1] @ lp + r_w,
             "jac": lambda z: np.append(lp, 1.0)},
        ]
        with np.errstate(all="ignore"):
            res = minimize(lambda z: z[-1], z0, jac=lambda z: np.append(np.zeros(k), 1.0),
                           method="SLSQP", bounds=[(0.0, 1.0)] * k + [(None, None)],
                           constraints=cons, options={"ftol": 1e-14, "maxiter": 500})
        for cand in (res.x[:-1], q0):
            v, qn = obj(cand)
            if v < best_val:
                best_val, best_q = v, qn
    full = np.zeros(model.nx)
    if r_s <= best_val:
        full[supp] = ps
        return FaExponent(float(r_s), full, "blind_guess")
    full[supp] = best_q
    return FaExponent(float(best_val), full, "helper")


# ---------------------------------------------------------------------------
# sweeps


def _check_monotone(points: list[TradeoffPoint], tol: float = 1e-6) -> None:
    for a, b in zip(points, points[1:]):
        if b.value > a.value + tol:
            raise ConsistencyError(
                f"{a.solver_tag} curve increases from E0={a.e0:g} to E0={b.e0:g}")


def sweep_csiszar(model: SourceModel, spec: CurveSpec) -> dict[str, list[TradeoffPoint]]:
    """Primal trade-off curves on the E0 grid of ``spec``, keyed by mode."""
    out: dict[str, list[TradeoffPoint]] = {}
    e0s = spec.grid()
    if spec.mode in ("fixed", "both"):
        out["fixed"] = [e_fr_fixed_csiszar(model, float(e)) for e in e0s]
        _check_monotone(out["fixed"])
    if spec.mode in ("variable", "both"):
        out["variable"] = [e_fr_variable_csiszar(model, float(e)) for e in e0s]
        _check_monotone(out["variable"])
    if spec.mode == "both":
        for f, v in zip(out["fixed"], out["variable"]):
            if v.value < f.value - 1e-6:
                raise ConsistencyError(f"variable-rate curve below fixed-rate at E0={f.e0:g}")
    return out
