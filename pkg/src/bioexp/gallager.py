"""Gallager-style (dual) forms of the FR-FA trade-off functions.

Every objective here is a maximization, so any parameter choice gives a
valid lower bound on the FR exponent; the solvers report the best value
found together with the maximizing parameters.

Variable-rate auxiliary distributions W are searched in the coordinates
``W = P_X exp(v / rho) / Z``.  The inner objective is then concave in v and
stays well conditioned for large rho, and rho -> inf (needed at E0 = 0) is
the ordinary limit ``-rho ln Z -> -E_P[v]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .probability import ZERO_TOL, ConditionalPmf, Pmf, SourceModel
from .rates import rw_star_dual, rw_star_fixed
from .search import golden_max

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GallagerConfig:
    rho_initial_cap: float = 8.0
    bracket_growth: float = 2.0
    inner_tol: float = 1e-10
    w_starts: int = 8
    rho_max: float = 1e7
    outer_xtol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        for name in ("rho_initial_cap", "bracket_growth", "inner_tol", "w_starts", "rho_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.bracket_growth <= 1:
            raise ValueError("bracket_growth must exceed 1")


@dataclass(frozen=True)
class DualWitness:
    lam: float | None = None
    rho: float | None = None
    s: float | None = None
    t: float | None = None
    w: np.ndarray | None = None


@dataclass(frozen=True)
class TradeoffPoint:
    """One point of an FR-FA trade-off curve.

    ``witness`` is a joint Q_XY matrix for primal solvers or a
    :class:`DualWitness` for dual ones.
    """

    e0: float
    value: float
    witness: object
    solver_tag: str
    converged: bool = True
    error_bound: float = 0.0
    flags: tuple[str, ...] = field(default_factory=tuple)


def _lse(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def _nonneg(x: float) -> float:
    """Clamp at zero, also mapping -0.0 to 0.0."""
    return float(x) if x > 0 else 0.0


def _logs(model: SourceModel) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(model.pxy), np.log(model.px)


# ---------------------------------------------------------------------------
# f(W) and its closed form


def f_of_w(model: SourceModel, w: Pmf | np.ndarray, rho: float, lam: float) -> float:
    """-ln sum_y [sum_x (P_XY P_X^(rho+lam) W^-rho)^(1/(1+lam))]^(1+lam).

    Returns ``-inf`` when W vanishes on the support of P_X and rho > 0.
    """
    w = w.probs if isinstance(w, Pmf) else np.asarray(w, dtype=float)
    if w.shape != (model.nx,):
        raise ValueError("W must be a pmf over the X alphabet")
    if rho < 0 or lam < 0:
        raise ValueError("rho and lambda must be non-negative")
    lpxy, lpx = _logs(model)
    supp = model.px > ZERO_TOL
    if rho > 0 and np.any(w[supp] <= 0):
        return -math.inf
    with np.errstate(divide="ignore"):
        lw = np.where(supp, np.log(np.where(w > 0, w, 1.0)), 0.0)
    lx = np.where(supp, (rho + lam) * np.where(supp, lpx, 0.0) - rho * lw, 0.0)
    body = lpxy + lx[:, None]
    inner = (1.0 + lam) * _lse(body / (1.0 + lam), axis=0)
    return float(-_lse(inner))


def f_variational(model: SourceModel, w: np.ndarray, rho: float, lam: float,
                  q_xy: np.ndarray) -> float:
    """The Lagrangian whose infimum over Q_XY equals :func:`f_of_w`."""
    q = np.asarray(q_xy, dtype=float)
    qy = q.sum(axis=0)
    py = model.p_y.probs
    val = 0.0
    for y in range(model.ny):
        if qy[y] <= ZERO_TOL:
            continue
        val += qy[y] * math.log(qy[y] / py[y]) if py[y] > 0 else math.inf
        for x in range(model.nx):
            qxy = q[x, y] / qy[y]
            if qxy <= ZERO_TOL:
                continue
            pxy = model.p_x_given_y.rows[y, x]
            if pxy <= 0:
                return math.inf
            val += qy[y] * qxy * (math.log(qxy / pxy)
                                   - (rho + lam) * math.log(model.px[x])
                                   + lam * math.log(qxy) + rho * math.log(w[x]))
    return val


# ---------------------------------------------------------------------------
# fixed rate


def gallager_e0(model: SourceModel, rho: float) -> float:
    """-ln sum_y (sum_x P_XY^(1/(1+rho)))^(1+rho)."""
    lpxy, _ = _logs(model)
    inner = (1.0 + rho) * _lse(lpxy / (1.0 + rho), axis=0)
    return float(-_lse(inner))


def e_fr_fixed_gallager(model: SourceModel, e0: float) -> TradeoffPoint:
    """max over rho in [0,1] and lam >= 0 of the combined fixed-rate objective.

    The lam part separates, so it is solved once (the R_w* dual) and the
    rho part by golden section on a concave function.
    """
    r_raw, lam = rw_star_dual(model, e0)
    best = golden_max(lambda r: gallager_e0(model, r) + r * r_raw, 0.0, 1.0, xtol=1e-10)
    value = _nonneg(best.value) if best.x > 0 else 0.0
    rho = best.x if value > 0 else 0.0
    flags = ("helper_useless",) if r_raw < 0 else ()
    return TradeoffPoint(e0, value, DualWitness(lam=lam, rho=rho), "fixed/gallager", flags=flags)


# ---------------------------------------------------------------------------
# variable rate


class _VariableDual:
    """Objective of the variable-rate dual in (lam, rho, v) coordinates."""

    def __init__(self, model: SourceModel, e0: float):
        supp = model.px > ZERO_TOL
        self.supp = supp
        self.nx = model.nx
        self.px = model.px[supp]
        self.lpx = np.log(self.px)
        with np.errstate(divide="ignore"):
            self.lpxy = np.log(model.pxy[supp])
        self.e0 = e0
        self.k = int(supp.sum())

    def _pieces(self, lam: float, v: np.ndarray):
        # S(v) = sum_y [sum_x (P_XY P_X^lam e^-v)^(1/(1+lam))]^(1+lam)
        a = 1.0 + lam
        body = (self.lpxy + (lam * self.lpx - v)[:, None]) / a
        col = _lse(body, axis=0)
        ln_s = _lse(a * col)
        return a, body, col, ln_s

    def value(self, lam: float, rho: float, v: np.ndarray) -> float:
        _, _, _, ln_s = self._pieces(lam, v)
        penalty = (rho + lam) * self.e0 if self.e0 > 0 else 0.0
        return self._norm(rho, v) - ln_s - penalty

    def _norm(self, rho: float, v: np.ndarray) -> float:
        if math.isinf(rho):
            return -float(self.px @ v)
        if rho == 0.0:
            return -float(v.max())
        return -rho * _lse(self.lpx + v / rho)

    def w_of(self, rho: float, v: np.ndarray) -> np.ndarray:
        if math.isinf(rho):
            w = self.px.copy()
        elif rho == 0.0:
            w = (v == v.max()).astype(float)
            w /= w.sum()
        else:
            z = self.lpx + v / rho
            w = np.exp(z - _lse(z))
        out = np.zeros(self.nx)
        out[self.supp] = w
        return out

    def v_of(self, rho: float, w: np.ndarray) -> np.ndarray:
        w = np.clip(w[self.supp], 1e-300, None)
        v = rho * (np.log(w) - self.lpx)
        return v - v[-1]

    def grad_hess(self, lam: float, rho: float, v: np.ndarray):
        a, body, col, ln_s = self._pieces(lam, v)
        b = np.exp(body - col[None, :])            # b[x, y], columns sum to 1
        r = np.exp(a * col - ln_s)                 # r[y], sums to 1
        mu = b @ r
        hess = (np.outer(mu, mu) - np.diag(mu) / a
                - (lam / a) * (b * r[None, :]) @ b.T)
        if math.isinf(rho):
            w = self.px
            g = mu - w
        else:
            z = self.lpx + v / rho
            w = np.exp(z - _lse(z))
            g = mu - w
            hess = hess - (np.diag(w) - np.outer(w, w)) / rho
        return g, hess

    def maximize_v(self, lam: float, rho: float, v0: np.ndarray, tol: float = 1e-12,
                   max_iter: int = 100) -> tuple[np.ndarray, float, bool]:
        """Damped Newton ascent in v with the last coordinate pinned at 0."""
        if rho == 0.0:
            # v = rho (ln W - ln P_X) vanishes identically
            v = np.zeros_like(v0)
            return v, self.value(lam, rho, v), True
        v = v0.copy()
        if self.k == 1:
            return v, self.value(lam, rho, v), True
        val = self.value(lam, rho, v)
        for _ in range(max_iter):
            g, h = self.grad_hess(lam, rho, v)
            g, h = g[:-1], h[:-1, :-1]
            if np.max(np.abs(g)) < tol:
                return v, val, True
            try:
                step = -np.linalg.solve(h - 1e-14 * np.eye(h.shape[0]), g)
            except np.linalg.LinAlgError:
                step = g
            if not np.all(np.isfinite(step)) or step @ g <= 0:
                step = g
            t = 1.0
            while t > 1e-12:
                cand = v.copy()
                cand[:-1] += t * step
                cval = self.value(lam, rho, cand)
                if cval >= val - 1e-15:
                    break
                t *= 0.5
            else:
                return v, val, False
            if abs(cval - val) < 1e-15 and t < 1.0:
                v, val = cand, max(cval, val)
                return v, val, True
            v, val = cand, max(cval, val)
        return v, val, False


def _invariant(model: SourceModel, perms, tol: float = 1e-9) -> bool:
    """Numerical guard: f(W o pi) = f(W) for random W and each pi."""
    rng = np.random.default_rng(12345)
    for _ in range(2):
        w = rng.dirichlet(np.ones(model.nx))
        rho, lam = rng.uniform(0.2, 2.0), rng.uniform(0.1, 0.9)
        base = f_of_w(model, w, rho, lam)
        for perm in perms:
            if abs(f_of_w(model, w[np.asarray(perm)], rho, lam) - base) > tol * max(1.0, abs(base)):
                return False
    return True


def _cyclic(cols: np.ndarray, tol: float) -> bool:
    """Every P(.|y) is a rotation of P(.|y=0) (modulo-additive channel)."""
    ref = cols[0]
    return all(any(np.max(np.abs(np.roll(ref, c) - col)) <= tol for c in range(ref.size))
               for col in cols)


def _symmetric(model: SourceModel, tol: float = 1e-12) -> bool:
    """Uniform P_X and output-symmetric posteriors, so the optimal W is uniform.

    Two structural tests are tried: each P(.|y) is a rotation of one
    vector, or each is a permutation of one vector with the permutations
    closed under composition.  Invariance of f under the group is then
    checked numerically as a guard, which keeps the test conservative.
    """
    nx = model.nx
    if np.max(np.abs(model.px - 1.0 / nx)) > tol or np.any(model.degenerate_y):
        return False
    cols = model.p_x_given_y.rows          # rows indexed by y: P(.|y)
    if _cyclic(cols, tol) and _invariant(model, [np.roll(np.arange(nx), 1)]):
        return True
    ref = cols[0]
    order_ref = np.argsort(ref, kind="stable")
    perms = []
    for c in cols:
        order = np.argsort(c, kind="stable")
        if np.max(np.abs(np.sort(c) - ref[order_ref])) > tol:
            return False
        perm = np.empty(nx, dtype=int)
        perm[order] = order_ref                 # c[x] = ref[perm[x]]
        perms.append(tuple(perm))
    group = set(perms)
    for p in group:
        for q in group:
            if tuple(np.asarray(p)[list(q)]) not in group:
                return False
    both = [np.asarray(p) for p in group] + [np.argsort(np.asarray(p)) for p in group]
    return _invariant(model, both)


def is_symmetric(model: SourceModel) -> bool:
    return _symmetric(model)


def e_fr_variable_gallager(model: SourceModel, e0: float,
                           config: GallagerConfig | None = None) -> TradeoffPoint:
    """Variable-rate trade-off value by nested search over lam, rho and W.

    lam in [0, 1] by golden section; rho by golden section on [0, cap] with
    the cap doubled until the maximizer is interior; W by Newton ascent in
    v coordinates (W fixed to uniform for symmetric sources).  At E0 = 0
    the supremum over rho is approached only as rho -> inf, and that limit
    is evaluated directly.
    """
    if not e0 >= 0:
        raise ValueError("E0 must be non-negative")
    cfg = config or GallagerConfig()
    prob = _VariableDual(model, e0)
    symmetric = _symmetric(model)
    flags: list[str] = []
    if symmetric:
        flags.append("symmetric")
    converged = True
    zero = np.zeros(prob.k)
    warm = {"v": zero.copy()}
    running = {"best": -math.inf}

    def inner(lam: float, rho: float) -> float:
        nonlocal converged
        if symmetric:
            val = prob.value(lam, rho, zero)
        else:
            v, val, ok = prob.maximize_v(lam, rho, warm["v"], tol=cfg.inner_tol)
            if not ok:
                v2, val2, ok2 = prob.maximize_v(lam, rho, zero, tol=cfg.inner_tol)
                if val2 > val:
                    v, val, ok = v2, val2, ok2
                converged = converged and ok
            warm["v"] = v
        running["best"] = max(running["best"], val)
        return val

    def over_rho(lam: float) -> tuple[float, float]:
        nonlocal converged
        if e0 == 0.0:
            return inner(lam, math.inf), math.inf
        cap = cfg.rho_initial_cap
        while True:
            res = golden_max(lambda r: inner(lam, r), 0.0, cap,
                             xtol=cfg.outer_xtol * max(1.0, cap))
            if res.x <= 0.9 * cap:
                return res.value, res.x
            if cap >= cfg.rho_max:
                converged = False
                return res.value, res.x
            cap *= cfg.bracket_growth

    res_lam = golden_max(lambda l: over_rho(l)[0], 0.0, 1.0, xtol=cfg.outer_xtol)
    lam = res_lam.x
    value, rho = over_rho(lam)

    if symmetric:
        v_best = zero
    else:
        v_best, value, ok = prob.maximize_v(lam, rho, warm["v"], tol=cfg.inner_tol)
        # multi-start safety net at the final (lam, rho)
        rng = np.random.default_rng(cfg.seed)
        starts = [np.full(model.nx, 1.0 / model.nx)]
        starts += [rng.dirichlet(np.ones(model.nx)) for _ in range(cfg.w_starts - 1)]
        r_eff = prob.px.size if math.isinf(rho) else rho
        for w0 in starts:
            if math.isinf(rho) or rho == 0.0:
                v0 = np.log(np.clip(w0[prob.supp], 1e-300, None)) - prob.lpx
                v0 = v0 - v0[-1]
            else:
                v0 = prob.v_of(r_eff, w0)
            v, val, ok2 = prob.maximize_v(lam, rho, v0, tol=cfg.inner_tol)
            if val > value + 1e-9:
                flags.append("multistart_improved")
                v_best, value = v, val
    w = prob.w_of(rho, v_best)
    value = max(value, running["best"]) if not math.isfinite(value) else value
    value = _nonneg(value)
    if not converged:
        flags.append("not_converged")
    return TradeoffPoint(e0, float(value), DualWitness(lam=lam, rho=rho, w=w),
                         "variable/gallager", converged=converged, flags=tuple(flags))


# ---------------------------------------------------------------------------
# mismatched decoding metric


class SupportViolation(ValueError):
    """P' vanishes where P_XY does not."""


@dataclass(frozen=True)
class _Mismatch:
    lpxy: np.ndarray
    lpp: np.ndarray          # ln P'(x|y) indexed [x, y]; -inf at zeros
    pp_pos: np.ndarray
    violation: bool

    @classmethod
    def build(cls, model: SourceModel, p_prime: ConditionalPmf) -> "_Mismatch":
        rows = np.asarray(p_prime.rows, dtype=float)
        if rows.shape != (model.ny, model.nx):
            raise ValueError("P' must be a conditional of X given Y, rows indexed by y")
        pp = rows.T
        pos = pp > ZERO_TOL
        with np.errstate(divide="ignore"):
            lpp = np.where(pos, np.log(np.where(pos, pp, 1.0)), -np.inf)
            lpxy = np.log(model.pxy)
        violation = bool(np.any((model.pxy > ZERO_TOL) & ~pos))
        return cls(lpxy, lpp, pos, violation)

    def second(self, t: float) -> np.ndarray:
        """ln sum_x' P_XY(x', y) / P'(x'|y)^t per y."""
        if t == 0.0:
            body = np.where(np.isfinite(self.lpxy), self.lpxy, -np.inf)
        else:
            body = np.where(np.isfinite(self.lpxy), self.lpxy - t * np.where(self.pp_pos, self.lpp, 0.0),
                            -np.inf)
        return _lse(body, axis=0)

    def first(self, s: float, t: float, extra: np.ndarray | None = None) -> np.ndarray:
        """s * ln sum_x P'(x|y)^(t/s) * exp(extra_x / s) per y (s > 0)."""
        if s <= 0.0:
            base = np.where(self.pp_pos, 0.0, -np.inf)
            if extra is not None:
                base = base + extra[:, None]
            return np.max(base, axis=0)
        r = t / s
        body = np.where(self.pp_pos, r * np.where(self.pp_pos, self.lpp, 0.0), -np.inf)
        if extra is not None:
            body = body + (extra / s)[:, None]
        return s * _lse(body, axis=0)


def _violated(e0: float, tag: str) -> TradeoffPoint:
    log.warning("P' vanishes on the support of P_XY; the exponent is 0")
    return TradeoffPoint(e0, 0.0, DualWitness(s=0.0, t=0.0), tag, flags=("support_violation",))


def _fixed_mismatched_objective(mm: _Mismatch, s: float, t: float, rw: float) -> float:
    return float(-_lse(mm.first(s, t) + mm.second(t)) + s * rw)


def e_fr_fixed_mismatched(model: SourceModel, p_prime: ConditionalPmf, e0: float) -> TradeoffPoint:
    """Fixed-rate trade-off with decoding metric E_Q ln P'(X|Y).

    The objective is jointly concave in (s, t) on 0 <= t <= s <= 1, so
    nested golden sections (s outer, t inner) find the maximum.  If P'
    vanishes where P_XY does not, the true sequence almost surely gets
    metric -inf, so the exponent is 0 and the point is flagged.
    """
    mm = _Mismatch.build(model, p_prime)
    if mm.violation:
        return _violated(e0, "fixed/mismatched")
    rw = rw_star_fixed(model, e0, check=False).raw
    flags: list[str] = []

    def over_t(s: float) -> tuple[float, float]:
        if s == 0.0:
            return _fixed_mismatched_objective(mm, s, 0.0, rw), 0.0
        res = golden_max(lambda t: _fixed_mismatched_objective(mm, s, t, rw), 0.0, s, xtol=1e-10)
        return res.value, res.x

    res = golden_max(lambda s: over_t(s)[0], 0.0, 1.0, xtol=1e-10)
    value, t = over_t(res.x)
    s = res.x
    if value <= 0.0 or s == 0.0:
        value, s, t = 0.0, 0.0, 0.0
    return TradeoffPoint(e0, float(value), DualWitness(s=s, t=t), "fixed/mismatched",
                         flags=tuple(flags))


def _variable_mismatched_objective(mm: _Mismatch, lpx: np.ndarray, px: np.ndarray, e0: float,
                                   lam: float, s: float, t: float, v: np.ndarray) -> float:
    # W = P_X exp(v/lam) / Z turns P_X^(1+lam/s) W^(-lam/s) into P_X exp(-v/s) Z^(lam/s)
    if math.isinf(lam):
        norm, penalty = -float(px @ v), 0.0
    elif lam == 0.0:
        norm, penalty = -float(v.max()), 0.0
    else:
        norm, penalty = -lam * _lse(lpx + v / lam), lam * e0
    if s > 0.0:
        body = np.where(mm.pp_pos, (t / s) * np.where(mm.pp_pos, mm.lpp, 0.0), -np.inf)
        first = s * _lse(body + (lpx - v / s)[:, None], axis=0)
    else:
        first = np.max(np.where(mm.pp_pos, 0.0, -np.inf) - v[:, None], axis=0)
    return float(norm - _lse(first + mm.second(t)) - penalty - s * e0)


def e_fr_variable_mismatched(model: SourceModel, p_prime: ConditionalPmf, e0: float,
                             config: GallagerConfig | None = None) -> TradeoffPoint:
    """Variable-rate trade-off with decoding metric E_Q ln P'(X|Y).

    Maximizes over lam >= 0, 0 <= t <= s <= 1 and W.  The objective is
    concave in (lam, s, t, v) with W = P_X exp(v/lam)/Z, so a bounded
    quasi-Newton search from a few starts suffices; the lam cap doubles
    until the maximizer is interior.
    """
    if not e0 >= 0:
        raise ValueError("E0 must be non-negative")
    cfg = config or GallagerConfig()
    mm = _Mismatch.build(model, p_prime)
    if mm.violation:
        return _violated(e0, "variable/mismatched")
    supp = model.px > ZERO_TOL
    px = model.px[supp]
    lpx = np.log(px)
    mm_s = _Mismatch(mm.lpxy[supp], mm.lpp[supp], mm.pp_pos[supp], mm.violation)
    k = px.size
    flags: list[str] = []
    fixed = e_fr_fixed_mismatched(model, p_prime, e0)

    limit = e0 == 0.0     # the sup over lam is approached only as lam -> inf

    def unpack(z):
        lam = math.inf if limit else z[0]
        s, frac = z[1], z[2]
        t = s * frac
        return lam, s, t, np.append(z[3:], 0.0)

    def neg(z):
        val = _variable_mismatched_objective(mm_s, lpx, px, e0, *unpack(z))
        return -val if math.isfinite(val) else 1e6

    cap = cfg.rho_initial_cap
    best_z, best_val = None, -math.inf
    s0 = fixed.witness.s or 0.5
    f0 = (fixed.witness.t / s0) if fixed.witness.s else 0.5
    starts = [(0.0, s0, f0), (1.0, s0, f0), (1.0, 0.5, 0.5), (0.1, 0.9, 0.5)]
    converged = True
    while True:
        for lam0, s_init, frac0 in starts:
            z0 = np.concatenate([[min(lam0, cap), s_init, frac0], np.zeros(k - 1)])
            lam_bounds = (0.0, 0.0) if limit else (0.0, cap)
            bounds = [lam_bounds, (0.0, 1.0), (0.0, 1.0)] + [(None, None)] * (k - 1)
            if limit:
                z0[0] = 0.0
            res = minimize(neg, z0, method="L-BFGS-B", bounds=bounds,
                           options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 2000})
            if -res.fun > best_val:
                best_val, best_z = -res.fun, res.x
        if limit or best_z[0] <= 0.9 * cap:
            break
        if cap >= cfg.rho_max:
            converged = False
            break
        cap *= cfg.bracket_growth
        starts = [(best_z[0], best_z[1], best_z[2])]
    lam, s, t, v = unpack(best_z)
    if lam == 0.0 or math.isinf(lam):
        w = np.zeros(model.nx)
        w[supp] = px
    else:
        zz = lpx + v / lam
        w = np.zeros(model.nx)
        w[supp] = np.exp(zz - _lse(zz))
    # the lam = 0, W-free slice never beats the fixed-rate value by construction,
    # but the variable-rate value can never be smaller
    value = _nonneg(best_val)
    if not converged:
        flags.append("not_converged")
    return TradeoffPoint(e0, float(value), DualWitness(lam=lam, s=s, t=t, w=w),
                         "variable/mismatched", converged=converged, flags=tuple(flags))
