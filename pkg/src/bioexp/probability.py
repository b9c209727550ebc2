"""Finite-alphabet distributions, information measures and simplex grids.

All measures are in nats.  ``0 ln 0`` is taken as 0, and a divergence whose
first argument puts mass where the second has none is returned as
``math.inf`` explicitly (it is never produced by a floating overflow).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

ZERO_TOL = 1e-15
SUM_TOL = 1e-9
LOAD_RENORM_TOL = 1e-6
GRID_POINT_CAP = 5_000_000


class AlphabetMismatch(ValueError):
    """Raised when two objects live on different alphabets."""


class ModelError(ValueError):
    """Raised for an invalid source model or model file."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a[(a < 0) & (a > -ZERO_TOL)] = 0.0
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("alphabet size must be >= 1")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.size)))
        else:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        if len(self.labels) != self.size:
            raise ValueError("labels length must equal alphabet size")

    @classmethod
    def of(cls, k: int) -> "Alphabet":
        return cls(k)


def _check_pmf_vector(p: np.ndarray, tol: float) -> None:
    if np.any(~np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum():.15g}, not 1")


@dataclass(frozen=True, eq=False)
class Pmf:
    """A probability mass function on a finite alphabet."""

    alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size != self.alphabet.size:
            raise ValueError("probs length must equal alphabet size")
        _check_pmf_vector(p, SUM_TOL)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_probs(cls, probs: Sequence[float], alphabet: Alphabet | None = None) -> "Pmf":
        probs = np.asarray(probs, dtype=float)
        return cls(alphabet or Alphabet(probs.size), probs)

    @classmethod
    def uniform(cls, alphabet: Alphabet | int) -> "Pmf":
        if isinstance(alphabet, int):
            alphabet = Alphabet(alphabet)
        return cls(alphabet, np.full(alphabet.size, 1.0 / alphabet.size))

    @property
    def support(self) -> np.ndarray:
        return self.probs > ZERO_TOL

    def __len__(self):
        return self.alphabet.size

    def __repr__(self):
        return f"Pmf({np.array2string(self.probs, precision=6)})"


@dataclass(frozen=True, eq=False)
class JointPmf:
    """Joint distribution on X x Y stored as an |X| x |Y| matrix."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.shape != (self.x_alphabet.size, self.y_alphabet.size):
            raise ValueError("probs must have shape (|X|, |Y|)")
        _check_pmf_vector(p.ravel(), SUM_TOL)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_matrix(cls, probs, x_labels=(), y_labels=()) -> "JointPmf":
        probs = np.asarray(probs, dtype=float)
        return cls(Alphabet(probs.shape[0], tuple(x_labels)),
                   Alphabet(probs.shape[1], tuple(y_labels)), probs)

    @classmethod
    def product(cls, px: Pmf, py: Pmf) -> "JointPmf":
        return cls(px.alphabet, py.alphabet, np.outer(px.probs, py.probs))

    def marginal_x(self) -> Pmf:
        return Pmf(self.x_alphabet, self.probs.sum(axis=1))

    def marginal_y(self) -> Pmf:
        return Pmf(self.y_alphabet, self.probs.sum(axis=0))

    def x_given_y(self) -> "ConditionalPmf":
        """P(x|y); rows indexed by y.  Rows with P(y)=0 become uniform."""
        return ConditionalPmf.from_joint(self.probs.T, self.y_alphabet, self.x_alphabet)

    def y_given_x(self) -> "ConditionalPmf":
        return ConditionalPmf.from_joint(self.probs, self.x_alphabet, self.y_alphabet)

    def __repr__(self):
        return f"JointPmf({np.array2string(self.probs, precision=6)})"


@dataclass(frozen=True, eq=False)
class ConditionalPmf:
    """A stochastic matrix: one row Pmf per conditioning symbol."""

    given_alphabet: Alphabet
    out_alphabet: Alphabet
    rows: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        r = _frozen(self.rows)
        if r.shape != (self.given_alphabet.size, self.out_alphabet.size):
            raise ValueError("rows must have shape (|given|, |out|)")
        for row in r:
            _check_pmf_vector(row, SUM_TOL)
        object.__setattr__(self, "rows", r)
        deg = self.degenerate
        if deg is None:
            deg = np.zeros(r.shape[0], dtype=bool)
        deg = np.array(deg, dtype=bool)
        deg.setflags(write=False)
        object.__setattr__(self, "degenerate", deg)

    @classmethod
    def from_matrix(cls, rows) -> "ConditionalPmf":
        rows = np.asarray(rows, dtype=float)
        return cls(Alphabet(rows.shape[0]), Alphabet(rows.shape[1]), rows)

    @classmethod
    def from_joint(cls, joint: np.ndarray, given: Alphabet, out: Alphabet) -> "ConditionalPmf":
        """Normalize the rows of ``joint`` (rows = conditioning symbol)."""
        marg = joint.sum(axis=1)
        deg = marg <= ZERO_TOL
        rows = np.empty_like(joint, dtype=float)
        rows[~deg] = joint[~deg] / marg[~deg, None]
        rows[deg] = 1.0 / joint.shape[1]
        return cls(given, out, rows, deg)

    def row(self, i: int) -> Pmf:
        return Pmf(self.out_alphabet, self.rows[i])

    def joint_with(self, given_marginal: Pmf) -> np.ndarray:
        """Matrix Q(given, out) = Q(given) * rows(out | given)."""
        return given_marginal.probs[:, None] * self.rows


@dataclass(frozen=True, eq=False)
class SourceModel:
    """The joint memoryless source P_XY together with its derived pieces."""

    joint: JointPmf
    p_x: Pmf = field(init=False)
    p_y: Pmf = field(init=False)
    p_x_given_y: ConditionalPmf = field(init=False)
    p_y_given_x: ConditionalPmf = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "p_x", self.joint.marginal_x())
        object.__setattr__(self, "p_y", self.joint.marginal_y())
        object.__setattr__(self, "p_x_given_y", self.joint.x_given_y())
        object.__setattr__(self, "p_y_given_x", self.joint.y_given_x())

    @classmethod
    def from_matrix(cls, p_xy, x_labels=(), y_labels=()) -> "SourceModel":
        return cls(JointPmf.from_matrix(p_xy, x_labels, y_labels))

    @property
    def nx(self) -> int:
        return self.joint.x_alphabet.size

    @property
    def ny(self) -> int:
        return self.joint.y_alphabet.size

    @property
    def pxy(self) -> np.ndarray:
        return self.joint.probs

    @property
    def px(self) -> np.ndarray:
        return self.p_x.probs

    @property
    def degenerate_x(self) -> np.ndarray:
        return ~self.p_x.support

    @property
    def degenerate_y(self) -> np.ndarray:
        return ~self.p_y.support

    def to_json(self) -> dict:
        return {
            "x_labels": list(self.joint.x_alphabet.labels),
            "y_labels": list(self.joint.y_alphabet.labels),
            "p_xy": self.pxy.tolist(),
        }

    def __repr__(self):
        return f"SourceModel({np.array2string(self.pxy, precision=6)})"


def load_model(path: str | Path) -> SourceModel:
    """Read a source model file ``{"x_labels", "y_labels", "p_xy"}``.

    Totals within 1e-9 of one are accepted as is; totals within 1e-6 are
    renormalized with a warning; anything further off is rejected.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from exc
    return model_from_dict(data)


def model_from_dict(data: dict) -> SourceModel:
    try:
        p = np.asarray(data["p_xy"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError("model needs a numeric 'p_xy' matrix") from exc
    if p.ndim != 2 or p.size == 0:
        raise ModelError("'p_xy' must be a non-empty 2-d matrix")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ModelError("'p_xy' entries must be finite and non-negative")
    x_labels = data.get("x_labels") or [str(i) for i in range(p.shape[0])]
    y_labels = data.get("y_labels") or [str(j) for j in range(p.shape[1])]
    if len(x_labels) != p.shape[0] or len(y_labels) != p.shape[1]:
        raise ModelError("label lists do not match the 'p_xy' shape")
    total = p.sum()
    if abs(total - 1.0) > LOAD_RENORM_TOL:
        raise ModelError(f"'p_xy' sums to {total:.12g}")
    if abs(total - 1.0) > SUM_TOL:
        log.warning("p_xy sums to %.12g; renormalizing", total)
        p = p / total
    return SourceModel.from_matrix(p, x_labels, y_labels)


# ---------------------------------------------------------------------------
# information measures


def _xlogx_over(q: np.ndarray, p: np.ndarray) -> float:
    """sum q ln(q/p) with 0 ln 0 = 0 and inf when q>0, p=0."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    qs = q > ZERO_TOL
    if np.any(qs & (p <= ZERO_TOL)):
        return math.inf
    return float(np.sum(q[qs] * np.log(q[qs] / p[qs])))


def _entropy_vec(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    nz = p > ZERO_TOL
    return float(-np.sum(p[nz] * np.log(p[nz])))


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, (Pmf, JointPmf)) else np.asarray(p, dtype=float)


def entropy(p: Pmf | np.ndarray) -> float:
    """Shannon entropy in nats."""
    return _entropy_vec(_probs(p).ravel())


def divergence(q: Pmf | np.ndarray, p: Pmf | np.ndarray) -> float:
    """KL divergence D(q||p) in nats; ``math.inf`` off the support of p."""
    if isinstance(q, Pmf) and isinstance(p, Pmf) and q.alphabet.size != p.alphabet.size:
        raise AlphabetMismatch("divergence over different alphabets")
    qa, pa = _probs(q), _probs(p)
    if qa.shape != pa.shape:
        raise AlphabetMismatch(f"shapes {qa.shape} and {pa.shape} differ")
    return _xlogx_over(qa.ravel(), pa.ravel())


def conditional_entropy(q: JointPmf | np.ndarray) -> float:
    """H(X|Y) for a joint matrix indexed [x, y]."""
    m = _probs(q)
    return _entropy_vec(m.ravel()) - _entropy_vec(m.sum(axis=0))


def mutual_information(q: JointPmf | np.ndarray) -> float:
    m = _probs(q)
    val = _entropy_vec(m.sum(axis=1)) + _entropy_vec(m.sum(axis=0)) - _entropy_vec(m.ravel())
    return max(val, 0.0)


def weighted_divergence(q_cond: ConditionalPmf, p_cond: ConditionalPmf, q_marg: Pmf) -> float:
    """D(Q_{B|A} || P_{B|A} | Q_A) = sum_a Q_A(a) D(Q_{B|A=a} || P_{B|A=a})."""
    if (q_cond.rows.shape != p_cond.rows.shape
            or q_cond.rows.shape[0] != q_marg.alphabet.size):
        raise AlphabetMismatch("weighted divergence over inconsistent alphabets")
    total = 0.0
    for a, w in enumerate(q_marg.probs):
        if w <= ZERO_TOL:
            continue
        d = _xlogx_over(q_cond.rows[a], p_cond.rows[a])
        if math.isinf(d):
            return math.inf
        total += w * d
    return total


# ---------------------------------------------------------------------------
# simplex grids


def composition_count(m: int, k: int) -> int:
    return math.comb(m + k - 1, k - 1)


@lru_cache(maxsize=256)
def _compositions(m: int, k: int) -> np.ndarray:
    if k == 1:
        return np.array([[m]], dtype=np.int64)
    if k == 2:
        a = np.arange(m + 1, dtype=np.int64)
        return np.column_stack([a, m - a])
    blocks = []
    for a in range(m + 1):
        rest = _compositions(m - a, k - 1)
        blocks.append(np.column_stack([np.full(rest.shape[0], a, dtype=np.int64), rest]))
    return np.concatenate(blocks)


def compositions(m: int, k: int) -> np.ndarray:
    """All k-part compositions of m, lexicographic in the leading parts."""
    return _compositions(m, k).copy()


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """All pmfs on an alphabet whose entries are multiples of 1/resolution."""

    alphabet: Alphabet
    resolution: int
    counts: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.counts / self.resolution

    def __len__(self):
        return self.counts.shape[0]


def simplex_grid(alphabet: Alphabet | int, resolution: int, cap: int = GRID_POINT_CAP) -> SimplexGrid:
    if isinstance(alphabet, int):
        alphabet = Alphabet(alphabet)
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    n_points = composition_count(resolution, alphabet.size)
    if n_points > cap:
        raise OverflowError(f"simplex grid would have {n_points} points (cap {cap})")
    counts = compositions(resolution, alphabet.size)
    counts.setflags(write=False)
    return SimplexGrid(alphabet, resolution, counts)


def grid_resolution_for(k: int, cap: int) -> int:
    """Largest resolution whose k-part composition count stays under ``cap``."""
    lo, hi = 1, 2
    while composition_count(hi, k) <= cap:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if composition_count(mid, k) <= cap:
            lo = mid
        else:
            hi = mid
    return lo
