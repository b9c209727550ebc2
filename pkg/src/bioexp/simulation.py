"""Exact small-n simulation of random-binning enrollment and authentication.

Every sequence x in X^n is enumerated, so for a drawn code the FR and FA
probabilities are exact sums; randomness enters only through the code
ensemble.  Sequences are indexed lexicographically with the first symbol
most significant, and all bin and key indices are 0-based.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .probability import ConditionalPmf, Pmf, SourceModel
from .rates import FixedRates, RateFunctionTable

log = logging.getLogger(__name__)

EXACT_CAP = 2 ** 24
BIN_COUNT_CAP = 2 ** 62
BOOTSTRAP_RESAMPLES = 1000
AUDIT_MAX_N = 8
WEIGHT_CACHE_CELLS = 1 << 24


class SizeCapExceeded(ValueError):
    """The requested block length is too large for exact enumeration."""


def _thread_count() -> int:
    raw = os.environ.get("BIOEXP_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring BIOEXP_THREADS=%r", raw)
    return 1


# ---------------------------------------------------------------------------
# sequence spaces


def _digits(k: int, n: int) -> np.ndarray:
    """All sequences of length n over {0..k-1}, one per row, lexicographic."""
    idx = np.arange(k ** n, dtype=np.int64)
    powers = k ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers[None, :]) % k).astype(np.int64)


def sequence_index(symbols: Sequence[int], k: int) -> int:
    out = 0
    for s in symbols:
        if not 0 <= int(s) < k:
            raise ValueError(f"symbol {s} outside alphabet of size {k}")
        out = out * k + int(s)
    return out


class ExactSpace:
    """Enumerated X^n and Y^n for one source, with cached per-pair tables."""

    def __init__(self, model: SourceModel, n: int):
        if n < 1:
            raise ValueError("block length must be at least 1")
        if model.nx ** n > EXACT_CAP or model.ny ** n > EXACT_CAP:
            raise SizeCapExceeded(
                f"|X|^n = {model.nx ** n}, |Y|^n = {model.ny ** n}; exact mode allows at most {EXACT_CAP}")
        self.model = model
        self.n = n
        self.xd = _digits(model.nx, n)
        self.yd = _digits(model.ny, n)
        counts = np.stack([(self.xd == a).sum(axis=1) for a in range(model.nx)], axis=1)
        self.type_counts, self.type_of = np.unique(counts, axis=0, return_inverse=True)
        self.type_of = self.type_of.ravel()
        self.type_sizes = np.exp(gammaln(n + 1) - gammaln(self.type_counts + 1).sum(axis=1))
        self.type_sizes = np.rint(self.type_sizes).astype(np.int64)
        self._weights: dict[int, tuple] = {}

    @property
    def num_x(self) -> int:
        return self.xd.shape[0]

    @property
    def num_y(self) -> int:
        return self.yd.shape[0]

    def additive(self, table: np.ndarray, ys: slice | np.ndarray | None = None) -> np.ndarray:
        """sum_i table[x_i, y_i] for every x and the selected y's."""
        yd = self.yd if ys is None else self.yd[ys]
        out = np.zeros((self.num_x, yd.shape[0]))
        for i in range(self.n):
            out += table[self.xd[:, i][:, None], yd[:, i][None, :]]
        return out

    @cached_property
    def log_pxy(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.additive(np.log(self.model.pxy))

    @cached_property
    def pxy(self) -> np.ndarray:
        return np.exp(self.log_pxy)

    @cached_property
    def px(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            lp = np.log(self.model.px)
        return np.exp(lp[self.xd].sum(axis=1))

    def weights(self, metric: "DecodingMetric", ys) -> np.ndarray:
        """Metric log-weights, cached in full when the table is small."""
        if self.num_x * self.num_y > WEIGHT_CACHE_CELLS:
            return metric.log_weights(self, ys)
        hit = self._weights.get(id(metric))
        if hit is None or hit[0] is not metric:
            hit = (metric, metric.log_weights(self, slice(None)))
            self._weights[id(metric)] = hit
        return hit[1][:, ys]

    def cond_entropy_n(self, ys) -> np.ndarray:
        """n * H(X|Y) of the joint type of each (x, y) pair."""
        yd = self.yd[ys]
        out = np.zeros((self.num_x, yd.shape[0]))
        for b in range(self.model.ny):
            yb = (yd == b).astype(float)
            ny_b = yb.sum(axis=1)
            for a in range(self.model.nx):
                nab = (self.xd == a).astype(float) @ yb.T
                with np.errstate(divide="ignore", invalid="ignore"):
                    term = np.where(nab > 0, nab * np.log(nab / ny_b[None, :]), 0.0)
                out -= term
        return out


# ---------------------------------------------------------------------------
# codes


@dataclass(frozen=True, eq=False)
class CodeRealization:
    """One random binning code, stored per enumerated source sequence.

    ``f`` holds global helper indices: the helper bins of type ``t`` occupy
    ``helper_offsets[t] : helper_offsets[t] + helper_counts[t]``.  ``g``
    holds the key index within the key set of the sequence's type.  In the
    fixed regime there is a single group covering all types.
    """

    n: int
    regime: str
    f: np.ndarray
    g: np.ndarray
    group_of: np.ndarray
    helper_counts: np.ndarray
    secret_counts: np.ndarray
    seed: int

    @property
    def helper_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.helper_counts)[:-1]]).astype(np.int64)

    @property
    def num_helpers(self) -> int:
        return int(self.helper_counts.sum())

    def group_of_helper(self, w: int) -> int:
        if not 0 <= w < self.num_helpers:
            raise ValueError(f"helper index {w} out of range")
        return int(np.searchsorted(self.helper_offsets, w, side="right") - 1)

    def secrets_for_helper(self, w: int) -> int:
        return int(self.secret_counts[self.group_of_helper(w)])

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for a in (self.f, self.g, self.helper_counts, self.secret_counts):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        return h.hexdigest()


def bin_count(n: int, rate: float) -> int:
    """max(1, round(exp(n R))), capped to fit a 64-bit index."""
    if math.isnan(rate):
        raise ValueError("rate is NaN")
    x = n * rate
    if x > math.log(BIN_COUNT_CAP):
        return BIN_COUNT_CAP
    return max(1, int(round(math.exp(x))))


def _variable_counts(space: ExactSpace, table: RateFunctionTable) -> tuple[np.ndarray, np.ndarray]:
    if table.grid.resolution != space.n:
        raise ValueError(f"rate table grid resolution {table.grid.resolution} must equal n={space.n}")
    helpers, secrets = [], []
    for counts, size in zip(space.type_counts, space.type_sizes):
        r_s, r_w = table.lookup(counts)
        helpers.append(int(size) if math.isinf(r_w) else bin_count(space.n, r_w))
        secrets.append(bin_count(space.n, r_s))
    return np.array(helpers, dtype=np.int64), np.array(secrets, dtype=np.int64)


def draw_code(model: SourceModel, n: int, rates: FixedRates | RateFunctionTable, seed: int,
              space: ExactSpace | None = None) -> CodeRealization:
    """Draw helper and key bins uniformly and independently for every x."""
    space = space or ExactSpace(model, n)
    if space.model is not model or space.n != n:
        raise ValueError("space does not match model and n")
    rng = np.random.default_rng(seed)
    if isinstance(rates, FixedRates):
        regime = "fixed"
        group_of = np.zeros(space.num_x, dtype=np.int64)
        helper_counts = np.array([bin_count(n, rates.r_w)], dtype=np.int64)
        secret_counts = np.array([bin_count(n, rates.r_s)], dtype=np.int64)
    elif isinstance(rates, RateFunctionTable):
        regime = "variable"
        group_of = space.type_of.astype(np.int64)
        helper_counts, secret_counts = _variable_counts(space, rates)
    else:
        raise TypeError("rates must be FixedRates or RateFunctionTable")
    offsets = np.concatenate([[0], np.cumsum(helper_counts)[:-1]]).astype(np.int64)
    local_f = rng.integers(0, helper_counts[group_of])
    g = rng.integers(0, secret_counts[group_of])
    f = offsets[group_of] + local_f
    for a in (f, g, group_of, helper_counts, secret_counts):
        a.setflags(write=False)
    return CodeRealization(n, regime, f, g, group_of, helper_counts, secret_counts, int(seed))


# ---------------------------------------------------------------------------
# decoding metrics


@dataclass(frozen=True, eq=False)
class DecodingMetric:
    """The metric a(.) of a stochastic likelihood decoder, or plain MAP.

    ``n a(P_xy)`` is ``beta * sum_i ln M(x_i|y_i)`` for ``likelihood``
    (M = P_X|Y) and ``mismatched`` (M = P'), ``-beta n H(X|Y)`` of the
    joint type for ``min_entropy``, and ``n R_w(Q_X) - n H(X|Y)`` for
    ``variable_optimal``.
    """

    kind: str
    beta: float = 1.0
    p_prime: ConditionalPmf | None = None
    rate_table: RateFunctionTable | None = None

    KINDS = ("map", "likelihood", "mismatched", "min_entropy", "variable_optimal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if (self.kind == "mismatched") != (self.p_prime is not None):
            raise ValueError("p_prime is required by, and only by, the mismatched metric")
        if (self.kind == "variable_optimal") != (self.rate_table is not None):
            raise ValueError("rate_table is required by, and only by, the variable_optimal metric")

    @classmethod
    def map(cls) -> "DecodingMetric":
        return cls("map")

    @classmethod
    def likelihood(cls, beta: float = 1.0) -> "DecodingMetric":
        return cls("likelihood", beta)

    @classmethod
    def mismatched(cls, p_prime: ConditionalPmf, beta: float = 1.0) -> "DecodingMetric":
        return cls("mismatched", beta, p_prime=p_prime)

    @classmethod
    def min_entropy(cls, beta: float = 1.0) -> "DecodingMetric":
        return cls("min_entropy", beta)

    @classmethod
    def variable_optimal(cls, table: RateFunctionTable) -> "DecodingMetric":
        return cls("variable_optimal", rate_table=table)

    @property
    def deterministic(self) -> bool:
        return self.kind == "map"

    def describe(self) -> str:
        if self.kind in ("map", "variable_optimal"):
            return self.kind
        return f"{self.kind}:{self.beta:g}"

    def log_weights(self, space: ExactSpace, ys) -> np.ndarray:
        """n a(P_xy) for every x and the selected y's (shape num_x by len(ys))."""
        model = space.model
        if self.kind == "map":
            raise ValueError("MAP decoding has no finite metric")
        if self.kind in ("likelihood", "mismatched"):
            rows = model.p_x_given_y.rows if self.kind == "likelihood" else self.p_prime.rows
            if rows.shape != (model.ny, model.nx):
                raise ValueError("P' must have one row P'(.|y) per output symbol")
            with np.errstate(divide="ignore"):
                table = np.log(rows.T)
            return self.beta * space.additive(table, ys)
        h = space.cond_entropy_n(ys)
        if self.kind == "min_entropy":
            return -self.beta * h
        rates = _metric_rates(space, self.rate_table)
        return (space.n * rates[space.type_of])[:, None] - h


def _metric_rates(space: ExactSpace, table: RateFunctionTable) -> np.ndarray:
    """Per-type R_w with types outside the ball at their one-to-one rate."""
    out = np.empty(space.type_counts.shape[0])
    for t, (counts, size) in enumerate(zip(space.type_counts, space.type_sizes)):
        _, r_w = table.lookup(counts)
        out[t] = math.log(size) / space.n if math.isinf(r_w) else r_w
    return out


# ---------------------------------------------------------------------------
# exact probabilities


@dataclass(frozen=True)
class Posterior:
    pmf: Pmf
    empty_bin: bool


class _Pairs:
    """Helper/key pairs occurring in a code, grouped by helper (w-major)."""

    def __init__(self, code: CodeRealization):
        keys = np.stack([code.f, code.g], axis=1)
        uniq, pair_of = np.unique(keys, axis=0, return_inverse=True)
        self.pair_of = pair_of.ravel()
        self.w_of_pair = uniq[:, 0]
        self.s_of_pair = uniq[:, 1]
        self.helpers, self.w_start, self.w_index = np.unique(
            self.w_of_pair, return_index=True, return_inverse=True)
        self.w_index = self.w_index.ravel()
        self.num_pairs = uniq.shape[0]
        self.onehot = sparse.csr_matrix(
            (np.ones(code.f.size), (self.pair_of, np.arange(code.f.size))),
            shape=(self.num_pairs, code.f.size))


def _chunks(total: int, rows: int, budget: int = 1 << 23):
    step = max(1, budget // max(rows, 1))
    for start in range(0, total, step):
        yield slice(start, min(total, start + step))


def fr_probability_exact(model: SourceModel, code: CodeRealization, metric: DecodingMetric,
                         space: ExactSpace | None = None) -> float:
    """Pr{S_hat != S} for a fixed code, summed over every (x, y)."""
    space = space or ExactSpace(model, code.n)
    pairs = _Pairs(code)
    correct = 0.0
    if metric.deterministic:
        for ys in _chunks(space.num_y, pairs.num_pairs):
            mass = pairs.onehot @ space.pxy[:, ys]
            correct += float(np.maximum.reduceat(mass, pairs.w_start, axis=0).sum())
        return float(min(1.0, max(0.0, 1.0 - correct)))

    order = np.argsort(pairs.pair_of, kind="stable")
    pair_sorted = pairs.pair_of[order]
    x_start = np.flatnonzero(np.r_[True, np.diff(pair_sorted) > 0])
    w_of_x = pairs.w_index[pair_sorted]
    w_start_x = np.flatnonzero(np.r_[True, np.diff(w_of_x) > 0])
    secrets = code.secret_counts[code.group_of[order][w_start_x]]
    for ys in _chunks(space.num_y, space.num_x):
        lw = space.weights(metric, ys)[order]
        top = np.maximum.reduceat(lw, w_start_x, axis=0)
        empty = ~np.isfinite(top)
        shift = np.where(empty, 0.0, top)
        with np.errstate(invalid="ignore"):
            e = np.exp(lw - shift[w_of_x])
        num = np.add.reduceat(e, x_start, axis=0)
        den = np.add.reduceat(e, w_start_x, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            post = num / den[pairs.w_index]
        fallback = np.broadcast_to((1.0 / secrets)[:, None], den.shape)[pairs.w_index]
        post = np.where(empty[pairs.w_index], fallback, post)
        if empty.any():
            log.debug("%d empty-mass helper bins in FR computation", int(empty.sum()))
        correct += float(np.sum(space.pxy[:, ys][order] * post[pair_sorted]))
    return float(min(1.0, max(0.0, 1.0 - correct)))


def fa_probability_exact(model: SourceModel, code: CodeRealization,
                         space: ExactSpace | None = None) -> float:
    """Pr{V(W) = S}: the imposter guesses the most likely key given w."""
    space = space or ExactSpace(model, code.n)
    pairs = _Pairs(code)
    mass = np.bincount(pairs.pair_of, weights=space.px, minlength=pairs.num_pairs)
    return float(min(1.0, np.maximum.reduceat(mass, pairs.w_start).sum()))


def imposter_guess(model: SourceModel, code: CodeRealization, w: int,
                   space: ExactSpace | None = None) -> int:
    """V(w) = argmax_s P(s|w); ties go to the lowest key index."""
    space = space or ExactSpace(model, code.n)
    sel = code.f == w
    size = code.secrets_for_helper(w)
    mass = np.bincount(code.g[sel], weights=space.px[sel], minlength=size)
    return int(np.argmax(mass))


def gld_posterior(model: SourceModel, code: CodeRealization, metric: DecodingMetric,
                  y: Sequence[int], w: int, space: ExactSpace | None = None) -> Posterior:
    """Decoder posterior over the keys of helper bin ``w`` given ``y``.

    A bin with no sequence, or none of positive weight, yields the uniform
    posterior and ``empty_bin=True``.  MAP returns a point mass at the
    most likely key (lowest index on ties).
    """
    space = space or ExactSpace(model, code.n)
    if len(y) != code.n:
        raise ValueError(f"y must have length {code.n}")
    yi = sequence_index(y, model.ny)
    size = code.secrets_for_helper(w)
    sel = np.flatnonzero(code.f == w)
    if metric.deterministic:
        lw = space.log_pxy[sel, yi]
    else:
        lw = space.weights(metric, np.array([yi]))[sel, 0]
    if sel.size == 0 or not np.isfinite(lw).any():
        if sel.size == 0:
            log.info("helper bin %d is empty", w)
        return Posterior(Pmf.uniform(size), True)
    if metric.deterministic:
        mass = np.bincount(code.g[sel], weights=np.exp(lw - lw.max()), minlength=size)
        probs = np.zeros(size)
        probs[int(np.argmax(mass))] = 1.0
        return Posterior(Pmf.from_probs(probs), False)
    top = lw.max()
    num = np.bincount(code.g[sel], weights=np.exp(lw - top), minlength=size)
    return Posterior(Pmf.from_probs(num / num.sum()), False)


def decode(model: SourceModel, code: CodeRealization, metric: DecodingMetric,
           y: Sequence[int], w: int, space: ExactSpace | None = None) -> int:
    """Most likely decoder output (the MAP output for the MAP metric)."""
    post = gld_posterior(model, code, metric, y, w, space)
    return int(np.argmax(post.pmf.probs))


@dataclass(frozen=True)
class AuditResult:
    helpers_checked: int
    failures: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def imposter_audit(model: SourceModel, code: CodeRealization, metric: DecodingMetric,
                   space: ExactSpace | None = None) -> AuditResult:
    """Check that some forged y makes the decoder favour the imposter's guess.

    For every occupied helper bin w, searches all y for one whose most
    likely decoder output equals V(w).  Only for n <= 8.
    """
    if code.n > AUDIT_MAX_N:
        raise SizeCapExceeded(f"audit limited to n <= {AUDIT_MAX_N}")
    space = space or ExactSpace(model, code.n)
    failures = []
    helpers = np.unique(code.f)
    for w in helpers.tolist():
        guess = imposter_guess(model, code, w, space)
        sel = np.flatnonzero(code.f == w)
        if metric.deterministic:
            lw = space.log_pxy[sel]
        else:
            lw = space.weights(metric, slice(None))[sel]
        size = code.secrets_for_helper(w)
        with np.errstate(invalid="ignore"):
            top = lw.max(axis=0)
            e = np.exp(lw - np.where(np.isfinite(top), top, 0.0))
        onehot = np.zeros((size, sel.size))
        onehot[code.g[sel], np.arange(sel.size)] = 1.0
        mass = onehot @ e
        live = mass.sum(axis=0) > 0
        if not np.any(live & (np.argmax(mass, axis=0) == guess)):
            failures.append(int(w))
    return AuditResult(int(helpers.size), tuple(failures))


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class SimReport:
    """Ensemble-average FR/FA probabilities of exactly evaluated codes.

    Each code's probabilities are exact.  The 95% half-widths come from a
    bootstrap over codes and vanish for a single code.
    """

    n: int
    trials: int
    p_fr_hat: float
    p_fr_halfwidth: float
    p_fa_hat: float
    p_fa_halfwidth: float
    exact: bool
    fr_exponent: float
    fa_exponent: float
    regime: str
    metric: str
    seed: int
    p_fr_interval: tuple[float, float] = (0.0, 0.0)
    p_fa_interval: tuple[float, float] = (0.0, 0.0)
    per_code_fr: tuple[float, ...] = field(default=(), repr=False)
    per_code_fa: tuple[float, ...] = field(default=(), repr=False)

    def to_json(self) -> dict:
        out = asdict(self)
        for key in ("fr_exponent", "fa_exponent"):
            if math.isinf(out[key]):
                out[key] = "inf"
        out["p_fr_interval"] = list(self.p_fr_interval)
        out["p_fa_interval"] = list(self.p_fa_interval)
        out["per_code_fr"] = list(self.per_code_fr)
        out["per_code_fa"] = list(self.per_code_fa)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _exponent(p: float, n: int) -> float:
    return math.inf if p <= 0.0 else -math.log(p) / n


def _bootstrap(values: np.ndarray, rng: np.random.Generator,
               resamples: int) -> tuple[float, tuple[float, float]]:
    if values.size < 2:
        v = float(values.mean())
        return 0.0, (v, v)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [0.025, 0.975])
    return float((hi - lo) / 2.0), (float(lo), float(hi))


def ensemble_estimate(model: SourceModel, n: int, rates: FixedRates | RateFunctionTable,
                      metric: DecodingMetric, num_codes: int, seed: int,
                      workers: int | None = None,
                      resamples: int = BOOTSTRAP_RESAMPLES) -> SimReport:
    """Average exact FR/FA probabilities over ``num_codes`` independent codes.

    Code ``i`` is drawn from the i-th child of ``SeedSequence(seed)``, so
    the report does not depend on the worker count.
    """
    if num_codes < 1:
        raise ValueError("num_codes must be at least 1")
    space = ExactSpace(model, n)
    root = np.random.SeedSequence(seed)
    children = root.spawn(num_codes + 1)
    code_seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children[:-1]]
    _ = space.pxy, space.px
    if not metric.deterministic:
        space.weights(metric, slice(0, 1))

    def one(code_seed: int) -> tuple[float, float]:
        code = draw_code(model, n, rates, code_seed, space)
        return (fr_probability_exact(model, code, metric, space),
                fa_probability_exact(model, code, space))

    workers = workers or _thread_count()
    if workers > 1 and num_codes > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, code_seeds))
    else:
        results = [one(s) for s in code_seeds]
    fr = np.array([r[0] for r in results])
    fa = np.array([r[1] for r in results])
    boot = np.random.default_rng(children[-1])
    fr_hw, fr_ci = _bootstrap(fr, boot, resamples)
    fa_hw, fa_ci = _bootstrap(fa, boot, resamples)
    p_fr, p_fa = float(fr.mean()), float(fa.mean())
    return SimReport(
        n=n, trials=num_codes, p_fr_hat=p_fr, p_fr_halfwidth=fr_hw,
        p_fa_hat=p_fa, p_fa_halfwidth=fa_hw, exact=True,
        fr_exponent=_exponent(p_fr, n), fa_exponent=_exponent(p_fa, n),
        regime="fixed" if isinstance(rates, FixedRates) else "variable",
        metric=metric.describe(), seed=int(seed),
        p_fr_interval=fr_ci, p_fa_interval=fa_ci,
        per_code_fr=tuple(fr.tolist()), per_code_fa=tuple(fa.tolist()),
    )
