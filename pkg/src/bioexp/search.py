"""One-dimensional unimodal searches used by the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class Maximum:
    x: float
    value: float
    evaluations: int
    converged: bool = True


def golden_max(f: Callable[[float], float], lo: float, hi: float,
               xtol: float = 1e-10, max_iter: int = 500) -> Maximum:
    """Golden-section search for the maximum of a unimodal ``f`` on [lo, hi].

    Both endpoints are also evaluated, so a maximum sitting on the boundary
    is returned exactly.
    """
    a, b = float(lo), float(hi)
    f_lo, f_hi = f(a), f(b)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 4
    it = 0
    while b - a > xtol and it < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        evals += 1
        it += 1
    best = max((fc, c), (fd, d), (f_lo, float(lo)), (f_hi, float(hi)), key=lambda t: t[0])
    return Maximum(best[1], best[0], evals, it < max_iter)


def bracket_max(f: Callable[[float], float], start: float = 1.0, growth: float = 2.0,
                patience: int = 3, max_x: float = 1e12) -> tuple[float, float, bool]:
    """Bracket the maximizer of a unimodal ``f`` on [0, inf) by doubling.

    Evaluates f at 0, start, start*growth, ... and stops once the value has
    decreased for ``patience`` consecutive steps.  Returns ``(lo, hi, ok)``
    with the best point strictly inside (lo, hi); ``ok`` is False when
    ``max_x`` was reached while the function was still increasing.
    """
    xs = [0.0]
    vals = [f(0.0)]
    x = start
    drops = 0
    while True:
        v = f(x)
        drops = drops + 1 if v < vals[-1] else 0
        xs.append(x)
        vals.append(v)
        if drops >= patience:
            break
        if x >= max_x:
            i = max(range(len(vals)), key=vals.__getitem__)
            return xs[max(i - 1, 0)], xs[-1], i < len(xs) - 1
        x *= growth
    i = max(range(len(vals)), key=vals.__getitem__)
    return xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)], True
