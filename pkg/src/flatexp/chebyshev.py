"""Chebyshev polynomials of the first kind and checks of their classical properties."""
from __future__ import annotations

import threading
from numbers import Rational
from typing import Iterable

import mpmath
from flint import ctx, fmpz_poly

from .poly_core import RationalPoly, arb_bounds, compose, to_arb


class ChebCache:
    """Table of Phi_0..Phi_n built by Phi_{t+1} = 2x Phi_t - Phi_{t-1}.

    Rows are integer polynomials; the table only grows, so readers never see a
    partially built entry.
    """

    def __init__(self):
        self._int = [fmpz_poly([1]), fmpz_poly([0, 1])]
        self._rat: dict[int, RationalPoly] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._int)

    def _extend(self, t: int):
        with self._lock:
            two_x = fmpz_poly([0, 2])
            while len(self._int) <= t:
                self._int.append(two_x * self._int[-1] - self._int[-2])

    def integer_poly(self, t: int) -> fmpz_poly:
        t = abs(t)
        if t >= len(self._int):
            self._extend(t)
        return self._int[t]

    def __getitem__(self, t: int) -> RationalPoly:
        t = abs(t)
        p = self._rat.get(t)
        if p is None:
            p = RationalPoly([int(c) for c in self.integer_poly(t).coeffs()])
            self._rat[t] = p
        return p


_CACHE = ChebCache()


def cheb(t: int) -> RationalPoly:
    """Phi_t; negative indices map to |t|."""
    return _CACHE[t]


def cheb_int(t: int) -> fmpz_poly:
    return _CACHE.integer_poly(t)


def _silver_power(t: int) -> tuple[int, int]:
    """(a, b) with (1 + sqrt 2)^t = a + b sqrt 2."""
    a, b = 1, 0
    for _ in range(t):
        a, b = a + 2 * b, a + b
    return a, b


def check_coeff_bound(t: int) -> bool:
    """Every coefficient of Phi_t is at most (1 + sqrt 2)^t in absolute value.

    The comparison c <= a + b sqrt 2 is decided exactly in integers, so a
    coefficient on the boundary counts as satisfying the bound.
    """
    a, b = _silver_power(t)
    for c in cheb_int(t).coeffs():
        d = abs(int(c)) - a
        if d > 0 and d * d > 2 * b * b:
            return False
    return True


def check_parity(t: int) -> bool:
    t = abs(t)
    bad = 1 - t % 2
    return all(int(c) == 0 for j, c in enumerate(cheb_int(t).coeffs()) if j % 2 == bad)


def check_markov(t: int, grid: Iterable[float], prec: int = 128) -> bool:
    """|Phi_t'(x)| <= t^2 at every grid point in [-1, 1], decided with ball arithmetic."""
    d = cheb(t).derivative()
    bound = t * t
    for x in grid:
        if not -1 <= x <= 1:
            raise ValueError(f"grid point {x} outside [-1, 1]")
        v = abs(d.enclose(x, prec))
        if not v.upper() <= bound:
            return False
    return True


def trig_deviation(t: int, x, prec: int = 256) -> mpmath.mpf:
    """Width-aware distance between the enclosure of Phi_t(x) and cos(t arccos x).

    Returns the largest distance from the oracle value to either end of the
    enclosure, so a small result means the enclosure is tight and centred on it.
    """
    enc = cheb(t).enclose(x, prec)
    with mpmath.workprec(prec):
        xm = mpmath.mpf(x.numerator) / x.denominator if isinstance(x, Rational) else mpmath.mpf(x)
        ref = mpmath.cos(t * mpmath.acos(xm))
        lo, hi = arb_bounds(enc)
        lo = mpmath.mpf(lo.numerator) / lo.denominator
        hi = mpmath.mpf(hi.numerator) / hi.denominator
        return max(abs(ref - lo), abs(ref - hi))


def hyperbolic_holds(t: int, y, prec: int = 256) -> bool:
    """Phi_t((y + 1/y)/2) equals (y^t + y^-t)/2, both sides as balls that must overlap."""
    with ctx.workprec(prec):
        ya = to_arb(y, prec)
        x = (ya + 1 / ya) / 2
        lhs = cheb(t).arb_poly(prec)(x)
        rhs = (ya ** t + ya ** (-t)) / 2
        return bool(lhs.overlaps(rhs))


def magnitude_split_holds(t: int, grid: Iterable[float], prec: int = 128) -> bool:
    """|Phi_t| <= 1 inside [-1, 1] and >= 1 outside, at every grid point."""
    for x in grid:
        v = abs(cheb(t).enclose(x, prec))
        if abs(x) <= 1:
            if not v.upper() <= 1:
                return False
        elif not v.lower() >= 1:
            return False
    return True


def nesting_holds(m: int, n: int) -> bool:
    return compose(cheb(m), cheb(n)) == cheb(m * n)
