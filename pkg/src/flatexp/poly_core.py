"""Exact rational and multiprecision polynomial arithmetic.

Two families of values live here:

* ``RationalPoly``: dense univariate polynomial with exact rational
  coefficients, backed by FLINT's ``fmpq_poly``.
* ``BigPoly``: univariate (dense) or bivariate (sparse) polynomial with
  binary floating coefficients (``mpmath.mpf``) and a precision contract.

``RationalMPoly`` is a small sparse multivariate rational type used for the
bivariate/trivariate identities of the SoS module.

Every value is immutable.  Rigorous evaluation goes through FLINT ``arb``
balls; the ``Enclosure`` returned to callers holds exact rational endpoints.
"""
from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping

import mpmath
from flint import arb, arb_poly, ctx, fmpq, fmpq_poly, fmpz

GUARD_BITS = 64
MIN_PRECISION = 64
MAX_SHIFT_PRECISION = 1 << 20

# degree reported for the zero polynomial
ZERO_DEGREE = -1

_flint_lock = threading.RLock()


class PrecisionError(ArithmeticError):
    """Raised when a requested precision cannot deliver the promised accuracy."""


# ---------------------------------------------------------------------------
# scalar conversions


def to_fmpq(x) -> fmpq:
    """Exact conversion of int, Fraction, fmpq, float, mpf or "a/b" strings."""
    if isinstance(x, fmpq):
        return x
    if isinstance(x, (int, fmpz)):
        return fmpq(x)
    if isinstance(x, Rational):
        return fmpq(int(x.numerator), int(x.denominator))
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        n, d = x.as_integer_ratio()
        return fmpq(n, d)
    if isinstance(x, mpmath.mpf):
        return to_fmpq(mpf_to_fraction(x))
    if isinstance(x, str):
        return to_fmpq(Fraction(x))
    raise TypeError(f"cannot convert {type(x).__name__} to a rational")


def to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    q = to_fmpq(x)
    return Fraction(int(q.p), int(q.q))


def mpf_parts(x: mpmath.mpf) -> tuple[int, int]:
    """Signed (mantissa, exponent) of a finite binary float."""
    if not mpmath.isfinite(x):
        raise ValueError("non-finite mpf")
    sign, man, exp, _ = x._mpf_
    man = int(man)
    return (-man if sign else man), int(exp)


def mpf_to_fraction(x: mpmath.mpf) -> Fraction:
    man, exp = mpf_parts(x)
    if exp >= 0:
        return Fraction(man << exp)
    return Fraction(man, 1 << -exp)


def mpf_to_arb(x: mpmath.mpf) -> arb:
    """Exact ball (radius zero) holding the binary value of ``x``."""
    man, exp = mpf_parts(x)
    with ctx.workprec(max(ctx.prec, abs(int(man)).bit_length() + 8)):
        return arb(fmpz(int(man))) * arb(2) ** int(exp) if exp else arb(fmpz(int(man)))


def to_arb(x, prec: int) -> arb:
    """Ball enclosing ``x`` at working precision ``prec``."""
    with ctx.workprec(prec):
        if isinstance(x, arb):
            return +x
        if isinstance(x, mpmath.mpf):
            return mpf_to_arb(x)
        if isinstance(x, float):
            return arb(x)
        return arb(to_fmpq(x))


def arb_to_fraction(x: arb) -> Fraction:
    """Exact value of a radius-zero ball."""
    man, exp = x.man_exp()
    man, exp = int(man), int(exp)
    return Fraction(man << exp) if exp >= 0 else Fraction(man, 1 << -exp)


def arb_bounds(x: arb) -> tuple[Fraction, Fraction]:
    """Exact endpoints mid - rad, mid + rad of a finite ball."""
    if not x.is_finite():
        raise PrecisionError("ball is not finite")
    m, r = arb_to_fraction(x.mid()), arb_to_fraction(x.rad())
    return m - r, m + r


def mpf_hex(x: mpmath.mpf) -> str:
    """Lossless hexadecimal form ``[-]0x<mantissa>p<exp>`` of a binary float."""
    man, exp = mpf_parts(x)
    sign = "-" if man < 0 else ""
    return f"{sign}0x{abs(man):x}p{int(exp):+d}"


_HEX_RE = re.compile(r"^([+-]?)0x([0-9a-fA-F]+)(?:\.([0-9a-fA-F]*))?p([+-]?\d+)$")


def parse_hex(text: str) -> mpmath.mpf:
    m = _HEX_RE.match(text.strip())
    if not m:
        raise ValueError(f"malformed hexadecimal float {text!r}")
    sign, whole, frac, exp = m.groups()
    frac = frac or ""
    man = int(whole + frac, 16)
    e = int(exp) - 4 * len(frac)
    if sign == "-":
        man = -man
    if not man:
        return mpmath.mpf(0)
    with mpmath.workprec(max(53, man.bit_length() + 2)):
        return +mpmath.mpf((man, e))


@dataclass(frozen=True)
class Enclosure:
    """Closed interval [lo, hi] with exact rational endpoints."""

    lo: Fraction
    hi: Fraction

    @classmethod
    def from_arb(cls, x: arb) -> "Enclosure":
        return cls(*arb_bounds(x))

    def contains(self, v) -> bool:
        v = to_fraction(v)
        return self.lo <= v <= self.hi

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo


@dataclass(frozen=True)
class EvalContext:
    precision_bits: int = 256
    rounding: str = "nearest"

    def __post_init__(self):
        if self.precision_bits < 1:
            raise ValueError("precision_bits must be positive")
        if self.rounding not in ("nearest", "outward-interval"):
            raise ValueError(f"unknown rounding mode {self.rounding!r}")


def working_precision(coeff_bits: int, degree: int, x_max: float) -> int:
    """Default precision: coefficient bits plus Horner growth plus guard bits."""
    growth = max(degree, 0) * math.ceil(math.log2(1 + abs(x_max)))
    return max(256, coeff_bits + growth + GUARD_BITS)


# ---------------------------------------------------------------------------
# univariate exact polynomials


class RationalPoly:
    """Dense univariate polynomial over Q; index = degree."""

    __slots__ = ("_p", "_arb_cache")

    def __init__(self, coeffs: Iterable = ()):
        if isinstance(coeffs, fmpq_poly):
            p = coeffs
        else:
            p = fmpq_poly([to_fmpq(c) for c in coeffs])
        object.__setattr__(self, "_p", p)
        object.__setattr__(self, "_arb_cache", {})

    def __setattr__(self, name, value):
        raise AttributeError("RationalPoly is immutable")

    @classmethod
    def monomial(cls, j: int, c=1) -> "RationalPoly":
        return cls([0] * j + [c])

    @classmethod
    def x(cls) -> "RationalPoly":
        return cls([0, 1])

    @property
    def flint(self) -> fmpq_poly:
        return self._p

    @property
    def degree(self) -> int:
        return ZERO_DEGREE if self._p.is_zero() else self._p.degree()

    def is_zero(self) -> bool:
        return self._p.is_zero()

    @property
    def coeffs(self) -> list[Fraction]:
        return [to_fraction(c) for c in self._p.coeffs()]

    def __getitem__(self, j: int) -> Fraction:
        if j < 0 or j > self.degree:
            return Fraction(0)
        return to_fraction(self._p[j])

    def __len__(self):
        return self.degree + 1

    @property
    def leading(self) -> Fraction:
        return self[self.degree] if not self.is_zero() else Fraction(0)

    def max_coeff_bits(self) -> int:
        if self.is_zero():
            return 0
        bits = 0
        for c in self._p.coeffs():
            bits = max(bits, int(c.p).bit_length(), int(c.q).bit_length())
        return bits

    # arithmetic -----------------------------------------------------------

    @staticmethod
    def _coerce(other):
        if isinstance(other, RationalPoly):
            return other._p
        return fmpq_poly([to_fmpq(other)])

    def __add__(self, other):
        return RationalPoly(self._p + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RationalPoly(self._p - self._coerce(other))

    def __rsub__(self, other):
        return RationalPoly(self._coerce(other) - self._p)

    def __neg__(self):
        return RationalPoly(-self._p)

    def __mul__(self, other):
        if isinstance(other, RationalPoly):
            return RationalPoly(self._p * other._p)
        return RationalPoly(self._p * to_fmpq(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return RationalPoly(self._p / to_fmpq(scalar))

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative power")
        return RationalPoly(self._p ** n)

    def __eq__(self, other):
        if isinstance(other, RationalPoly):
            return self._p == other._p
        if isinstance(other, (int, Fraction, fmpq)):
            return self._p == fmpq_poly([to_fmpq(other)])
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self.coeffs))

    def __call__(self, x):
        if isinstance(x, RationalPoly):
            return compose(self, x)
        return to_fraction(self._p(to_fmpq(x)))

    def __repr__(self):
        if self.is_zero():
            return "RationalPoly(0)"
        terms = []
        for j, c in enumerate(self.coeffs):
            if c:
                terms.append(f"{c}" if j == 0 else f"{c}*x^{j}")
        return "RationalPoly(" + " + ".join(terms) + ")"

    # calculus -------------------------------------------------------------

    def derivative(self) -> "RationalPoly":
        return RationalPoly(self._p.derivative())

    def antiderivative(self) -> "RationalPoly":
        c = self._p.coeffs()
        return RationalPoly([0] + [c[j] / (j + 1) for j in range(len(c))])

    def truncate(self, k: int) -> "RationalPoly":
        if k < 0:
            raise ValueError("truncation order must be nonnegative")
        return RationalPoly(self._p.coeffs()[: k + 1])

    def scale_arg(self, factor) -> "RationalPoly":
        """p(factor*x), computed coefficient-wise."""
        f = to_fmpq(factor)
        out, pw = [], fmpq(1)
        for c in self._p.coeffs():
            out.append(c * pw)
            pw *= f
        return RationalPoly(out)

    # rigorous evaluation ---------------------------------------------------

    def arb_poly(self, prec: int) -> arb_poly:
        cached = self._arb_cache.get(prec)
        if cached is None:
            with _flint_lock, ctx.workprec(prec):
                cached = arb_poly([arb(c) for c in self._p.coeffs()])
            self._arb_cache[prec] = cached
        return cached

    def enclose(self, x, prec: int) -> arb:
        """Ball containing p(x) computed with ``prec``-bit ball arithmetic."""
        ap = self.arb_poly(prec)
        with _flint_lock, ctx.workprec(prec):
            return ap(to_arb(x, prec))

    # serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {"vars": 1, "coeffs": [[str(c.numerator), str(c.denominator)] for c in self.coeffs]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "RationalPoly":
        if obj.get("vars", 1) != 1:
            raise ValueError("expected a univariate polynomial")
        return cls([Fraction(int(n), int(d)) for n, d in obj["coeffs"]])


def add(a: RationalPoly, b: RationalPoly) -> RationalPoly:
    return a + b


def mul(a: RationalPoly, b: RationalPoly) -> RationalPoly:
    return a * b


def compose(outer: RationalPoly, inner: RationalPoly) -> RationalPoly:
    """outer(inner(x)) by Horner's rule on polynomials."""
    acc = fmpq_poly([])
    ip = inner.flint
    for c in reversed(outer.flint.coeffs()):
        acc = acc * ip + c
    return RationalPoly(acc)


def derivative(p: RationalPoly) -> RationalPoly:
    return p.derivative()


def antiderivative(p: RationalPoly) -> RationalPoly:
    return p.antiderivative()


def truncate(p: RationalPoly, k: int) -> RationalPoly:
    return p.truncate(k)


# ---------------------------------------------------------------------------
# multiprecision polynomials


def _mpf_round(x, prec: int) -> mpmath.mpf:
    with mpmath.workprec(prec):
        return +mpmath.mpf(x)


def _fmpq_to_mpf(q: fmpq, prec: int) -> mpmath.mpf:
    with mpmath.workprec(prec):
        return mpmath.mpf(int(q.p)) / int(q.q)


def _arb_mid_mpf(x: arb, prec: int) -> mpmath.mpf:
    man, exp = x.mid().man_exp()
    with mpmath.workprec(prec):
        return +mpmath.mpf((int(man), int(exp))) if int(man) else mpmath.mpf(0)


class BigPoly:
    """Polynomial with binary floating coefficients.

    Univariate polynomials are dense (``coeffs[j]`` multiplies ``x**j``);
    bivariate ones are a sparse map ``{(i, j): c}`` for ``x**i * y**j`` with no
    exact zeros stored.
    """

    __slots__ = ("_coeffs", "precision_bits", "vars", "_arb_cache")

    def __init__(self, coeffs, precision_bits: int = 256, vars: int = 1):
        if precision_bits < MIN_PRECISION:
            raise ValueError(f"precision_bits must be at least {MIN_PRECISION}")
        if vars not in (1, 2):
            raise ValueError("vars must be 1 or 2")
        with mpmath.workprec(precision_bits):
            if vars == 1:
                cs = [+mpmath.mpf(c) for c in coeffs]
                while cs and cs[-1] == 0:
                    cs.pop()
                data = tuple(cs)
            else:
                items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
                acc: dict = {}
                for (i, j), c in items:
                    acc[(int(i), int(j))] = +mpmath.mpf(c)
                data = tuple(sorted((k, v) for k, v in acc.items() if v != 0))
        object.__setattr__(self, "_coeffs", data)
        object.__setattr__(self, "precision_bits", int(precision_bits))
        object.__setattr__(self, "vars", vars)
        object.__setattr__(self, "_arb_cache", {})

    def __setattr__(self, name, value):
        raise AttributeError("BigPoly is immutable")

    @classmethod
    def from_rational(cls, p: RationalPoly, precision_bits: int) -> "BigPoly":
        return cls([_fmpq_to_mpf(c, precision_bits) for c in p.flint.coeffs()], precision_bits)

    @classmethod
    def from_terms(cls, terms: Mapping, precision_bits: int) -> "BigPoly":
        return cls(terms, precision_bits, vars=2)

    @property
    def coeffs(self):
        """Tuple of coefficients (univariate) or dict of terms (bivariate)."""
        return self._coeffs if self.vars == 1 else dict(self._coeffs)

    def terms(self) -> dict:
        if self.vars == 1:
            return {(j, 0): c for j, c in enumerate(self._coeffs) if c != 0}
        return dict(self._coeffs)

    @property
    def degree(self) -> int:
        if self.vars == 1:
            return len(self._coeffs) - 1 if self._coeffs else ZERO_DEGREE
        return max((i + j for (i, j), _ in self._coeffs), default=ZERO_DEGREE)

    def is_zero(self) -> bool:
        return not self._coeffs

    def __eq__(self, other):
        if not isinstance(other, BigPoly):
            return NotImplemented
        return self.vars == other.vars and self._coeffs == other._coeffs

    def __hash__(self):
        return hash((self.vars, self._coeffs))

    def __repr__(self):
        return f"BigPoly(vars={self.vars}, degree={self.degree}, precision_bits={self.precision_bits})"

    def with_precision(self, precision_bits: int) -> "BigPoly":
        src = self._coeffs if self.vars == 1 else dict(self._coeffs)
        return BigPoly(src, precision_bits, self.vars)

    def to_rational(self) -> RationalPoly:
        """Exact rational image of the stored binary coefficients (univariate)."""
        if self.vars != 1:
            raise ValueError("to_rational needs a univariate polynomial")
        return RationalPoly([mpf_to_fraction(c) for c in self._coeffs])

    def to_mpoly(self) -> "RationalMPoly":
        return RationalMPoly(2, {k: mpf_to_fraction(v) for k, v in self.terms().items()})

    # arithmetic -----------------------------------------------------------

    def _prec(self, other=None) -> int:
        if isinstance(other, BigPoly):
            return max(self.precision_bits, other.precision_bits)
        return self.precision_bits

    def __add__(self, other):
        return bivar_add(self, other) if self.vars == 2 else _uni_linear(self, other, 1)

    def __sub__(self, other):
        return bivar_add(self, other * -1) if self.vars == 2 else _uni_linear(self, other, -1)

    def __neg__(self):
        return self * -1

    def __mul__(self, other):
        prec = self._prec(other)
        if not isinstance(other, BigPoly):
            with mpmath.workprec(prec):
                c = mpmath.mpf(other) if not isinstance(other, (Fraction, fmpq)) else mpmath.mpf(to_fraction(other).numerator) / to_fraction(other).denominator
                if self.vars == 1:
                    return BigPoly([a * c for a in self._coeffs], prec)
                return BigPoly({k: v * c for k, v in self._coeffs}, prec, vars=2)
        if self.vars == 2 or other.vars == 2:
            return bivar_mul(self, other)
        a, b = self._coeffs, other._coeffs
        if not a or not b:
            return BigPoly([], prec)
        with mpmath.workprec(prec):
            out = [mpmath.mpf(0)] * (len(a) + len(b) - 1)
            for i, ai in enumerate(a):
                for j, bj in enumerate(b):
                    out[i + j] += ai * bj
        return BigPoly(out, prec)

    __rmul__ = __mul__

    def derivative(self) -> "BigPoly":
        if self.vars != 1:
            raise ValueError("derivative is defined for univariate BigPoly")
        # widen by the bits of the largest multiplier so the derivative is exact
        prec = self.precision_bits + max(len(self._coeffs), 1).bit_length()
        with mpmath.workprec(prec):
            return BigPoly([j * c for j, c in enumerate(self._coeffs)][1:], prec)

    # evaluation -----------------------------------------------------------

    def __call__(self, x, y=None):
        return bivar_eval(self, x, y) if self.vars == 2 else _uni_eval(self, x)

    def arb_poly(self, prec: int) -> arb_poly:
        if self.vars != 1:
            raise ValueError("arb_poly is univariate only")
        cached = self._arb_cache.get(prec)
        if cached is None:
            with _flint_lock, ctx.workprec(prec):
                cached = arb_poly([mpf_to_arb(c) for c in self._coeffs])
            self._arb_cache[prec] = cached
        return cached

    def enclose(self, x, prec: int, y=None) -> arb:
        """Rigorous ball for the value of the stored polynomial."""
        if self.vars == 1:
            ap = self.arb_poly(prec)
            with _flint_lock, ctx.workprec(prec):
                return ap(to_arb(x, prec))
        with _flint_lock, ctx.workprec(prec):
            xa, ya = to_arb(x, prec), to_arb(y, prec)
            total = arb(0)
            for (i, j), c in self._coeffs:
                total += mpf_to_arb(c) * xa ** i * ya ** j
            return total

    # serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        if self.vars == 1:
            return {"vars": 1, "precision_bits": self.precision_bits,
                    "coeffs": [mpf_hex(c) for c in self._coeffs]}
        return {"vars": 2, "precision_bits": self.precision_bits,
                "coeffs": [{"dx": i, "dy": j, "hex": mpf_hex(c)} for (i, j), c in self._coeffs]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "BigPoly":
        prec = int(obj["precision_bits"])
        if obj.get("vars", 1) == 1:
            return cls([parse_hex(h) for h in obj["coeffs"]], prec)
        return cls({(int(t["dx"]), int(t["dy"])): parse_hex(t["hex"]) for t in obj["coeffs"]}, prec, vars=2)


def _uni_linear(a: BigPoly, b, sign: int) -> BigPoly:
    if not isinstance(b, BigPoly):
        b = BigPoly([b], a.precision_bits)
    prec = max(a.precision_bits, b.precision_bits)
    n = max(len(a._coeffs), len(b._coeffs))
    with mpmath.workprec(prec):
        zero = mpmath.mpf(0)
        out = [(a._coeffs[j] if j < len(a._coeffs) else zero)
               + sign * (b._coeffs[j] if j < len(b._coeffs) else zero) for j in range(n)]
    return BigPoly(out, prec)


def _uni_eval(p: BigPoly, x):
    with mpmath.workprec(p.precision_bits):
        x = mpmath.mpmathify(x) if not isinstance(x, Fraction) else mpmath.mpf(x.numerator) / x.denominator
        acc = mpmath.mpf(0)
        for c in reversed(p._coeffs):
            acc = acc * x + c
        return acc


def _as_bivar(p: BigPoly) -> BigPoly:
    return p if p.vars == 2 else BigPoly(p.terms(), p.precision_bits, vars=2)


def bivar_add(a: BigPoly, b: BigPoly) -> BigPoly:
    a, b = _as_bivar(a), _as_bivar(b)
    prec = max(a.precision_bits, b.precision_bits)
    acc = dict(a._coeffs)
    with mpmath.workprec(prec):
        for k, v in b._coeffs:
            acc[k] = acc.get(k, mpmath.mpf(0)) + v
    return BigPoly(acc, prec, vars=2)


def bivar_mul(a: BigPoly, b: BigPoly) -> BigPoly:
    a, b = _as_bivar(a), _as_bivar(b)
    prec = max(a.precision_bits, b.precision_bits)
    acc: dict = {}
    with mpmath.workprec(prec):
        for (i1, j1), c1 in a._coeffs:
            for (i2, j2), c2 in b._coeffs:
                k = (i1 + i2, j1 + j2)
                acc[k] = acc.get(k, mpmath.mpf(0)) + c1 * c2
    return BigPoly(acc, prec, vars=2)


def bivar_eval(p: BigPoly, x=None, y=None):
    """Value at (x, y); with no point given, the diagonal restriction as a univariate BigPoly."""
    p = _as_bivar(p)
    with mpmath.workprec(p.precision_bits):
        if (x is None) != (y is None):
            raise ValueError("give both coordinates or neither")
        if y is None:
            # restriction to the diagonal x = y
            out: dict = {}
            for (i, j), c in p._coeffs:
                out[i + j] = out.get(i + j, mpmath.mpf(0)) + c
            n = max(out, default=-1) + 1
            return BigPoly([out.get(d, 0) for d in range(n)], p.precision_bits)
        x, y = mpmath.mpmathify(x), mpmath.mpmathify(y)
        total = mpmath.mpf(0)
        for (i, j), c in p._coeffs:
            total += c * x ** i * y ** j
        return total


def shift(p, offset, ctx_: EvalContext | None = None) -> BigPoly:
    """q(x) = p(x + offset) as a BigPoly.

    The Taylor shift runs in ball arithmetic; the working precision grows until
    every output coefficient is known to ``precision_bits - GUARD`` relative
    bits, then the ball midpoints are rounded to ``precision_bits``.
    """
    prec = (ctx_ or EvalContext()).precision_bits
    if isinstance(p, RationalPoly):
        src = [("q", c) for c in p.flint.coeffs()]
    elif isinstance(p, BigPoly) and p.vars == 1:
        src = [("f", c) for c in p.coeffs]
    else:
        raise TypeError("shift expects a univariate polynomial")
    if isinstance(offset, float) and not math.isfinite(offset):
        raise ValueError("offset must be finite")
    if not src:
        return BigPoly([], prec)
    wp = prec + GUARD_BITS
    while True:
        if wp > MAX_SHIFT_PRECISION:
            raise PrecisionError(f"shift needs more than {MAX_SHIFT_PRECISION} bits")
        with _flint_lock, ctx.workprec(wp):
            a = [arb(c) if kind == "q" else mpf_to_arb(c) for kind, c in src]
            c = to_arb(offset, wp)
            n = len(a) - 1
            for i in range(n):
                for j in range(n - 1, i - 1, -1):
                    a[j] = a[j] + c * a[j + 1]
            ok = all(x.rel_accuracy_bits() >= prec - 8 or x.is_zero() for x in a)
        if ok:
            return BigPoly([_arb_mid_mpf(x, prec) for x in a], prec)
        wp *= 2


def evaluate(p, x, ctx_: EvalContext | None = None):
    """Horner evaluation.

    RationalPoly at a rational point without a context is exact (Fraction).
    ``nearest`` returns an mpf; ``outward-interval`` returns an Enclosure.
    """
    if ctx_ is None:
        if isinstance(p, RationalPoly) and not isinstance(x, (float, mpmath.mpf)):
            return p(x)
        ctx_ = EvalContext()
    if ctx_.rounding == "outward-interval":
        return Enclosure.from_arb(p.enclose(x, ctx_.precision_bits))
    if isinstance(p, RationalPoly):
        if isinstance(x, (float, mpmath.mpf, int, Fraction, fmpq)):
            return _fmpq_to_mpf(to_fmpq(p(to_fraction(x))), ctx_.precision_bits)
        return _arb_mid_mpf(p.enclose(x, ctx_.precision_bits + GUARD_BITS), ctx_.precision_bits)
    with mpmath.workprec(ctx_.precision_bits):
        return +p(x)


# ---------------------------------------------------------------------------
# sparse multivariate exact polynomials


class RationalMPoly:
    """Sparse polynomial over Q in ``nvars`` variables: {exponent tuple: Fraction}."""

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars: int, terms: Mapping | None = None):
        object.__setattr__(self, "nvars", nvars)
        clean = {}
        for k, v in (terms or {}).items():
            k = tuple(int(e) for e in k)
            if len(k) != nvars:
                raise ValueError("exponent tuple has the wrong length")
            v = to_fraction(v)
            if v:
                clean[k] = clean.get(k, 0) + v
        object.__setattr__(self, "_terms", {k: v for k, v in clean.items() if v})

    def __setattr__(self, name, value):
        raise AttributeError("RationalMPoly is immutable")

    @classmethod
    def var(cls, nvars: int, i: int) -> "RationalMPoly":
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): 1})

    @classmethod
    def const(cls, nvars: int, c) -> "RationalMPoly":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def from_univariate(cls, p: RationalPoly, nvars: int, i: int) -> "RationalMPoly":
        out = {}
        for j, c in enumerate(p.coeffs):
            e = [0] * nvars
            e[i] = j
            out[tuple(e)] = c
        return cls(nvars, out)

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self._terms), default=ZERO_DEGREE)

    def degree_in(self, i: int) -> int:
        return max((k[i] for k in self._terms), default=ZERO_DEGREE)

    def _coerce(self, other) -> "RationalMPoly":
        if isinstance(other, RationalMPoly):
            if other.nvars != self.nvars:
                raise ValueError("variable count mismatch")
            return other
        return RationalMPoly.const(self.nvars, other)

    def __add__(self, other):
        o = self._coerce(other)
        acc = dict(self._terms)
        for k, v in o._terms.items():
            acc[k] = acc.get(k, 0) + v
        return RationalMPoly(self.nvars, acc)

    __radd__ = __add__

    def __neg__(self):
        return RationalMPoly(self.nvars, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, RationalMPoly):
            c = to_fraction(other)
            return RationalMPoly(self.nvars, {k: v * c for k, v in self._terms.items()})
        o = self._coerce(other)
        acc: dict = {}
        for k1, v1 in self._terms.items():
            for k2, v2 in o._terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                acc[k] = acc.get(k, 0) + v1 * v2
        return RationalMPoly(self.nvars, acc)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = RationalMPoly.const(self.nvars, 1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, RationalMPoly):
            return self.nvars == other.nvars and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == RationalMPoly.const(self.nvars, other)
        return NotImplemented

    def __hash__(self):
        return hash((self.nvars, tuple(sorted(self._terms.items()))))

    def __repr__(self):
        return f"RationalMPoly(nvars={self.nvars}, terms={len(self._terms)}, degree={self.degree})"

    def __call__(self, *point):
        total = Fraction(0)
        pt = [to_fraction(v) for v in point]
        for k, v in self._terms.items():
            term = v
            for e, x in zip(k, pt):
                if e:
                    term *= x ** e
            total += term
        return total

    def swap(self, i: int, j: int) -> "RationalMPoly":
        def sw(k):
            k = list(k)
            k[i], k[j] = k[j], k[i]
            return tuple(k)
        return RationalMPoly(self.nvars, {sw(k): v for k, v in self._terms.items()})

    def to_json(self) -> dict:
        if self.nvars != 2:
            raise ValueError("JSON format covers bivariate polynomials")
        return {"vars": 2, "coeffs": [{"dx": k[0], "dy": k[1], "num": str(v.numerator), "den": str(v.denominator)}
                                      for k, v in sorted(self._terms.items())]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "RationalMPoly":
        return cls(2, {(int(t["dx"]), int(t["dy"])): Fraction(int(t["num"]), int(t["den"])) for t in obj["coeffs"]})


def substitute_univariate(p: RationalPoly, arg: RationalMPoly) -> RationalMPoly:
    """p(arg) for a multivariate argument, by Horner's rule."""
    acc = RationalMPoly(arg.nvars)
    for c in reversed(p.coeffs):
        acc = acc * arg + c
    return acc


def integrate_in_lambda(p: RationalMPoly, lam: int = 2) -> RationalMPoly:
    """Exact integral over lambda in [0, 1] of a polynomial in (x, y, lambda).

    The coefficient of lambda**j contributes its (x, y) part divided by j + 1.
    The result drops the lambda variable.
    """
    out: dict = {}
    for k, v in p.terms.items():
        rest = k[:lam] + k[lam + 1:]
        out[rest] = out.get(rest, 0) + v / (k[lam] + 1)
    return RationalMPoly(p.nvars - 1, out)
