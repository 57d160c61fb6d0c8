"""Bounded sum-of-squares certificates for the bivariate polynomial R(x, y).

Route: pair the complex roots of 99P +- P' into two squares each, substitute
the affine arguments z +- lambda a, combine with the two-square forms of
C +- D through the AC/BD product rule, then integrate the resulting Gram
matrices exactly over lambda and factor the integrated matrix.

Coefficient bookkeeping uses exact rationals (flint) wherever the inputs are
exact; only root finding and the final factorization are floating point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import mpmath
import numpy as np
from flint import arb, arb_mat, ctx, fmpq, fmpq_mat, fmpq_mpoly, fmpq_mpoly_ctx

from .poly_core import (
    GUARD_BITS,
    BigPoly,
    RationalMPoly,
    RationalPoly,
    arb_bounds,
    arb_to_fraction,
    integrate_in_lambda,
    mpf_to_fraction,
    substitute_univariate,
    to_fmpq,
    to_fraction,
)

H_SHIFT = Fraction(99, 2000)          # 0.0495: completes the square in C +- D
INNER = Fraction(999, 1000)           # inner constant that makes the integral form exact
PRINTED_INNER = Fraction(998, 1000)
THEOREM_EXTRA = Fraction(1, 4000)     # 0.00025

_XY = fmpq_mpoly_ctx.get(("x", "y"), "lex")
_XYL = fmpq_mpoly_ctx.get(("x", "y", "l"), "lex")


class SosError(ArithmeticError):
    """A stage of the certificate pipeline failed; ``stage`` names which."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class RealRootError(SosError):
    def __init__(self, root, message: str = ""):
        super().__init__("root pairing", message or f"real root near {mpmath.nstr(root, 20)}")
        self.root = root


class RootFindingError(ArithmeticError):
    def __init__(self, message: str, residual):
        super().__init__(f"{message} (achieved residual {mpmath.nstr(residual, 5)})")
        self.residual = residual


# ---------------------------------------------------------------------------
# roots


@dataclass
class RootSet:
    roots: list
    residual: mpmath.mpf
    pairing: list
    precision_bits: int
    iterations: int = 0

    @property
    def max_modulus(self) -> mpmath.mpf:
        return max((abs(z) for z in self.roots), default=mpmath.mpf(0))

    def min_abs_imag(self) -> mpmath.mpf:
        return min((abs(z.imag) for z in self.roots), default=mpmath.inf)


def _mpf_coeffs(p, prec: int) -> list:
    with mpmath.workprec(prec):
        if isinstance(p, RationalPoly):
            return [mpmath.mpf(c.numerator) / c.denominator for c in p.coeffs]
        if isinstance(p, BigPoly) and p.vars == 1:
            return [+c for c in p.coeffs]
    raise TypeError("expected a univariate RationalPoly or BigPoly")


def _expand_roots(lead, roots) -> list:
    out = [mpmath.mpc(lead)]
    for z in roots:
        nxt = [mpmath.mpc(0)] * (len(out) + 1)
        for j, c in enumerate(out):
            nxt[j + 1] += c
            nxt[j] -= z * c
        out = nxt
    return out


def _pair_conjugates(roots, tol) -> list:
    upper = [i for i, z in enumerate(roots) if z.imag > tol]
    lower = [i for i, z in enumerate(roots) if z.imag < -tol]
    pairs = [(i, i) for i, z in enumerate(roots) if abs(z.imag) <= tol]
    free = set(lower)
    for i in upper:
        target = mpmath.conj(roots[i])
        j = min(free, key=lambda j: abs(roots[j] - target), default=None)
        if j is None:
            continue
        free.discard(j)
        pairs.append((i, j))
    return sorted(pairs)


def find_roots(p, precision_bits: int = 512, max_iter: int = 2000) -> RootSet:
    """All complex roots by Aberth-Ehrlich iteration.

    Contract: lead * prod(x - z_i) reproduces the coefficients of ``p`` within
    2^(-precision_bits/2) relative to the largest coefficient.
    """
    wp = precision_bits + GUARD_BITS
    c = _mpf_coeffs(p, wp)
    while c and c[-1] == 0:
        c.pop()
    n = len(c) - 1
    if n < 1:
        raise ValueError("find_roots needs degree at least 1")
    with mpmath.workprec(wp):
        lead = c[-1]
        scale = max(abs(v) for v in c)
        # Fujiwara bound for the starting circle
        radius = 2 * max(abs(c[n - j] / lead) ** (mpmath.mpf(1) / j) for j in range(1, n + 1))
        dc = [j * c[j] for j in range(1, n + 1)]
        z = [radius * mpmath.expj(2 * mpmath.pi * k / n + mpmath.mpf(0.4)) *
             (1 + mpmath.mpf(k) / (7 * n)) for k in range(n)]
        tol = mpmath.mpf(2) ** (-(wp - 16))
        it = 0
        for it in range(1, max_iter + 1):
            biggest = mpmath.mpf(0)
            for i in range(n):
                zi = z[i]
                pv = mpmath.polyval(c[::-1], zi)
                dv = mpmath.polyval(dc[::-1], zi)
                if pv == 0:
                    continue
                ratio = pv / dv if dv != 0 else mpmath.mpc(radius)
                acc = mpmath.fsum(1 / (zi - z[j]) for j in range(n) if j != i and z[j] != zi)
                step = ratio / (1 - ratio * acc)
                z[i] = zi - step
                biggest = max(biggest, abs(step) / max(1, abs(z[i])))
            if biggest <= tol:
                break
        z.sort(key=lambda v: (mpmath.nint(v.real * 2 ** 40), v.imag))
        rec = _expand_roots(lead, z)
        residual = max(abs(rec[j] - c[j]) for j in range(n + 1)) / scale
        pairing = _pair_conjugates(z, mpmath.mpf(2) ** (-(precision_bits // 4)) * max(1, radius))
    if residual > mpmath.mpf(2) ** (-(precision_bits // 2)):
        raise RootFindingError("root finding did not converge", residual)
    return RootSet(z, residual, pairing, precision_bits, it)


# ---------------------------------------------------------------------------
# boundedness


@dataclass
class BoundCheck:
    ok: bool
    degree: int
    achieved_C: mpmath.mpf
    margins: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def _term_items(p) -> list:
    """[(exponent tuple, exact Fraction)] for any supported polynomial type."""
    if isinstance(p, RationalPoly):
        return [((j,), c) for j, c in enumerate(p.coeffs) if c]
    if isinstance(p, RationalMPoly):
        return list(p.terms.items())
    if isinstance(p, BigPoly):
        if p.vars == 1:
            return [((j,), mpf_to_fraction(c)) for j, c in enumerate(p.coeffs) if c]
        return [(k, mpf_to_fraction(c)) for k, c in p.terms().items()]
    if hasattr(p, "to_dict"):
        return [(tuple(k), Fraction(int(v.p), int(v.q))) for k, v in p.to_dict().items()]
    raise TypeError(f"unsupported polynomial type {type(p).__name__}")


def achieved_C(p) -> Fraction:
    """Smallest C for which every degree-d' coefficient is at most C/d'!."""
    return max((abs(c) * math.factorial(sum(k)) for k, c in _term_items(p)), default=Fraction(0))


def check_bounded(p, d: int, C) -> BoundCheck:
    """Degree at most d and |coefficient of total degree d'| <= C/d'!, decided exactly."""
    C = to_fraction(C) if not isinstance(C, mpmath.mpf) else mpf_to_fraction(C)
    items = _term_items(p)
    deg = max((sum(k) for k, _ in items), default=-1)
    ok = deg <= d
    margins = {}
    for k, c in items:
        lim = C / math.factorial(sum(k))
        margins[k] = lim - abs(c)
        if abs(c) > lim:
            ok = False
    ach = achieved_C(p)
    return BoundCheck(ok, deg, mpmath.mpf(ach.numerator) / ach.denominator if ach else mpmath.mpf(0), margins)


# ---------------------------------------------------------------------------
# univariate pairing


def pair_roots_sos(p, roots: RootSet | None = None, precision_bits: int = 512,
                   allow_large_leading: bool = False) -> tuple[BigPoly, BigPoly]:
    """p = q1^2 + q2^2 from the roots in the upper half plane.

    h(x) = sqrt(p_d) prod_{Im z > 0} (x - z) satisfies |h(x)|^2 = p(x) on the
    real line, so q1 = Re h and q2 = Im h.  Leading coefficients above 1 are
    rejected unless ``allow_large_leading`` is set, in which case the factor
    sqrt(p_d) is simply carried along.
    """
    wp = precision_bits + GUARD_BITS
    c = _mpf_coeffs(p, wp)
    while c and c[-1] == 0:
        c.pop()
    n = len(c) - 1
    if n < 0:
        raise SosError("root pairing", "zero polynomial")
    if n % 2:
        raise SosError("root pairing", f"odd degree {n} cannot be a sum of squares")
    lead = c[-1]
    if lead <= 0:
        raise SosError("root pairing", "leading coefficient must be positive")
    if lead > 1 and not allow_large_leading:
        raise SosError("root pairing",
                       f"leading coefficient {mpmath.nstr(lead, 8)} exceeds 1; the coefficient bound "
                       "for the paired squares is only established for leading coefficients in (0, 1]")
    if n == 0:
        with mpmath.workprec(wp):
            return BigPoly([mpmath.sqrt(lead)], precision_bits), BigPoly([], precision_bits)
    if roots is None:
        roots = find_roots(p, precision_bits)
    with mpmath.workprec(wp):
        scale = max(1, max(abs(z) for z in roots.roots))
        thresh = mpmath.mpf(2) ** (-(precision_bits // 4)) * scale
        for z in roots.roots:
            if abs(z.imag) <= thresh:
                raise RealRootError(z)
        upper = [z for z in roots.roots if z.imag > 0]
        if len(upper) != n // 2:
            raise SosError("root pairing", f"{len(upper)} roots in the upper half plane, expected {n // 2}")
        h = _expand_roots(mpmath.sqrt(lead), upper)
        q1 = [v.real for v in h]
        q2 = [v.imag for v in h]
    Q1, Q2 = BigPoly(q1, precision_bits), BigPoly(q2, precision_bits)
    with mpmath.workprec(wp):
        back = Q1 * Q1 + Q2 * Q2
        bc = back.coeffs
        cmax = max(abs(v) for v in c)
        res = max(abs((bc[j] if j < len(bc) else 0) - c[j]) for j in range(n + 1)) / cmax
    if res > mpmath.mpf(2) ** (-(precision_bits // 4)):
        raise SosError("root pairing", f"reconstruction residual {mpmath.nstr(res, 5)} above tolerance")
    return Q1, Q2


def pairing_bound(roots: RootSet, d: int) -> mpmath.mpf:
    """(A d)^(d/2), A = max(1, largest root modulus): coefficient bound for the paired squares."""
    A = max(mpmath.mpf(1), roots.max_modulus)
    return (A * d) ** (d // 2)


# ---------------------------------------------------------------------------
# exact bivariate helpers


def _fq(v) -> fmpq:
    if isinstance(v, mpmath.mpf):
        v = mpf_to_fraction(v)
    return to_fmpq(v)


def to_xy(p) -> "fmpq_mpoly":
    """Exact bivariate flint polynomial from a BigPoly, RationalMPoly or univariate-in-x input."""
    items = _term_items(p)
    if items and len(items[0][0]) == 1:
        items = [((k[0], 0), c) for k, c in items]
    return _XY.from_dict({k: to_fmpq(c) for k, c in items})


def from_xy(p, precision_bits: int) -> BigPoly:
    return BigPoly.from_terms({k: _q_mpf(v, precision_bits) for k, v in p.to_dict().items()}, precision_bits)


def _q_mpf(v: fmpq, prec: int) -> mpmath.mpf:
    with mpmath.workprec(prec):
        return mpmath.mpf(int(v.p)) / int(v.q)


def univariate_in(p, var: int):
    """p(x) (var=0) or p(y) (var=1) as an exact flint bivariate polynomial."""
    items = _term_items(p)
    return _XY.from_dict({((k[0], 0) if var == 0 else (0, k[0])): to_fmpq(c) for k, c in items})


def sos_product(first: Sequence, second: Sequence) -> list:
    """(sum q_i^2)(sum r_j^2) = sum (q_i r_j)^2."""
    return [q * r for q in first for r in second]


def _bivar(p, prec: int) -> BigPoly:
    if isinstance(p, BigPoly) and p.vars == 2:
        return p
    if isinstance(p, BigPoly):
        return BigPoly({(j, 0): c for j, c in enumerate(p.coeffs) if c}, p.precision_bits, vars=2)
    return from_xy(to_xy(p), prec)


def acbd_compose(sos_ApB: Sequence, sos_AmB: Sequence, sos_CpD: Sequence, sos_CmD: Sequence,
                 precision_bits: int = 512) -> tuple[list, list]:
    """Square lists for AC - BD and AC + BD.

    With Q1 = A - B, Q2 = A + B, R1 = C - D, R2 = C + D:
    AC - BD = (Q1 R2 + Q2 R1) / 2 and AC + BD = (Q1 R1 + Q2 R2) / 2.
    The halving is folded into each square as a factor 1/sqrt(2).
    """
    with mpmath.workprec(precision_bits + GUARD_BITS):
        half = 1 / mpmath.sqrt(2)
    Q1 = [_bivar(q, precision_bits) for q in sos_AmB]
    Q2 = [_bivar(q, precision_bits) for q in sos_ApB]
    R1 = [_bivar(q, precision_bits) for q in sos_CmD]
    R2 = [_bivar(q, precision_bits) for q in sos_CpD]
    minus = [s * half for s in sos_product(Q1, R2) + sos_product(Q2, R1)]
    plus = [s * half for s in sos_product(Q1, R1) + sos_product(Q2, R2)]
    return minus, plus


def _affine_arg(lam: Fraction, sign: int):
    """z + sign*lam*a = ((1 + sign lam)/2) x + ((1 - sign lam)/2) y as an exact bivariate polynomial."""
    x, y = _XY.gens()
    return to_fmpq(1 + sign * lam) / 2 * x + to_fmpq(1 - sign * lam) / 2 * y


def sos_for_shifted(squares: Sequence, lam, sign: int = 1, precision_bits: int = 512) -> list:
    """Substitute z + sign*lam*a into each univariate square; the coefficient bound is unchanged."""
    lam = to_fraction(lam)
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    w = _affine_arg(lam, sign)
    out = []
    for q in squares:
        acc = _XY.from_dict({})
        for c in reversed(_dense_fmpq(q)):
            acc = acc * w + c
        out.append(from_xy(acc, precision_bits))
    return out


def _dense_fmpq(q) -> list:
    items = dict((k[0], v) for k, v in _term_items(q))
    n = max(items, default=-1)
    return [to_fmpq(items.get(j, 0)) for j in range(n + 1)]


# ---------------------------------------------------------------------------
# R and its integral forms


def _xy_vars():
    return RationalMPoly.var(2, 0), RationalMPoly.var(2, 1)


def build_r_direct(p: RationalPoly, q: RationalPoly) -> RationalMPoly:
    """0.5(x-y)(1 + 0.25(x-y)^2)(q(x) - q(y)) - 0.00025(x-y)^2 (p(x) + p(y)), exactly."""
    if q.derivative() != p:
        raise ValueError("q' must equal p")
    x, y = _xy_vars()
    u = x - y
    px, py = substitute_univariate(p, x), substitute_univariate(p, y)
    qx, qy = substitute_univariate(q, x), substitute_univariate(q, y)
    return u * Fraction(1, 2) * (1 + u * u * Fraction(1, 4)) * (qx - qy) - u * u * THEOREM_EXTRA * (px + py)


def build_R(P, U: RationalPoly | None = None) -> RationalMPoly:
    """0.5(x-y)(1 + 0.25(x-y)^2)(U(x) - U(y)) - 0.00025(x-y)^2 P(x) with U' = P, exactly."""
    P = P if isinstance(P, RationalPoly) else P.to_rational()
    U = U if U is not None else P.antiderivative()
    if U.derivative() != P:
        raise ValueError("U' must equal P")
    x, y = _xy_vars()
    u = x - y
    return (u * Fraction(1, 2) * (1 + u * u * Fraction(1, 4))
            * (substitute_univariate(U, x) - substitute_univariate(U, y))
            - u * u * THEOREM_EXTRA * substitute_univariate(P, x))


def build_r_integral(p: RationalPoly, inner=PRINTED_INNER, weight: str = "2-lambda",
                     mirror_sign: int = -1) -> RationalMPoly:
    """Exact lambda-integral form with z = (x+y)/2, a = (x-y)/2.

    Integrand: (c a^2 + a^4) p(z + lam a) - 0.001 a^3 W p'(z + lam a)
             + (c a^2 + a^4) p(z - lam a) + mirror_sign 0.001 a^3 W p'(z - lam a)
    with c = ``inner`` and W = 2 - lam or lam.  The defaults reproduce the
    printed form; ``inner=0.999, weight="lambda", mirror_sign=+1`` is the form
    that equals build_r_direct.
    """
    c = to_fraction(inner)
    X, Y, L = (RationalMPoly.var(3, i) for i in range(3))
    z = (X + Y) * Fraction(1, 2)
    a = (X - Y) * Fraction(1, 2)
    W = {"2-lambda": 2 - L, "lambda": L, "1": RationalMPoly.const(3, 1)}[weight]
    dp = p.derivative()
    k = Fraction(1, 1000)
    outer = c * a * a + a ** 4
    plus = outer * substitute_univariate(p, z + L * a) - k * a ** 3 * W * substitute_univariate(dp, z + L * a)
    minus = outer * substitute_univariate(p, z - L * a) + mirror_sign * k * a ** 3 * W * substitute_univariate(dp, z - L * a)
    return integrate_in_lambda(plus + minus, lam=2)


@dataclass
class ReconcileEntry:
    label: str
    weight: str
    mirror_sign: int
    printed_residual: RationalMPoly      # direct - integral at the printed inner constant
    solved_inner: Fraction | None       # inner constant that makes the residual vanish, if one exists
    solved_residual_zero: bool


@dataclass
class ReconcileReport:
    printed_is_identity: bool
    corrected_inner: Fraction | None
    corrected_weight: str | None
    corrected_mirror_sign: int | None
    entries: list

    def summary(self) -> dict:
        out = {
            "printed_is_identity": self.printed_is_identity,
            "corrected_inner": None if self.corrected_inner is None else str(self.corrected_inner),
            "corrected_weight": self.corrected_weight,
            "corrected_mirror_sign": self.corrected_mirror_sign,
            "cases": [],
        }
        for e in self.entries:
            out["cases"].append({
                "p": e.label, "weight": e.weight, "mirror_sign": e.mirror_sign,
                "printed_residual": {f"x^{i} y^{j}": str(v) for (i, j), v in sorted(e.printed_residual.terms.items())},
                "solved_inner": None if e.solved_inner is None else str(e.solved_inner),
                "solved_residual_zero": e.solved_residual_zero,
            })
        return out


def _solve_inner(diff: RationalMPoly, K: RationalMPoly) -> Fraction | None:
    """c with diff == c K exactly, or None."""
    if K.is_zero():
        return Fraction(0) if diff.is_zero() else None
    k0, v0 = next(iter(sorted(K.terms.items())))
    c = diff.terms.get(k0, Fraction(0)) / v0
    return c if (diff - K * c).is_zero() else None


def reconcile_integral_form(polys: Mapping[str, RationalPoly] | None = None) -> ReconcileReport:
    """Compare the direct and integral forms of r in exact arithmetic.

    For every weight (2 - lam, lam) and mirror sign the residual is affine in
    the inner constant c, so the c making it vanish (if any) is solved exactly.
    """
    if polys is None:
        polys = {"1": RationalPoly([1]), "x": RationalPoly([0, 1]), "x^2": RationalPoly([0, 0, 1]),
                 "E_2": RationalPoly([1, -1, Fraction(1, 2)])}
    entries = []
    printed_ok = True
    solutions: dict = {}
    for label, p in polys.items():
        direct = build_r_direct(p, p.antiderivative())
        for weight in ("2-lambda", "lambda"):
            for ms in (-1, 1):
                at_printed = build_r_integral(p, PRINTED_INNER, weight, ms)
                base = build_r_integral(p, 0, weight, ms)
                K = build_r_integral(p, 1, weight, ms) - base
                residual = direct - at_printed
                c = _solve_inner(direct - base, K)
                entries.append(ReconcileEntry(label, weight, ms, residual, c, c is not None))
                if weight == "2-lambda" and ms == -1 and not residual.is_zero():
                    printed_ok = False
                solutions.setdefault((weight, ms), []).append(c)
    corrected = None
    for (weight, ms), cs in solutions.items():
        if all(c is not None for c in cs) and len({c for c in cs if c is not None}) <= 1:
            corrected = (cs[0], weight, ms)
            if weight == "lambda":
                break
    if corrected is None:
        return ReconcileReport(printed_ok, None, None, None, entries)
    return ReconcileReport(printed_ok, corrected[0], corrected[1], corrected[2], entries)


# ---------------------------------------------------------------------------
# Gram integration


@dataclass
class SquareFamily:
    """weight(lam) * f(x, y, lam)^2 with f given by its exact (x, y, lam) coefficients.

    ``coeffs`` maps (i, j) to the list of lambda-coefficients of x^i y^j;
    ``weight`` is a polynomial in lam that is nonnegative on [0, 1].
    """

    coeffs: dict
    weight: RationalPoly = field(default_factory=lambda: RationalPoly([1]))

    @classmethod
    def from_xyl(cls, f, weight: RationalPoly | None = None) -> "SquareFamily":
        out: dict = {}
        for (i, j, n), v in f.to_dict().items():
            row = out.setdefault((i, j), {})
            row[n] = Fraction(int(v.p), int(v.q))
        dense = {k: [row.get(n, Fraction(0)) for n in range(max(row) + 1)] for k, row in out.items()}
        return cls(dense, weight if weight is not None else RationalPoly([1]))

    @property
    def lam_degree(self) -> int:
        return max((len(v) - 1 for v in self.coeffs.values()), default=0)


@dataclass
class SosCertificate:
    squares: list
    k_count: int
    d_bound: int
    C_bound: mpmath.mpf
    residual_report: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def polynomial(self, precision_bits: int | None = None) -> "fmpq_mpoly":
        """Exact sum of the stored squares."""
        acc = _XY.from_dict({})
        for q in self.squares:
            f = to_xy(q)
            acc += f * f
        return acc


def monomial_basis(degree: int) -> list:
    return [(i, t - i) for t in range(degree + 1) for i in range(t, -1, -1)]


def _moment_matrix(weight: RationalPoly, n: int) -> fmpq_mat:
    """H[m, k] = integral_0^1 weight(lam) lam^(m+k) dlam, exactly."""
    wc = weight.coeffs
    rows = []
    for m in range(n):
        for k in range(n):
            rows.append(to_fmpq(sum((c / (m + k + e + 1) for e, c in enumerate(wc)), Fraction(0))))
    return fmpq_mat(n, n, rows)


def gram_matrix(families: Sequence[SquareFamily], basis: Sequence) -> fmpq_mat:
    """Exact integral over lam of sum_f weight_f f f^T in the given monomial basis."""
    index = {m: i for i, m in enumerate(basis)}
    N = len(basis)
    M = fmpq_mat(N, N)
    for fam in families:
        n = fam.lam_degree + 1
        entries = [fmpq(0)] * (N * n)
        for mono, lam_coeffs in fam.coeffs.items():
            if mono not in index:
                raise SosError("gram integration", f"monomial {mono} outside the basis")
            r = index[mono]
            for e, v in enumerate(lam_coeffs):
                entries[r * n + e] = to_fmpq(v)
        Cm = fmpq_mat(N, n, entries)
        M += Cm * _moment_matrix(fam.weight, n) * Cm.transpose()
    return M


def _pivoted_cholesky(M: fmpq_mat, prec: int) -> tuple[list, list, arb]:
    """Outer-product Cholesky with diagonal pivoting on the midpoints of M.

    Returns (columns, pivot order, Frobenius norm bound of the remainder
    M - sum l l^T).  Pivots below 2^(-prec/2) of the largest diagonal stop the
    factorization; what is left goes into the remainder.
    """
    N = M.nrows()
    wp = prec + GUARD_BITS
    with ctx.workprec(wp):
        A = arb_mat(N, N, [arb(M[i, j]) for i in range(N) for j in range(N)])
        Mexact = arb_mat(A)
        dmax = max((A[i, i].mid() for i in range(N)), default=arb(0))
        if not dmax > 0:
            return [], [], _frob(M, wp)
        stop = dmax * arb(2) ** (-(prec // 2))
        cols, order = [], []
        remaining = set(range(N))
        while remaining:
            piv = max(remaining, key=lambda i: arb_to_fraction(A[i, i].mid()))
            d = A[piv, piv].mid()
            if not d > stop:
                break
            root = d.sqrt().mid()
            col = arb_mat(N, 1, [(A[i, piv].mid() / root).mid() if i in remaining else arb(0) for i in range(N)])
            A = (A - col * col.transpose()).mid()
            remaining.discard(piv)
            cols.append(col)
            order.append(piv)
        # rigorous remainder from the exact M and the stored columns
        R = arb_mat(Mexact)
        for col in cols:
            R = R - col * col.transpose()
        frob = arb(0)
        for i in range(N):
            for j in range(N):
                frob += R[i, j] * R[i, j]
        # square root of the upper end: the ball itself may dip below zero
        frob = arb(to_fmpq(arb_bounds(frob)[1])).sqrt()
    return cols, order, frob


def _frob(M: fmpq_mat, prec: int) -> arb:
    with ctx.workprec(prec):
        acc = arb(0)
        for i in range(M.nrows()):
            for j in range(M.ncols()):
                acc += arb(M[i, j]) * arb(M[i, j])
        return acc.sqrt()


def integrate_sos_family(families: Sequence[SquareFamily], basis: Sequence | None = None,
                         precision_bits: int = 512) -> SosCertificate:
    """Integrate a lambda-dependent SoS family over [0, 1] and factor the Gram matrix.

    PSD-ness of the integrated matrix is certified by Weyl's inequality: the
    smallest eigenvalue is at least -||M - L L^T||_F, which must stay above
    -2^(-precision_bits/4) ||M||_F.
    """
    if basis is None:
        deg = max((i + j for fam in families for (i, j) in fam.coeffs), default=0)
        basis = monomial_basis(deg)
    basis = list(basis)
    M = gram_matrix(families, basis)
    cols, order, remainder = _pivoted_cholesky(M, precision_bits)
    norm = _frob(M, precision_bits + GUARD_BITS)
    with ctx.workprec(precision_bits + GUARD_BITS):
        tol = norm * arb(2) ** (-(precision_bits // 4))
        psd = bool(remainder <= tol) or norm == 0
        lower = -_upper_float(remainder)
    if not psd:
        raise SosError("gram integration",
                       f"integrated Gram matrix is indefinite beyond tolerance (remainder {remainder.str(5)})")
    squares = []
    wp = precision_bits + GUARD_BITS
    for col in cols:
        terms = {}
        for i, mono in enumerate(basis):
            v = col[i, 0]
            if v.is_zero():
                continue
            man, exp = v.mid().man_exp()
            with mpmath.workprec(wp):
                terms[mono] = mpmath.mpf((int(man), int(exp)))
        squares.append(BigPoly(terms, precision_bits, vars=2))
    d_bound = max((q.degree for q in squares), default=0)
    C = max((achieved_C(q) for q in squares), default=Fraction(0))
    report = {"gram_size": len(basis), "rank": len(cols), "psd_certified": psd,
              "min_eigenvalue_lower_bound": lower, "gram_frobenius": _upper_float(norm)}
    return SosCertificate(squares, len(squares), d_bound, _round_up(C), report)


def _round_up(q: Fraction, prec: int = 64) -> mpmath.mpf:
    """Binary number >= q, so bounds checked against it stay valid."""
    v = _frac_to_mpf(q, prec)
    return v if mpf_to_fraction(v) >= q else v * (1 + mpmath.mpf(2) ** (2 - prec))


def _upper_float(x: arb) -> float:
    hi = arb_bounds(x)[1]
    try:
        return float(hi)
    except OverflowError:
        return math.inf


def _frac_to_mpf(q: Fraction, prec: int = 64) -> mpmath.mpf:
    with mpmath.workprec(prec):
        return mpmath.mpf(q.numerator) / q.denominator


# ---------------------------------------------------------------------------
# the full pipeline


def _lift_univariate(q: BigPoly, lam_sign: int):
    """q(z + lam_sign*lam*a) as an exact polynomial in (x, y, lam)."""
    x, y, lam = _XYL.gens()
    w = (1 + lam_sign * lam) / 2 * x + (1 - lam_sign * lam) / 2 * y
    acc = _XYL.from_dict({})
    for c in reversed(_dense_fmpq(q)):
        acc = acc * w + c
    return acc


def branch_families(squares_minus: Sequence, squares_plus: Sequence) -> list[SquareFamily]:
    """Square families whose lambda-integral is r for the corrected integral form.

    squares_minus / squares_plus hold the two-square forms of 99p - p' and 99p + p'.
    Every family carries the factor 1/198 from A +- B = (99p +- p')/99 and the
    halving in the AC/BD rule.
    """
    x, y, lam = _XYL.gens()
    a = (x - y) / 2
    h = fmpq(H_SHIFT.numerator, H_SHIFT.denominator)
    g = RationalPoly([INNER, 0, -H_SHIFT ** 2]) * Fraction(1, 198)
    unit = RationalPoly([Fraction(1, 198)])
    fams = []
    for branch in (1, -1):
        for sigma, squares in ((-1, squares_minus), (1, squares_plus)):
            tau = -sigma * branch
            for s in squares:
                if s.is_zero():
                    continue
                sw = _lift_univariate(s, branch)
                fams.append(SquareFamily.from_xyl(sw * a * (a + tau * h * lam), unit))
                fams.append(SquareFamily.from_xyl(sw * a, g))
    return fams


def extra_families(squares_minus: Sequence, squares_plus: Sequence) -> list[SquareFamily]:
    """0.00025 (x-y)^2 P(y) with P = ((99P - P') + (99P + P'))/198."""
    x, y, _ = _XYL.gens()
    w = RationalPoly([THEOREM_EXTRA / 198])
    fams = []
    for s in list(squares_minus) + list(squares_plus):
        if s.is_zero():
            continue
        sy = _XYL.from_dict({(0, j, 0): c for j, c in enumerate(_dense_fmpq(s)) if c != 0})
        fams.append(SquareFamily.from_xyl((x - y) * sy, w))
    return fams


def _as_rational_poly(P) -> RationalPoly:
    if isinstance(P, RationalPoly):
        return P
    if isinstance(P, BigPoly):
        return P.to_rational()
    if hasattr(P, "p_realized"):
        return _as_rational_poly(P.p_realized if P.p_realized is not None else P.p_hat)
    raise TypeError("expected a polynomial or a construction result")


def build_R_certificate(source, variant: str = "theorem", precision_bits: int = 512,
                        max_degree: int = 64) -> tuple[BigPoly, SosCertificate]:
    """R and a bounded SoS certificate for it.

    ``variant="theorem"``: R = 0.5(x-y)(1 + 0.25(x-y)^2)(U(x) - U(y)) - 0.00025(x-y)^2 P(x).
    ``variant="symmetric"``: the same with (P(x) + P(y)) in the last term.
    """
    if variant not in ("theorem", "symmetric"):
        raise ValueError("variant must be 'theorem' or 'symmetric'")
    P = _as_rational_poly(source)
    d = P.degree
    if d < 0:
        raise SosError("root pairing", "zero polynomial")
    if d > max_degree:
        raise SosError("gram integration", f"degree {d} exceeds the supported maximum {max_degree}")
    pair_info = {}
    sq = {}
    for sign, label in ((-1, "minus"), (1, "plus")):
        target = 99 * P + sign * P.derivative()
        roots = find_roots(target, precision_bits) if target.degree > 0 else None
        q1, q2 = pair_roots_sos(target, roots, precision_bits)
        sq[label] = [q1, q2]
        if roots is not None:
            pair_info[label] = {"max_root_modulus": float(roots.max_modulus),
                                "min_abs_imag": float(roots.min_abs_imag()),
                                "log10_pairing_bound": float(mpmath.log10(pairing_bound(roots, target.degree)))}
    fams = branch_families(sq["minus"], sq["plus"])
    if variant == "theorem":
        fams += extra_families(sq["minus"], sq["plus"])
    cert = integrate_sos_family(fams, precision_bits=precision_bits)
    U = P.antiderivative()
    exact = build_R(P, U) if variant == "theorem" else build_r_direct(P, U)
    R = BigPoly({k: _frac_to_mpf(v, precision_bits + GUARD_BITS) for k, v in exact.terms.items()},
                precision_bits, vars=2)
    k_theory, d_theory = 6 * d * d, d
    log10_C_theory = None
    if pair_info:
        # 99P +- P' are (2, d/2, C)-bounded with C the pairing bound; the integral is then
        # (6 d^2, d, k 2^(2d) C^2)-bounded with k = 2
        c_pair = max(v["log10_pairing_bound"] for v in pair_info.values())
        log10_C_theory = math.log10(2) + 2 * d * math.log10(2) + 2 * c_pair
    ach = cert.C_bound
    cert.meta.update({
        "variant": variant, "degree_P": d, "k_theory": k_theory, "d_theory": d_theory,
        "log10_C_theory": log10_C_theory,
        "log10_C_achieved": float(mpmath.log10(ach)) if ach > 0 else None,
        "within_square_count": cert.k_count <= k_theory,
        "pairing": pair_info,
    })
    cert.residual_report.update(verify_certificate(R, cert, 100, precision_bits))
    if not cert.residual_report["passed"]:
        raise SosError("verification", f"certificate residuals above tolerance: {cert.residual_report}")
    return R, cert


def verify_certificate(R, cert: SosCertificate, n_points: int = 100, precision_bits: int = 512,
                       seed: int = 0, tolerance=None) -> dict:
    """Dual check of R = sum q_i^2: expanded coefficients and random points in [-2, 2]^2.

    Both residuals are relative: coefficients against the largest coefficient
    of R, points against the sum of absolute term values at that point.
    """
    tol = mpmath.mpf(2) ** (-(precision_bits // 4)) if tolerance is None else mpmath.mpf(tolerance)
    Rx = to_xy(R) if not (isinstance(R, BigPoly) and R.is_zero()) else _XY.from_dict({})
    S = cert.polynomial()
    diff = Rx - S
    rmax = max((abs(Fraction(int(v.p), int(v.q))) for v in Rx.to_dict().values()), default=Fraction(0))
    dmax = max((abs(Fraction(int(v.p), int(v.q))) for v in diff.to_dict().values()), default=Fraction(0))
    if rmax:
        coeff_res = _frac_to_mpf(dmax / rmax)
    else:
        coeff_res = mpmath.mpf(0) if dmax == 0 else mpmath.inf
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2.0, 2.0, size=(n_points, 2))
    Rterms = list(Rx.to_dict().items())
    sq_terms = [list(to_xy(q).to_dict().items()) for q in cert.squares]
    wp = precision_bits + GUARD_BITS
    worst = mpmath.mpf(0)
    with ctx.workprec(wp):
        for xv, yv in pts:
            xa, ya = arb(float(xv)), arb(float(yv))
            rv, scale = arb(0), arb(0)
            for (i, j), c in Rterms:
                t = arb(c) * xa ** i * ya ** j
                rv += t
                scale += abs(t)
            sv = arb(0)
            for terms in sq_terms:
                qv = arb(0)
                for (i, j), c in terms:
                    qv += arb(c) * xa ** i * ya ** j
                sv += qv * qv
            scale = scale if scale > sv else sv
            if scale.is_zero():
                continue
            rel = abs(rv - sv) / scale
            worst = max(worst, _frac_to_mpf(arb_bounds(rel)[1]))
    bounded = [check_bounded(q, cert.d_bound, cert.C_bound).ok for q in cert.squares]
    passed = coeff_res <= tol and worst <= tol and all(bounded)
    return {"max_coeff_residual": coeff_res, "max_point_residual": worst, "points_tested": n_points,
            "tolerance": tol, "all_squares_bounded": all(bounded), "passed": bool(passed)}


# ---------------------------------------------------------------------------
# certificate files


def certificate_to_json(R: BigPoly, cert: SosCertificate, provenance: dict | None = None) -> dict:
    rr = {k: (mpmath.nstr(v, 12) if isinstance(v, mpmath.mpf) else v) for k, v in cert.residual_report.items()}
    return {
        "R": R.to_json(),
        "squares": [q.to_json() for q in cert.squares],
        "k": cert.k_count, "d": cert.d_bound, "C": mpmath.nstr(cert.C_bound, 30),
        "residuals": rr,
        "meta": cert.meta,
        "provenance": provenance or {},
    }


def certificate_from_json(obj: Mapping) -> tuple[BigPoly, SosCertificate]:
    R = BigPoly.from_json(obj["R"])
    squares = [BigPoly.from_json(q) for q in obj["squares"]]
    with mpmath.workprec(128):
        C = mpmath.mpf(obj["C"])
    if len(squares) != int(obj["k"]):
        raise ValueError("square count does not match k")
    return R, SosCertificate(squares, int(obj["k"]), int(obj["d"]), C, dict(obj.get("residuals", {})),
                             dict(obj.get("meta", {})))
