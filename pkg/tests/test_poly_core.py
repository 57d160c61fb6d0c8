import math
import random
from fractions import Fraction

import mpmath
import pytest

from flatexp.poly_core import (
    BigPoly,
    EvalContext,
    RationalMPoly,
    RationalPoly,
    ZERO_DEGREE,
    add,
    antiderivative,
    bivar_add,
    bivar_eval,
    bivar_mul,
    compose,
    derivative,
    evaluate,
    integrate_in_lambda,
    mpf_hex,
    mul,
    parse_hex,
    shift,
    truncate,
    working_precision,
)
from flatexp.chebyshev import cheb
from flatexp.flat_approx import build_E

X = RationalPoly.x()


def rp(*cs):
    return RationalPoly(cs)


def test_add_examples():
    assert add(rp(1, -1), X) == 1
    p = rp(3, 0, Fraction(1, 7))
    assert add(RationalPoly(), p) == p
    z = add(rp(0, 0, 1), rp(0, 0, -1))
    assert z.is_zero() and z.degree == ZERO_DEGREE


def test_mul_examples():
    assert mul(rp(1, 1), rp(-1, 1)) == rp(-1, 0, 1)
    p = rp(2, -5, 9)
    assert mul(rp(1), p) == p
    assert mul(rp(-1, 0, 2), rp(-1, 0, 2)) == rp(1, 0, -4, 0, 4)


def test_compose_examples():
    assert compose(rp(0, 0, 1), rp(1, 1)) == rp(1, 2, 1)
    assert compose(cheb(2), X) == cheb(2)
    assert compose(cheb(2), cheb(2)) == rp(1, 0, -8, 0, 8)


def test_derivative_examples():
    assert derivative(rp(0, 0, 0, 1)) == rp(0, 0, 3)
    assert derivative(rp(7)).is_zero()
    for ell in (1, 2, 5, 12):
        assert derivative(build_E(ell)) == -build_E(ell - 1)


def test_antiderivative_examples():
    assert antiderivative(rp(1)) == X
    assert antiderivative(rp(0, 0, 3)) == rp(0, 0, 0, 1)
    assert antiderivative(build_E(2)) == rp(0, 1, Fraction(-1, 2), Fraction(1, 6))


def test_truncate_examples():
    assert truncate(build_E(2), 1) == rp(1, -1)
    assert truncate(build_E(4), 0) == 1
    with pytest.raises(ValueError):
        truncate(X, -1)


def test_shift_examples():
    q = shift(rp(0, 0, 1), 1)
    assert q.to_rational() == rp(1, 2, 1)
    p = rp(Fraction(1, 3), -2, Fraction(5, 7))
    z = shift(p, 0, EvalContext(256))
    assert all(abs(a - b) <= mpmath.mpf(2) ** -250 for a, b in zip(z.coeffs, BigPoly.from_rational(p, 256).coeffs))


def test_shift_by_ln2_matches_independent_constant():
    with mpmath.workprec(300):
        ln2 = mpmath.log(2)
    q = shift(X, ln2, EvalContext(256))
    with mpmath.workprec(256):
        # independent series: ln 2 = sum 1/(k 2^k)
        series = mpmath.nsum(lambda k: 1 / (k * mpmath.mpf(2) ** k), [1, mpmath.inf])
        assert abs(q.coeffs[0] - series) < mpmath.mpf(2) ** -240
    assert q.coeffs[1] == 1


def test_shift_inverse():
    rng = random.Random(3)
    p = RationalPoly([Fraction(rng.randint(-50, 50), rng.randint(1, 20)) for _ in range(15)])
    c = mpmath.mpf("0.8125")
    back = shift(shift(p, c, EvalContext(256)), -c, EvalContext(256))
    ref = BigPoly.from_rational(p, 256)
    scale = max(abs(v) for v in ref.coeffs)
    assert max(abs(a - b) for a, b in zip(back.coeffs, ref.coeffs)) <= scale * mpmath.mpf(2) ** -128


def test_eval_examples():
    assert evaluate(build_E(2), 2) == 1
    p = rp(Fraction(-3, 11), 4, 9)
    assert evaluate(p, 0) == Fraction(-3, 11)
    enc = evaluate(cheb(10), Fraction(3, 10), EvalContext(256, "outward-interval"))
    with mpmath.workprec(256):
        ref = mpmath.cos(10 * mpmath.acos(mpmath.mpf(3) / 10))
        lo = mpmath.mpf(enc.lo.numerator) / enc.lo.denominator
        hi = mpmath.mpf(enc.hi.numerator) / enc.hi.denominator
        assert lo - mpmath.mpf(2) ** -240 <= ref <= hi + mpmath.mpf(2) ** -240
    # Phi_10(0.3) = 0.9955225088 exactly (a positive value near 1)
    assert cheb(10)(Fraction(3, 10)) == Fraction(9955225088, 10 ** 10)
    assert enc.contains(cheb(10)(Fraction(3, 10)))
    assert enc.width < Fraction(1, 2 ** 200)


def test_eval_nearest_mode_is_rounded_exact_value():
    p = rp(Fraction(1, 3), Fraction(2, 7))
    v = evaluate(p, Fraction(1, 5), EvalContext(128))
    with mpmath.workprec(128):
        assert v == mpmath.mpf(1) / 3 + mpmath.mpf(2) / 35


def test_interval_soundness():
    rng = random.Random(11)
    p = RationalPoly([Fraction(rng.randint(-99, 99), rng.randint(1, 30)) for _ in range(25)])
    cx = EvalContext(96, "outward-interval")
    for _ in range(1000):
        x = Fraction(rng.randint(-3000, 3000), 1000)
        assert evaluate(p, x, cx).contains(p(x))


def test_bivariate_examples():
    x = BigPoly({(1, 0): 1}, 128, vars=2)
    y = BigPoly({(0, 1): 1}, 128, vars=2)
    diff = bivar_add(x, -y)
    assert bivar_mul(diff, bivar_add(x, y)).terms() == {(2, 0): 1, (0, 2): -1}
    assert bivar_mul(diff, diff).terms() == {(2, 0): 1, (1, 1): -2, (0, 2): 1}
    p = BigPoly({(2, 0): 3, (1, 1): -1, (0, 1): 2}, 128, vars=2)
    diag = bivar_eval(p)
    assert list(diag.coeffs) == [0, 2, 2]
    assert bivar_eval(p, 2, 5) == 12 - 10 + 10


def test_integrate_in_lambda_examples():
    lam = RationalMPoly.var(3, 2)
    x, y = RationalMPoly.var(3, 0), RationalMPoly.var(3, 1)
    assert integrate_in_lambda(lam) == Fraction(1, 2)
    assert integrate_in_lambda(2 - lam) == Fraction(3, 2)
    u = x - y
    got = integrate_in_lambda(u * u * lam * lam)
    X2, Y2 = RationalMPoly.var(2, 0), RationalMPoly.var(2, 1)
    assert got == (X2 - Y2) ** 2 * Fraction(1, 3)


def test_json_round_trips():
    p = rp(Fraction(-1, 3), 0, Fraction(22, 7))
    assert RationalPoly.from_json(p.to_json()) == p
    with mpmath.workprec(400):
        b = BigPoly([mpmath.pi, -mpmath.e, mpmath.mpf(2) ** -300], 400)
    back = BigPoly.from_json(b.to_json())
    assert back.coeffs == b.coeffs and back.precision_bits == 400
    m = RationalMPoly(2, {(1, 0): Fraction(1, 2), (0, 3): -7})
    assert RationalMPoly.from_json(m.to_json()) == m
    bv = BigPoly({(2, 1): mpmath.mpf(3), (0, 0): mpmath.mpf(-1) / 3}, 128, vars=2)
    assert BigPoly.from_json(bv.to_json()).coeffs == bv.coeffs


def test_hex_is_lossless_above_double_precision():
    with mpmath.workprec(1000):
        v = mpmath.sqrt(2)
    # parsed at the ambient 53-bit context, still exact
    assert parse_hex(mpf_hex(v)) == v
    assert parse_hex("-0x1.8p+1") == -3
    with pytest.raises(ValueError):
        parse_hex("0x1.zp3")


def test_working_precision_formula():
    assert working_precision(10, 3, 1.0) == 256
    assert working_precision(4000, 400, 100.0) == 4000 + 400 * math.ceil(math.log2(101)) + 64


def test_immutable():
    with pytest.raises(AttributeError):
        X.foo = 1
