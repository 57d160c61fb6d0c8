from fractions import Fraction

import mpmath
from hypothesis import given, settings, strategies as st

from flatexp.flat_approx import binom_weights
from flatexp.poly_core import BigPoly, EvalContext, RationalPoly, compose, evaluate, mul

fractions = st.fractions(min_value=-50, max_value=50, max_denominator=64)
polys = st.lists(fractions, min_size=0, max_size=12).map(RationalPoly)
points = st.fractions(min_value=-3, max_value=3, max_denominator=1000)


def horner(coeffs, x):
    acc = Fraction(0)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def naive_mul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1) if a and b else []
    for i, u in enumerate(a):
        for j, v in enumerate(b):
            out[i + j] += u * v
    return out


@given(polys, polys)
def test_mul_matches_convolution(a, b):
    assert mul(a, b) == RationalPoly(naive_mul(list(a.coeffs), list(b.coeffs)))


@given(polys, polys, points)
def test_compose_is_substitution(a, b, x):
    assert horner(list(compose(a, b).coeffs), x) == horner(list(a.coeffs), horner(list(b.coeffs), x))


@given(polys)
def test_derivative_of_antiderivative(p):
    assert p.antiderivative().derivative() == p
    assert p.antiderivative()(0) == 0


@given(polys, points)
def test_exact_evaluation_matches_horner(p, x):
    assert p(x) == horner(list(p.coeffs), x)


@settings(max_examples=60)
@given(polys, points, st.sampled_from([64, 128, 256]))
def test_interval_evaluation_encloses_exact_value(p, x, prec):
    assert evaluate(p, x, EvalContext(prec, "outward-interval")).contains(horner(list(p.coeffs), x))


@settings(max_examples=60)
@given(polys, points)
def test_bigpoly_ball_encloses_exact_value(p, x):
    ball = BigPoly.from_rational(p, 128).enclose(x, 128)
    with mpmath.workprec(200):
        exact = mpmath.mpf(horner(list(p.coeffs), x).numerator) / horner(list(p.coeffs), x).denominator
        # the BigPoly coefficients are rounded to 128 bits; allow that much relative slack
        slack = sum(abs(mpmath.mpf(c.numerator) / c.denominator) for c in p.coeffs) * 3 ** len(p.coeffs) * \
            mpmath.mpf(2) ** -120
        mid = mpmath.mpf(ball.mid().str(60, radius=False)) if ball.rad() < 1 else exact
        assert abs(mid - exact) <= slack + mpmath.mpf(ball.rad().str(10, radius=False))


@given(st.integers(min_value=0, max_value=80))
def test_binom_weights_are_the_random_walk_law(s):
    # independent oracle: convolve s fair steps
    law = {0: Fraction(1)}
    for _ in range(s):
        nxt = {}
        for t, w in law.items():
            nxt[t - 1] = nxt.get(t - 1, 0) + w / 2
            nxt[t + 1] = nxt.get(t + 1, 0) + w / 2
        law = nxt
    assert binom_weights(s) == law
    assert sum(binom_weights(s).values()) == 1
