import math
import random
from fractions import Fraction

import mpmath
import numpy as np

from flatexp.chebyshev import (
    ChebCache,
    cheb,
    check_coeff_bound,
    check_markov,
    check_parity,
    hyperbolic_holds,
    magnitude_split_holds,
    nesting_holds,
    trig_deviation,
)
from flatexp.poly_core import RationalPoly


def closed_form(t: int) -> RationalPoly:
    """Phi_t from the explicit sum t/2 sum_k (-1)^k (t-k-1)!/(k!(t-2k)!) (2x)^(t-2k)."""
    if t == 0:
        return RationalPoly([1])
    c = [Fraction(0)] * (t + 1)
    for k in range(t // 2 + 1):
        coef = Fraction(t, 2) * (-1) ** k * Fraction(math.factorial(t - k - 1), math.factorial(k) * math.factorial(t - 2 * k))
        c[t - 2 * k] += coef * 2 ** (t - 2 * k)
    return RationalPoly(c)


def test_small_cases():
    assert cheb(0) == 1
    assert cheb(2) == RationalPoly([-1, 0, 2])
    assert cheb(3) == RationalPoly([0, -3, 0, 4])
    assert cheb(-3) == cheb(3)


def test_recursion_matches_closed_form():
    for t in range(0, 121):
        assert cheb(t) == closed_form(t), t


def test_coefficient_bound_examples():
    assert check_coeff_bound(0) and check_coeff_bound(2)
    assert max(abs(c) for c in cheb(2).coeffs) == 2


def test_coefficient_bound_is_not_vacuous():
    # the largest coefficient of Phi_t grows like (1 + sqrt 2)^t / (something polynomial)
    t = 60
    big = max(abs(c) for c in cheb(t).coeffs)
    assert big > (1 + math.sqrt(2)) ** t / 10 ** 4


def test_parity():
    assert check_parity(2) and check_parity(1) and check_parity(7)
    for t in range(30):
        assert check_parity(t)


def test_markov_examples():
    assert check_markov(1, [-1, 0, 1])
    assert check_markov(2, [1.0])
    assert cheb(2).derivative()(1) == 4
    assert check_markov(10, np.linspace(-1, 1, 1000))


def test_trig_identity_random_points():
    rng = random.Random(5)
    for t in (1, 7, 20, 50):
        for _ in range(20):
            x = rng.uniform(-1, 1)
            assert trig_deviation(t, x) < mpmath.mpf(2) ** -100


def test_hyperbolic_identity():
    rng = random.Random(8)
    for t in (0, 3, 12, 40):
        for _ in range(10):
            assert hyperbolic_holds(t, Fraction(rng.randint(1001, 3000), 1000))


def test_magnitude_split():
    grid = list(np.linspace(-1, 1, 401)) + list(np.linspace(1.0001, 3, 50)) + list(np.linspace(-3, -1.0001, 50))
    for t in (1, 4, 9, 16):
        assert magnitude_split_holds(t, grid)


def test_nesting():
    for m in range(1, 8):
        for n in range(1, 61 // m):
            assert nesting_holds(m, n)


def test_cache_grows_and_reuses_rows():
    cache = ChebCache()
    first = cache.integer_poly(10)
    assert len(cache) == 11
    assert cache.integer_poly(10) is first
    assert cache[5] is cache[5]
