import math
import warnings
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from flatexp import flat_approx as fa
from flatexp.chebyshev import cheb
from flatexp.poly_core import RationalPoly, compose

X = RationalPoly.x()
COARSE = fa.GridSpec(window_points=256, per_decade=32)


def test_build_E_examples():
    assert fa.build_E(2) == RationalPoly([1, -1, Fraction(1, 2)])
    assert fa.build_E(0) == 1
    for ell in range(1, 15):
        assert fa.build_E(ell) - fa.build_E(ell - 1) == RationalPoly.monomial(ell, Fraction((-1) ** ell, math.factorial(ell)))


def test_binom_weights():
    assert fa.binom_weights(2) == {-2: Fraction(1, 4), 0: Fraction(1, 2), 2: Fraction(1, 4)}
    assert fa.binom_weights(4) == {-4: Fraction(1, 16), -2: Fraction(4, 16), 0: Fraction(6, 16),
                                   2: Fraction(4, 16), 4: Fraction(1, 16)}
    for s in (6, 30, 101):
        w = fa.binom_weights(s)
        assert sum(w.values()) == 1
        assert all(w[t] == w[-t] for t in w)


def test_build_G_examples():
    assert fa.build_G(2, 2) == RationalPoly([0, 0, 1])
    assert fa.build_G(0, 2) == Fraction(1, 2)
    assert fa.build_G(4, 4) == RationalPoly.monomial(4)
    with pytest.raises(fa.ParameterError):
        fa.build_G(6, 4)


def test_build_G_matches_weighted_chebyshev_sum():
    # independent route: the weighted sum of Chebyshev polynomials over |t| <= r
    r, s = 6, 10
    w = fa.binom_weights(s)
    ref = RationalPoly([])
    for t, p in w.items():
        if abs(t) <= r:
            ref = ref + cheb(abs(t)) * p
    assert fa.build_G(r, s) == ref


def test_build_G_parity_and_value_at_one():
    for r, s in ((2, 8), (4, 12), (10, 10)):
        G = fa.build_G(r, s)
        assert all(c == 0 for j, c in enumerate(G.coeffs) if j % 2)
        assert G(1) == sum(v for t, v in fa.binom_weights(s).items() if abs(t) <= r)
        assert G(1) <= 1


def test_build_Q_small_instance():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 1024), ell=2, s=2, r=2, k=4)
    E = fa.build_E(2).scale_arg(Fraction(1, 2))
    assert fa.build_Q(p) == E * E
    assert fa.build_Q(p)(0) == fa.build_G(2, 2)(1)


def test_build_Q_matches_composition():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 1024), ell=6, s=40, r=8, k=48)
    ref = compose(fa.build_G(8, 40), fa.build_E(6).scale_arg(Fraction(1, 40)))
    assert fa.build_Q(p) == ref
    assert fa.build_Q(p).degree == 48


def test_build_Phat_structure():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 2 ** 20), ell=4, s=40, r=4, k=12)
    res = fa.build_Phat(p)
    ph = res.p_hat
    assert ph.degree == p.k + 2
    assert ph.leading == Fraction(1, (2 * p.s) ** (p.k + 2))
    d = p.delta
    assert ph(0) == (1 - d / 5) * res.q_full.truncate(p.k)(0) + d / 10
    # Err is exactly the dropped part of Q
    assert res.err == res.q_full - res.q_full.truncate(p.k)
    assert not res.err.is_zero()


def test_build_Phat_refuses_above_cap():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 1024), ell=4, s=400, r=100, k=400)
    with pytest.raises(fa.ParameterError):
        fa.build_Phat(p, cap=100)


def test_select_params_examples():
    ints = fa.reference_parameters(1, "e^-10")
    assert ints["ell"] == 20
    assert ints["s"] == 2 * 10 ** 8 and ints["r"] == 2 * 10 ** 5 and ints["k"] == 2 * 10 ** 7
    with pytest.warns(UserWarning):
        p = fa.select_params(1, "e^-5", (1, 1, 1, 1))
    assert (p.ell, p.s, p.r, p.k) == (10, 10, 10, 10)
    assert p.degree == 12
    with pytest.raises(fa.ParameterError):
        fa.select_params(Fraction(1, 2), "e^-5", (1, 1, 1, 1))


def test_select_params_uses_rigorous_ceiling():
    # log(2/2^-10) = 11 ln 2 = 7.62..., so ell = 2 ceil(7.62) = 16
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = fa.select_params(2, "2^-10", (1, 1, 1, 1))
    assert p.ell == 16
    assert p.r == 2 * math.ceil(2 * 11 * math.log(2))


def test_parse_delta():
    d, lg = fa.parse_delta("e^-10")
    assert lg == 10 and d == Fraction(1, 2 ** 15)
    assert d <= math.exp(-10) < 2 * d
    assert fa.parse_delta("2^-20") == (Fraction(1, 2 ** 20), None)
    assert fa.parse_delta("0.001") == (Fraction(1, 1000), None)


@pytest.mark.parametrize("field,value", [("ell", 3), ("s", 7), ("r", 0), ("k", -2)])
def test_odd_or_nonpositive_integers_rejected(field, value):
    kw = dict(beta=1, delta=Fraction(1, 1024), ell=4, s=40, r=4, k=12)
    kw[field] = value
    with pytest.raises(fa.ParameterError, match="even"):
        fa.FlatParams(**kw)


def test_params_invariants():
    with pytest.raises(fa.ParameterError):
        fa.FlatParams(beta=1, delta=Fraction(1, 1024), ell=4, s=4, r=6, k=12)
    with pytest.raises(fa.ParameterError):
        fa.FlatParams(beta=1, delta=Fraction(1, 1024), ell=4, s=40, r=8, k=6)
    with pytest.raises(fa.ParameterError):
        fa.FlatParams(beta=1, delta=Fraction(3, 2), ell=4, s=40, r=8, k=8)


def test_params_json_round_trip(desk):
    p = desk.params
    assert fa.FlatParams.from_json(p.to_json()) == p


def test_realize_at_kappa_zero():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 2 ** 20), ell=4, s=40, r=4, k=12, eps=1)
    res = fa.build_Phat(p)
    P = fa.realize_P(res, 256)
    ref = res.p_hat * (1 - p.delta)
    assert P.to_rational() == ref or all(
        abs(a - b) <= abs(b) * Fraction(1, 2 ** 240) for a, b in zip(P.to_rational().coeffs, ref.coeffs))


def test_realize_rejects_inconsistent_delta():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 10), ell=4, s=40, r=4, k=12, eps=Fraction(1, 100))
    with pytest.raises(fa.ParameterError):
        fa.realize_P(fa.build_Phat(p), 256)


def test_realized_definition_unwinds(desk):
    P, ph, params = desk.p_realized, desk.p_hat, desk.params
    kappa, scale = fa.realization_constants(params, 512)
    with mpmath.workprec(512):
        s = mpmath.mpf(scale.mid().str(160, radius=False))
        for x0 in (Fraction(1, 3), Fraction(5), Fraction(-7, 2)):
            xm = mpmath.mpf(x0.numerator) / x0.denominator
            lhs = P(xm - kappa)
            rhs = s * (mpmath.mpf(ph(x0).numerator) / ph(x0).denominator)
            assert abs(lhs - rhs) <= abs(rhs) * mpmath.mpf(2) ** -400
        assert abs(P(mpmath.mpf(0)) - 1) <= float(params.eps)


def test_verify_flat_examples(desk):
    params = desk.params
    kappa = params.kappa_at(512)
    rep = fa.verify_flat(desk.p_realized, kappa, Fraction(1, 2), params.eps, COARSE,
                         reach=10 * float(kappa), beta=params.beta)
    assert rep.passed, [(r.name, r.worst_margin) for r in rep.records]
    win = rep["window_accuracy"]
    xs = [s[0] for s in win.samples]
    assert min(xs) == pytest.approx(-float(kappa)) and max(xs) == pytest.approx(float(kappa))
    assert 0.0 in [s[0] for s in rep["right_growth"].samples]


def test_verify_thm_approx_coarse(desk):
    rep = fa.verify_thm_approx(desk, COARSE, certify_roots=False)
    assert rep.passed, [(r.name, r.worst_margin) for r in rep.records]
    assert set(rep.names()) >= {"property_1_accuracy", "property_2_right_growth", "property_3_left_growth",
                              "property_4_derivative_ratio", "property_5_leading_and_roots"}


def test_under_parameterized_instance_fails_property_1():
    d = fa.desk_params()
    p = fa.FlatParams(beta=d.beta, delta=d.delta, ell=d.ell, s=d.s, r=d.r, k=d.r, eps=d.eps)
    rec = fa.check_property_1(fa.build_Phat(p).p_hat, p, COARSE)
    assert not rec.passed
    assert rec.worst_x > 0


def test_doubling_ell_does_not_worsen_property_1(desk):
    base = fa.check_property_1(desk.p_hat, desk.params, COARSE).worst_margin
    p = desk.params
    q = fa.FlatParams(beta=p.beta, delta=p.delta, ell=2 * p.ell, s=p.s, r=p.r, k=p.k, eps=p.eps)
    assert fa.check_property_1(fa.build_Phat(q).p_hat, q, COARSE).worst_margin >= base


def test_E_bounds_examples():
    E2, E4 = fa.build_E(2), fa.build_E(4)
    assert E2(0) == 1
    assert E2(1) == Fraction(1, 2)
    assert abs(0.5 - math.exp(-1)) <= 0.5
    assert E4(-3) == Fraction(131, 8)
    assert E4(-3) <= math.exp(3)
    rep = fa.check_E_bounds(4)
    assert rep.passed
    assert len(rep.records) == 5


def test_E_bounds_catch_odd_minimum():
    # E_3 is unbounded below, so the lower bound is only claimed for even l
    rep = fa.check_E_bounds(3)
    assert "lower_min_one_exp" not in rep.names()


def test_truncation_bounds_nonvacuous():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 2 ** 20), ell=100, s=20, r=2, k=180)
    res = fa.build_Phat(p)
    assert not res.err.is_zero()
    rep = fa.check_truncation_error(res, COARSE)
    assert rep.passed, [(r.name, r.worst_margin) for r in rep.records]


def test_truncation_check_detects_aggressive_truncation():
    p = fa.FlatParams(beta=1, delta=Fraction(1, 2 ** 20), ell=100, s=20, r=2, k=2)
    rep = fa.check_truncation_error(fa.build_Phat(p), COARSE)
    assert not rep["err_inner"].passed
    assert rep["coefficient_bound"].passed


def test_G_bounds():
    assert fa.build_G(6, 6) - RationalPoly.monomial(6) == 0
    G = fa.build_G(2, 4)
    v = G(Fraction(3, 2))
    assert 0 <= v <= min(Fraction(3, 2) ** 4, 3 ** 2)
    rep = fa.check_G_bounds(10, 40)
    assert rep.passed, [(r.name, r.worst_margin) for r in rep.records]


def test_baseline_product_degrees():
    poly, ells = fa.baseline_product(1, Fraction(1, 1000))
    assert ells == [2 * math.ceil(2 * math.log(1000))] and poly.degree == 28
    poly, ells = fa.baseline_product(2, Fraction(1, 1000))
    assert ells == [28, 56] and poly.degree == 84
    with pytest.raises(fa.ParameterError):
        fa.baseline_product(Fraction(3, 2), Fraction(1, 1000))


def test_grid_spec_parse():
    g = fa.GridSpec.parse("window=64,decade=8,start=0.1,reach=2")
    assert (g.window_points, g.per_decade, g.log_start, g.reach) == (64, 8, 0.1, 2.0)
    assert fa.GridSpec.parse(g.describe()) == g
    for bad in ("", "  ", "window=1", "depth=3", "window="):
        with pytest.raises(ValueError):
            fa.GridSpec.parse(bad)
    logs = g.log(100.0)
    assert logs[0] == pytest.approx(0.1) and logs[-1] == pytest.approx(100.0)
    assert np.all(np.diff(logs) > 0)


def test_report_json_and_csv(desk):
    rep = fa.verify_thm_approx(desk, fa.GridSpec(window_points=16, per_decade=4), certify_roots=False)
    js = rep.to_json()
    assert js["passed"] == rep.passed
    rows = rep.csv_rows()
    assert rows and all(len(r) == 5 for r in rows)
