import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wentzell.jetexpr import (
    EvaluationError,
    ExprSyntaxError,
    Jet,
    PiecewiseExpr,
    eval_jet,
    multi_indices,
    parse,
)

# mpmath central differences (step 1e-4, 50 digits), see scripts/oracle_jets.py
SIN_PRODUCT_FD = {
    (0, 0): -0.20845989984609957,
    (1, 0): -0.29340927437323308,
    (0, 1): 0.6846216397477961,
    (2, 0): 0.018761390980520544,
    (1, 1): 0.93425433296249503,
    (0, 2): 0.10214535075775138,
    (3, 0): 0.026406834685668927,
    (2, 1): -0.18669189393121137,
    (1, 2): 0.43561440584200474,
    (0, 3): -0.33546460292849457,
}


def test_parse_valid():
    e = parse("x1*x2 + sin(t)", 2)
    assert e.dim == 2 and e.time_dependent
    np.testing.assert_allclose(e(np.array([2.0, 3.0]), t=0.5), 6 + math.sin(0.5))


def test_parse_variable_out_of_range():
    with pytest.raises(ExprSyntaxError, match="out of range"):
        parse("x3", 2)


def test_parse_rational():
    e = parse("1/(1+x1^2)", 1)
    xs = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_allclose(e(xs), 1 / (1 + xs[:, 0] ** 2))


@pytest.mark.parametrize(
    "src,pos",
    [("x1 +", 4), ("foo(x1)", 0), ("x1 ^ 1.5", 5), ("(x1", 3), ("x1 $ 2", 3), ("x1 x2", 3)],
)
def test_parse_errors_carry_position(src, pos):
    with pytest.raises(ExprSyntaxError) as err:
        parse(src, 2)
    assert err.value.pos == pos


def test_parse_empty():
    with pytest.raises(ExprSyntaxError):
        parse("  ", 1)


def test_precedence_and_associativity():
    x = np.array([[2.0]])
    assert parse("8/2/2", 1)(x)[0] == 2.0
    assert parse("5-2-1", 1)(x)[0] == 2.0
    assert parse("2*x1^2", 1)(x)[0] == 8.0
    assert parse("-x1^2", 1)(x)[0] == -4.0
    assert parse("x1^-1", 1)(x)[0] == 0.5


def test_jet_polynomial():
    j = eval_jet(parse("x1^2", 1), [3.0], 0.0, 2)
    np.testing.assert_array_equal(j.derivatives(), [9.0, 6.0, 2.0])


def test_jet_exp_at_zero():
    j = eval_jet(parse("exp(x1)", 1), [0.0], 0.0, 3)
    np.testing.assert_allclose(j.derivatives(), np.ones(4), rtol=1e-15)


def test_jet_sin_product_matches_fd_oracle():
    j = eval_jet(parse("sin(x1*x2)", 2), [0.7, -0.3], 0.0, 3)
    for alpha, ref in SIN_PRODUCT_FD.items():
        assert j[alpha] == pytest.approx(ref, rel=1e-6)


def test_table_size_and_order_zero():
    for d in (1, 2, 3):
        for k in range(5):
            assert len(multi_indices(d, k)) == math.comb(d + k, k)
    e = parse("exp(x1)*cos(x2) + tanh(x3)/sqrt(2+x1^2)", 3)
    p = np.array([0.1, -0.4, 0.9])
    j = eval_jet(e, p, 0.0, 4)
    assert len(j) == math.comb(7, 4)
    assert j.value == pytest.approx(e(p))


def test_evaluation_errors():
    with pytest.raises(EvaluationError):
        eval_jet(parse("1/x1", 1), [0.0], 0.0, 2)
    with pytest.raises(EvaluationError):
        eval_jet(parse("sqrt(x1)", 1), [-1.0], 0.0, 1)
    with pytest.raises(EvaluationError):
        parse("sqrt(x1 - 2)", 1)(np.array([1.0]))


def test_batched_jets_match_pointwise():
    e = parse("sin(x1)*exp(x2) - x1^3*x2", 2)
    pts = np.random.default_rng(0).normal(size=(5, 2))
    batch = e.jet(pts, 0.0, 3).derivatives()
    for i, p in enumerate(pts):
        np.testing.assert_allclose(batch[:, i], e.jet(p, 0.0, 3).derivatives(), rtol=1e-14)


def test_diff_shift():
    e = parse("x1^3*x2^2", 2)
    j = e.jet([1.5, -2.0], 0.0, 4).diff(0)
    ref = parse("3*x1^2*x2^2", 2).jet([1.5, -2.0], 0.0, 3)
    np.testing.assert_allclose(j.derivatives(), ref.derivatives(), rtol=1e-13)


def test_piecewise_in_time():
    pw = PiecewiseExpr([(0.0, 0.5, parse("x1", 1)), (0.5, 1.0, parse("2*x1", 1))])
    x = np.array([3.0])
    assert pw(x, 0.2) == 3.0
    assert pw(x, 0.5) == 6.0
    assert pw(x, 1.0) == 6.0
    with pytest.raises(ValueError):
        pw(x, 1.5)


# randomized corpus -----------------------------------------------------

_LEAVES = ["x1", "x2", "0.7", "1.3", "t"]


@st.composite
def smooth_exprs(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        return draw(st.sampled_from(_LEAVES))
    kind = draw(st.sampled_from(["+", "-", "*", "sin", "cos", "exp", "tanh", "sqrt", "pow", "div"]))
    a = draw(smooth_exprs(depth - 1))
    if kind in ("sin", "cos", "tanh"):
        return f"{kind}({a})"
    if kind == "exp":
        return f"exp(0.3*{a})"
    if kind == "sqrt":
        return f"sqrt(1.5+sin({a}))"
    if kind == "pow":
        return f"({a})^{draw(st.integers(0, 3))}"
    b = draw(smooth_exprs(depth - 1))
    if kind == "div":
        return f"({a})/(2+cos({b}))"
    return f"({a}){kind}({b})"


points = st.tuples(st.floats(-1, 1), st.floats(-1, 1))


def _fd_grad_hess(e, p, h=1e-4):
    p = np.asarray(p, dtype=float)
    grad = np.zeros(2)
    hess = np.zeros((2, 2))
    for i in range(2):
        ei = np.eye(2)[i] * h
        grad[i] = (e(p + ei, 0.4) - e(p - ei, 0.4)) / (2 * h)
        for j in range(2):
            ej = np.eye(2)[j] * h
            hess[i, j] = (
                e(p + ei + ej, 0.4) - e(p + ei - ej, 0.4) - e(p - ei + ej, 0.4) + e(p - ei - ej, 0.4)
            ) / (4 * h * h)
    return grad, hess


@settings(max_examples=60, deadline=None)
@given(smooth_exprs(), points)
def test_jets_agree_with_finite_differences(src, p):
    e = parse(src, 2)
    j = e.jet(np.array(p), 0.4, 2)
    grad, hess = _fd_grad_hess(e, p)
    scale = 1 + abs(j.value)
    np.testing.assert_allclose([j[(1, 0)], j[(0, 1)]], grad, rtol=1e-6, atol=1e-6 * scale)
    # second differences lose ~eps/h^2 to roundoff
    jh = np.array([[j[(2, 0)], j[(1, 1)]], [j[(1, 1)], j[(0, 2)]]])
    np.testing.assert_allclose(jh, hess, rtol=1e-6, atol=1e-6 * scale + 1e-7 * np.abs(hess).max())


@settings(max_examples=60, deadline=None)
@given(smooth_exprs(), smooth_exprs(), st.floats(-3, 3), st.floats(-3, 3), points)
def test_linearity(f_src, g_src, a, b, p):
    f, g = parse(f_src, 2), parse(g_src, 2)
    comb = parse(f"({a})*({f_src}) + ({b})*({g_src})", 2)
    lhs = comb.jet(np.array(p), 0.4, 3).derivatives()
    rhs = a * f.jet(np.array(p), 0.4, 3).derivatives() + b * g.jet(np.array(p), 0.4, 3).derivatives()
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13 * (1 + np.abs(rhs).max()))


@settings(max_examples=60, deadline=None)
@given(smooth_exprs(), smooth_exprs(), points)
def test_leibniz(f_src, g_src, p):
    f, g = parse(f_src, 2), parse(g_src, 2)
    prod = parse(f"({f_src})*({g_src})", 2).jet(np.array(p), 0.4, 4)
    ref = f.jet(np.array(p), 0.4, 4) * g.jet(np.array(p), 0.4, 4)
    np.testing.assert_allclose(
        prod.derivatives(), ref.derivatives(), rtol=1e-12, atol=1e-12 * (1 + np.abs(ref.coeffs).max())
    )


def test_leibniz_against_explicit_sum():
    # D^gamma (fg) = sum_beta binom(gamma, beta) D^beta f D^(gamma-beta) g
    f = parse("sin(x1)*x2", 2).jet([0.3, 0.8], 0.0, 3)
    g = parse("exp(x1*x2)", 2).jet([0.3, 0.8], 0.0, 3)
    fg = f * g
    for gamma in multi_indices(2, 3):
        total = 0.0
        for b1 in range(gamma[0] + 1):
            for b2 in range(gamma[1] + 1):
                c = math.comb(gamma[0], b1) * math.comb(gamma[1], b2)
                total += c * f[(b1, b2)] * g[(gamma[0] - b1, gamma[1] - b2)]
        assert fg[gamma] == pytest.approx(total, rel=1e-12)


def test_jet_constant_roundtrip():
    j = Jet.constant(2, 3, 5.0)
    assert j.value == 5.0
    assert np.all(j.derivatives()[1:] == 0)
