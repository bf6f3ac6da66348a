import numpy as np
import pytest

from psictl.exceptions import ParseError
from psictl.polynomial import Polynomial


def test_parse_single_variable():
    p = Polynomial.parse("x1", 1)
    assert p(np.array([3.0])) == 3.0
    assert p.degree() == 1


def test_parse_matches_hand_expansion():
    p = Polynomial.parse("x2 - x1^2*x2 - x1", 2)
    x1, x2 = 0.7, -1.3
    assert p(np.array([x1, x2])) == pytest.approx(x2 - x1**2 * x2 - x1, abs=1e-15)


def test_parse_coefficients_and_signs():
    p = Polynomial.parse("2*x1 - 3.5*x1*x2 + 0.25", 2)
    assert p(np.array([1.0, 1.0])) == pytest.approx(2 - 3.5 + 0.25)
    assert p(np.array([0.0, 0.0])) == pytest.approx(0.25)


def test_parse_power_without_star():
    p = Polynomial.parse("x1^3", 1)
    assert p(np.array([2.0])) == 8.0


def test_parse_rejects_unknown_token():
    with pytest.raises(ParseError):
        Polynomial.parse("x1 + y", 2)


def test_parse_rejects_out_of_range_variable():
    with pytest.raises(ParseError):
        Polynomial.parse("x3", 2)


def test_zero_and_constant():
    z = Polynomial.zero(2)
    assert z.is_zero()
    c = Polynomial.constant(4.5, 2)
    assert c(np.array([9.0, -9.0])) == 4.5


def test_arithmetic_matches_pointwise(rng):
    p = Polynomial.parse("x1^2 - x2", 2)
    q = Polynomial.parse("3*x1*x2 + 1", 2)
    X = rng.uniform(-2, 2, size=(40, 2))
    for op in (lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b):
        r = op(p, q)
        expect = op(p.eval_batch(X), q.eval_batch(X))
        assert np.allclose(r.eval_batch(X), expect, atol=1e-12)


def test_scalar_multiplication_and_power():
    p = Polynomial.parse("x1 + 1", 1)
    assert ((2.0 * p) ** 2)(np.array([1.0])) == pytest.approx(16.0)


def test_diff():
    p = Polynomial.parse("x1^3*x2 + x2^2", 2)
    dp1 = p.diff(0)
    dp2 = p.diff(1)
    x = np.array([1.5, -0.5])
    assert dp1(x) == pytest.approx(3 * 1.5**2 * -0.5)
    assert dp2(x) == pytest.approx(1.5**3 + 2 * -0.5)


def test_diff_of_constant_is_zero():
    assert Polynomial.constant(3.0, 2).diff(0).is_zero()


def test_with_vars_pads_trailing():
    p = Polynomial.parse("x1*x2", 2)
    q = p.with_vars(3)
    assert q.nvars == 3
    assert q(np.array([2.0, 3.0, 99.0])) == 6.0


def test_eval_batch_shapes(rng):
    p = Polynomial.parse("x1^2 + x2", 2)
    X = rng.normal(size=(17, 2))
    out = p.eval_batch(X)
    assert out.shape == (17,)
    assert out[3] == pytest.approx(X[3, 0] ** 2 + X[3, 1])


def test_call_broadcasts_grids():
    p = Polynomial.parse("x1*x2", 2)
    x = np.linspace(0, 1, 5)[:, None]
    y = np.linspace(0, 2, 7)[None, :]
    vals = p(x, y)
    assert vals.shape == (5, 7)
    assert vals[2, 3] == pytest.approx(x[2, 0] * y[0, 3])


def test_equality_and_allclose():
    p = Polynomial.parse("x1 + 2", 1)
    q = Polynomial.parse("2 + x1", 1)
    assert p == q
    r = p + Polynomial.constant(1e-14, 1)
    assert p.allclose(r, tol=1e-12)
    assert not p.allclose(r, tol=1e-16)


def test_terms_sorted_and_degree():
    p = Polynomial.parse("x1^2*x2 + x1", 2)
    exps = [e for e, _ in p.terms()]
    assert exps == sorted(exps)
    assert p.degree() == 3
    assert p.max_power(0) == 2
