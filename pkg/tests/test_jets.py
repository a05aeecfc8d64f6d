import numpy as np
import sympy as sp
from hypothesis import given, settings, strategies as st

from ahconstraint import jets as J
from ahconstraint.fields import RHO as RHO_FIELD, cosh_distance, rho_power, sample, coordinates
from conftest import COORDS, RHO, ball_points, sympy_eval


def _compare_jet(jet, expr, pts, tol=1e-11):
    assert np.allclose(jet.value, sympy_eval(expr, pts), rtol=tol, atol=tol)
    for i, xi in enumerate(COORDS):
        assert np.allclose(jet.derivs[1][:, i], sympy_eval(sp.diff(expr, xi), pts), rtol=tol, atol=tol)
        for j, xj in enumerate(COORDS):
            exact = sympy_eval(sp.diff(expr, xi, xj), pts)
            assert np.allclose(jet.derivs[2][:, i, j], exact, rtol=tol, atol=tol)


def test_rho_power_against_sympy(points):
    for p in (-2.0, -1.0, 0.5, 3.0):
        _compare_jet(sample(rho_power(p), points, 2), RHO ** sp.nsimplify(p), points)


def test_cosh_distance_against_sympy(points):
    expr = (1 + COORDS[0] ** 2 + COORDS[1] ** 2 + COORDS[2] ** 2) / (1 - COORDS[0] ** 2 - COORDS[1] ** 2 - COORDS[2] ** 2)
    _compare_jet(sample(cosh_distance(), points, 2), expr, points)


def test_elementary_functions_against_sympy(points):
    Xj = coordinates(points, 2)
    x0, x1 = Xj.take(0), Xj.take(1)
    jet = J.exp(x0 * 0.7) * J.sqrt(x1 * x1 + 1.0) + J.log(RHO_FIELD(Xj))
    expr = sp.exp(sp.Rational(7, 10) * COORDS[0]) * sp.sqrt(COORDS[1] ** 2 + 1) + sp.log(RHO)
    _compare_jet(jet, expr, points)


def test_matrix_inverse_and_determinant(points):
    Xj = coordinates(points, 2)
    r = RHO_FIELD(Xj)
    m = J.Jet.constant(np.eye(3), len(points), 2)
    a = J.scale(r, m) + J.outer(Xj, Xj)
    inv = J.inv(a)
    prod = J.contract("ij,jk->ik", a, inv)
    assert np.allclose(prod.value, np.eye(3), atol=1e-12)
    for k in (1, 2):
        assert np.allclose(prod.derivs[k], 0.0, atol=1e-10)
    sym = sp.Matrix(3, 3, lambda i, j: RHO * (1 if i == j else 0) + COORDS[i] * COORDS[j])
    _compare_jet(J.det(a), sp.simplify(sym.det()), points)


@settings(max_examples=25, deadline=None)
@given(p=st.floats(-3, 3), q=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_leibniz_rule(p, q, seed):
    """Jets of a product agree with the product of jets: rho^p * rho^q = rho^(p+q)."""
    pts = ball_points(seed, 6)
    a = sample(rho_power(p), pts, 2)
    b = sample(rho_power(q), pts, 2)
    c = sample(rho_power(p + q), pts, 2)
    for k in range(3):
        assert np.allclose((a * b).derivs[k], c.derivs[k], rtol=1e-9, atol=1e-9)


def test_finite_differences_second_order():
    pts = ball_points(1, 10)
    f = rho_power(-2.0)
    exact = sample(f, pts, 2)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        fd = sample(f, pts, 2, fd_step=h)
        errs.append(max(np.abs(fd.derivs[k] - exact.derivs[k]).max() for k in (1, 2)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)
