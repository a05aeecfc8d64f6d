import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ahconstraint import geoops as G
from ahconstraint.basis import ShellBasis
from ahconstraint.errors import KindMismatch, WeightOutOfRange
from ahconstraint.fields import (ShellSupport, boost_killing, cosh_distance, random_shell_mode, rotation_killing,
                                 sample)
from ahconstraint.tensor import hyperbolic_connection, tensor_norm_sq
from conftest import ball_points


def _hyp_norm(T, pts, variance):
    g = (2.0 / (1 - np.einsum("pi,pi->p", pts, pts)))[:, None, None] ** 2 * np.eye(3)
    return np.sqrt(np.abs(tensor_norm_sq(T, g, variance)))


def test_T_annihilates_cosh(points):
    conn = hyperbolic_connection(points, 1)
    out = G.op_T(sample(cosh_distance(), points, 2), conn)
    assert _hyp_norm(out.field.value, points, "dd").max() <= 1e-9


@settings(max_examples=10, deadline=None)
@given(axis=st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)))
def test_S_and_U_annihilate_rotations(axis):
    pts = ball_points(3, 12)
    conn = hyperbolic_connection(pts, 2)
    Xj = sample(rotation_killing(axis), pts, 3)
    S = G.op_S(Xj.truncate(2), conn).field.value
    U = G.op_U(Xj, conn).value
    scale = 1.0 + np.linalg.norm(axis)
    assert _hyp_norm(S, pts, "dd").max() <= 1e-9 * scale
    assert _hyp_norm(U, pts, "ddd").max() <= 1e-9 * scale


def test_S_annihilates_boosts(points):
    conn = hyperbolic_connection(points, 1)
    S = G.op_S(sample(boost_killing(), points, 2), conn).field.value
    assert _hyp_norm(S, points, "dd").max() <= 1e-9


def test_U_contraction_is_shifted_laplacian(points):
    rng = np.random.default_rng(1)
    X = random_shell_mode(rng, ShellSupport(0.1, 0.95), (0, 1), full=True)
    conn = hyperbolic_connection(points, 2)
    Xj = sample(X, points, 3)
    lhs = G.u_contraction(G.op_U(Xj, conn), conn).value
    from ahconstraint.tensor import laplacian

    rhs = laplacian(Xj, conn, "d").value - 2.0 * Xj.value
    assert np.allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())


@pytest.mark.parametrize("field", [rotation_killing(), boost_killing(),
                                   random_shell_mode(np.random.default_rng(2), ShellSupport(0.1, 0.95), (0, 1),
                                                     full=True)])
def test_second_derivative_identity(field, points):
    assert G.second_derivative_identity_residual(field, points).sup <= 1e-9


def test_model_operator_kind_checks(points):
    conn = hyperbolic_connection(points, 1)
    with pytest.raises(KindMismatch):
        G.model_operator_apply("A", sample(rotation_killing(), points, 2), conn)
    with pytest.raises(KindMismatch):
        G.model_operator_apply("C", sample(cosh_distance(), points, 2), conn)


def test_model_solve_window():
    f = cosh_distance()
    with pytest.raises(WeightOutOfRange):
        G.model_operator_solve("A", f, 2.5, 4)


@pytest.mark.parametrize("which", ["A", "B"])
def test_manufactured_recovery_small(which):
    basis = ShellBasis(0.25, 0.9, 6, ell_max=1)
    rng = np.random.default_rng(0)
    c = rng.normal(size=basis.size) if which == "A" else rng.normal(size=(3, basis.size))
    u = basis.field(c, (0, 0) if which == "A" else (0, 1))
    res = G.model_operator_solve(which, G.model_operator_field(which, u), 0.5, 6)
    assert np.linalg.norm(res.coeffs - c) <= 1e-8 * np.linalg.norm(c)


def test_isomorphism_constant_finite():
    v = G.isomorphism_constant("A", 0.0, 6)
    assert np.isfinite(v) and v > 0
