import numpy as np
import pytest
import sympy as sp

from ahconstraint.fields import HYPERBOLIC_METRIC, sample
from ahconstraint.manifold import build_ball_chart
from ahconstraint.tensor import CONFORMAL_IDENTITIES, christoffel, conformal_identity_residual, curvature
from ahconstraint.verify import convergence_study
from conftest import COORDS, RHO, sympy_eval


def test_christoffel_against_sympy(points):
    g = sp.eye(3) / RHO**2
    ginv = g.inv()
    conn = christoffel(sample(HYPERBOLIC_METRIC, points, 1))
    for k in range(3):
        for i in range(3):
            for j in range(3):
                expr = sum(ginv[k, l] * (sp.diff(g[l, i], COORDS[j]) + sp.diff(g[l, j], COORDS[i])
                                         - sp.diff(g[i, j], COORDS[l])) for l in range(3)) / 2
                assert np.allclose(conn.gamma.value[:, k, i, j], sympy_eval(sp.simplify(expr), points), atol=1e-10)


def test_scalar_curvature_is_minus_six(points):
    R = curvature(sample(HYPERBOLIC_METRIC, points, 2)).scalar.value
    assert np.max(np.abs(R + 6.0)) <= 1e-10


def test_ricci_is_minus_two_g(points):
    g = sample(HYPERBOLIC_METRIC, points, 2)
    ric = curvature(g).ricci.value
    assert np.allclose(ric, -2.0 * g.value, atol=1e-8 * np.abs(g.value).max())


def test_curvature_fd_rate():
    study = convergence_study("CURVATURE", [16, 32, 64])
    assert study.rate >= 1.9


@pytest.mark.parametrize("which", CONFORMAL_IDENTITIES)
def test_conformal_identities_analytic(which):
    chart = build_ball_chart(0.2, 0.9, 6, 6)
    assert conformal_identity_residual(which, chart.points).sup <= 1e-10


@pytest.mark.parametrize("which", [w for w in CONFORMAL_IDENTITIES if w != "NORM_REL"])
def test_conformal_identities_fd_rate(which):
    chart = build_ball_chart(0.2, 0.9, 6, 6)
    study = convergence_study(lambda n: conformal_identity_residual(which, chart.points, 1.0 / n).sup, [16, 32, 64])
    assert study.rate >= 1.9
