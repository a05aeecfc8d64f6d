import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ahconstraint import wspace as W
from ahconstraint.errors import InvalidGeometry
from ahconstraint.fields import constant, rho_power, rotation_killing
from ahconstraint.manifold import (boundary_integrate, build_ball_chart, integrate_weighted, load_chart,
                                   omega_radius, region_contains, region_mask, save_chart)

r = sp.symbols("r", positive=True)
rho_r = (1 - r**2) / 2
SHELL = (sp.Rational(3, 10), sp.Rational(19, 20))

# frozen values of the sympy integrals below
RHO_NORM_W1 = 0.87739680744456200
SHELL_VOLUME = 2365.0886751819476


def test_hyperbolic_shell_volume():
    exact = sp.integrate(rho_r**-3 * 4 * sp.pi * r**2, (r, *SHELL))
    assert math.isclose(float(sp.re(sp.N(exact, 20))), SHELL_VOLUME, rel_tol=1e-14)
    chart = build_ball_chart(0.3, 0.95, 64, 8, 4)
    assert math.isclose(integrate_weighted(chart, 1.0), SHELL_VOLUME, rel_tol=1e-9)


def test_weighted_norm_of_rho():
    exact = sp.sqrt(sp.integrate(rho_r**2 * rho_r**2 * rho_r**-3 * 4 * sp.pi * r**2, (r, *SHELL)))
    assert math.isclose(float(sp.N(exact, 20)), RHO_NORM_W1, rel_tol=1e-14)
    chart = build_ball_chart(0.3, 0.95, 32, 6, 4)
    assert math.isclose(W.weighted_norm(rho_power(1.0), W.WeightSpec(0, 2, 1.0), chart), RHO_NORM_W1,
                        rel_tol=1e-10)


def test_sup_norm_and_hyperbolic_norm_of_killing_field():
    # |a x x|_g = rho^{-1} |a x x|_euc for the vector; lowered version has the same norm
    chart = build_ball_chart(0.3, 0.95, 8, 6)
    v = W.weighted_norm(rotation_killing(), W.WeightSpec(0, math.inf, 1.0), chart)
    pts = chart.points
    expected = np.max(np.linalg.norm(np.cross([0, 0, 1.0], pts), axis=1))
    assert math.isclose(v, expected, rel_tol=1e-12)


def test_boundary_integral_area():
    chart = build_ball_chart(0.4, 0.9, 4, 10)
    rho0 = (1 - 0.16) / 2
    assert math.isclose(boundary_integrate(chart, 1.0, "inner"), 4 * math.pi * 0.16 / rho0**2, rel_tol=1e-12)


def test_chart_roundtrip(tmp_path):
    chart = build_ball_chart(0.3, 0.9, 5, 4, 3)
    path = tmp_path / "grid.bin"
    save_chart(chart, path)
    back = load_chart(path)
    assert np.array_equal(back.quad_weights, chart.quad_weights)
    assert np.allclose(back.points, chart.points, atol=1e-15)
    assert back.describe() == chart.describe()


def test_invalid_geometry():
    with pytest.raises(InvalidGeometry):
        build_ball_chart(0.5, 0.4, 4, 4)
    with pytest.raises(InvalidGeometry):
        build_ball_chart(0.1, 1.0, 4, 4)


@settings(max_examples=30, deadline=None)
@given(R=st.floats(0.4, 3.0))
def test_regions_partition(R):
    rho = np.linspace(1e-4, 0.5, 200)
    omega = region_contains("OMEGA", R, rho)
    exterior = region_contains("E", R, rho)
    assert not np.any(omega & exterior)
    assert np.all(omega | exterior)
    r0 = omega_radius(R)
    assert math.isclose((1 - r0**2) / 2, math.exp(-2 * R), rel_tol=1e-12) or r0 == 0.0


@settings(max_examples=20, deadline=None)
@given(w=st.floats(-2, 2), c=st.floats(0.1, 10))
def test_norm_homogeneity(w, c):
    chart = build_ball_chart(0.3, 0.9, 6, 4)
    spec = W.WeightSpec(1, 2, w)
    a = W.weighted_norm(rho_power(0.5), spec, chart)
    b = W.weighted_norm(rho_power(0.5) * c, spec, chart)
    assert math.isclose(b, c * a, rel_tol=1e-10)


def test_region_mask_membership():
    chart = build_ball_chart(0.3, 0.95, 8, 4)
    m = region_mask(chart, "OMEGA", 1.0)
    assert np.array_equal(m.node_membership, chart.rho > math.exp(-2.0))


def test_constant_field_norm_matches_volume():
    chart = build_ball_chart(0.3, 0.95, 64, 8, 4)
    v = W.weighted_norm(constant(1.0), W.WeightSpec(0, 2, 0.0), chart)
    assert math.isclose(v, math.sqrt(SHELL_VOLUME), rel_tol=1e-9)
