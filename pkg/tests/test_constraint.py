import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ahconstraint import constraint as C
from ahconstraint import jets as J
from ahconstraint.errors import EquivalenceViolation, ParseError
from ahconstraint.fields import (HYPERBOLIC_METRIC, ShellSupport, TensorField, random_shell_mode, rho_jet,
                                 sample)
from ahconstraint.manifold import build_ball_chart
from ahconstraint.verify import adjoint_pairing_check
from conftest import COORDS, RHO, ball_points, sympy_eval

EPS = 0.1


def _conformal_exponent(X):
    # phi = -log rho + EPS x y, so g = e^{2 phi} delta is a conformal perturbation of the ball metric
    return -J.log(rho_jet(X)) + X.take(0) * X.take(1) * EPS


def conformal_point(tau: float) -> C.PhasePoint:
    """g = e^{2 phi} delta with umbilic data K = tau g, so the momentum constraint holds identically."""

    def g_fn(X):
        return J.scale(J.exp(_conformal_exponent(X) * 2.0), J.Jet.constant(np.eye(3), X.npts, X.order))

    def pi_fn(X):
        # pi^{ij} = (K^{ij} - tr K g^{ij}) sqrt(g) = -2 tau g^{ij} sqrt(g); relative comps divide by rho^-3
        f = J.exp(_conformal_exponent(X)) * rho_jet(X) ** 3.0
        return J.scale(f, J.Jet.constant(np.eye(3), X.npts, X.order)) * (-2.0 * tau)

    return C.PhasePoint(TensorField(g_fn, (0, 2), "g", True), TensorField(pi_fn, (2, 0), "pi", True))


def _sympy_hamiltonian():
    phi = -sp.log(RHO) + EPS * COORDS[0] * COORDS[1]
    lap = sum(sp.diff(phi, x, 2) for x in COORDS)
    grad2 = sum(sp.diff(phi, x) ** 2 for x in COORDS)
    R = -sp.exp(-2 * phi) * (4 * lap + 2 * grad2)
    s = sp.exp(3 * phi) * RHO**3
    return s * (R + 6)


@pytest.mark.parametrize("tau", [0.0, 1.0, 2.0])
def test_background_is_exact_solution(tau):
    chart = build_ball_chart(0.2, 0.95, 16, 8)
    ps = C.background_point(tau).sample(chart.points, 2)
    p0, pi = C.phi(ps, C.reference_data(tau))
    assert np.abs(p0).max() <= 1e-10
    assert np.abs(pi).max() <= 1e-10


@pytest.mark.parametrize("tau", [0.0, 1.0])
def test_conformal_data_against_sympy(tau, points):
    ps = conformal_point(tau).sample(points, 2)
    p0, pi = C.phi(ps, C.reference_data(tau))
    exact = sympy_eval(_sympy_hamiltonian(), points)
    assert np.allclose(p0, exact, rtol=1e-10, atol=1e-10)
    assert np.abs(exact).max() > 1e-3
    assert np.abs(pi).max() <= 1e-10


def _phi_norm(point, ref, pts):
    p0, pi = C.phi(point.sample(pts, 2), ref)
    return np.concatenate([p0, pi.ravel()])


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 1000), tau=st.sampled_from([0.0, 0.5, 1.0]))
def test_linearization_taylor_remainder(seed, tau):
    """|Phi(x + t v) - Phi(x) - t DPhi v| is second order in t."""
    rng = np.random.default_rng(seed)
    sup = ShellSupport(0.2, 0.9)
    h = random_shell_mode(rng, sup, (0, 2), full=True)
    p = random_shell_mode(rng, sup, (2, 0), full=True)
    pts = ball_points(seed, 12, 0.3, 0.8)
    ref = C.reference_data(tau)
    base = C.perturbed_point(tau, h * 0.02, p * 0.02)
    ps = base.sample(pts, 2)
    d0, di = C.dphi(ps, ref, sample(h, pts, 2), sample(p, pts, 1))
    lin = np.concatenate([d0, di.ravel()])
    f0 = _phi_norm(base, ref, pts)
    rem = []
    for t in (1e-2, 5e-3):
        ft = _phi_norm(C.perturbed_point(tau, h * (0.02 + t), p * (0.02 + t)), ref, pts)
        rem.append(np.abs(ft - f0 - t * lin).max())
    assert rem[0] / rem[1] > 3.5


def test_adjoint_pairing_analytic():
    rng = np.random.default_rng(0)
    sup = ShellSupport(0.3, 0.85)
    m = lambda rank: random_shell_mode(rng, sup, rank, power=4, full=True)
    r = adjoint_pairing_check(C.background_point(1.0), C.reference_data(1.0), (m((0, 2)), m((2, 0))),
                              C.LapseShift(m((0, 0)), m((0, 1))), resolution=16)
    assert r.l2 <= 1e-10


def test_equivalence_band():
    pts = ball_points(2, 5)
    point = C.PhasePoint(HYPERBOLIC_METRIC * 3.0, C.reference_data(0.0).pi_ref, 0.5)
    with pytest.raises(EquivalenceViolation):
        point.sample(pts, 2)


def test_momentum_roundtrip(points):
    point = conformal_point(0.7)
    ps = point.sample(points, 2)
    dens = C.momentum_from_K(ps.g, ps.K, points)
    assert np.allclose(dens.components.value, sample(point.pi, points, 0).value, atol=1e-12)
    assert np.allclose(ps.K.value, 0.7 * ps.g.value, atol=1e-12)


def test_phase_point_roundtrip(tmp_path):
    pts = ball_points(4, 9)
    point = conformal_point(1.0)
    path = tmp_path / "point.bin"
    C.store_phase_point(point, pts, path)
    stored = C.load_phase_point(path)
    ref = C.reference_data(1.0)
    a = C.phi(point.sample(pts, 2), ref)
    b = C.phi(stored.sample(pts, 2), ref)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    with pytest.raises(ValueError):
        stored.sample(pts[:3], 2)


def test_phase_point_malformed(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"ahphase 1\nlam\nend\n")
    with pytest.raises(ParseError):
        C.load_phase_point(path)
    path.write_bytes(b"no terminator")
    with pytest.raises(ParseError):
        C.load_phase_point(path)
