import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ahconstraint import constraint as C
from ahconstraint import verify as V
from ahconstraint.errors import (EmptyFamily, SupportViolation, UnknownIdentity, WindowViolation, WindowWarning)
from ahconstraint.fields import ShellSupport, constant, random_shell_mode, rotation_killing
from ahconstraint.ibp import BOUNDARY_ISOLATION, IDENTITIES
from ahconstraint.wspace import TestFamily

CFG = V.IdentityConfig()


def _lem2_constant_closed_form(w):
    """Boundary and volume buckets of LEM2 for N = 1 on the shell [0.3, 0.95] (both spheres)."""
    r = sp.symbols("r", positive=True)
    rho = (1 - r**2) / 2
    d = sp.nsimplify(w)
    flux = lambda r0, sign: sign * r0 * rho.subs(r, r0) ** (2 * d) * 4 * sp.pi * r0**2 * rho.subs(r, r0) ** -2
    a, b = sp.Rational(3, 10), sp.Rational(19, 20)
    boundary = flux(a, 1) + flux(b, -1)
    c = (2 * d - 2) * r**2 - 3 * rho
    volume = -sp.integrate(c * rho ** (2 * d - 3) * 4 * sp.pi * r**2, (r, a, b))
    return float(sp.N(boundary, 20)), float(sp.N(volume, 20))


@pytest.mark.parametrize("w", [0.5, 1.5])
def test_lem2_constant_lapse_against_sympy(w):
    bnd, vol = _lem2_constant_closed_form(w)
    # Gauss quadrature of the steep rho^(2w-3) integrand needs a fine radial grid at small w
    r = V.check_identity("LEM2", {"N": constant(1.0)}, w, resolution=128, include_outer=True)
    assert math.isclose(r.metadata["boundary"][0], bnd, rel_tol=1e-12)
    assert math.isclose(r.metadata["volume"][0], vol, rel_tol=1e-11)
    assert r.metadata["relative"] <= 1e-12


@pytest.mark.parametrize("identity", IDENTITIES)
def test_identities_analytic(identity):
    # with exact jets only the (spectrally small) quadrature error remains
    r = V.check_identity(identity, V.admissible_inputs(identity, 0), 1.5, resolution=24)
    assert r.metadata["relative"] <= 1e-10


@pytest.mark.parametrize("identity", BOUNDARY_ISOLATION)
def test_boundary_isolation(identity):
    inputs = V.admissible_inputs(identity, 1, touch_inner=False)
    r = V.check_identity(identity, inputs, 1.5, resolution=8)
    assert max(abs(b) for b in r.metadata["boundary"]) <= 1e-12


def test_ihp1_killing_field_with_outer_flux():
    r = V.check_identity("IHP1", {"X": rotation_killing((0.2, 0.5, 1.0))}, 1.5, resolution=64, include_outer=True)
    assert r.metadata["relative"] <= 1e-9


def test_support_violation():
    with pytest.raises(SupportViolation):
        V.check_identity("LEM2", {"N": constant(1.0)}, 1.5, resolution=8)


def test_unknown_identity():
    with pytest.raises(UnknownIdentity):
        V.check_identity("LEM99", {}, 1.0)
    with pytest.raises(UnknownIdentity):
        V.estimate_family("NOPE", 0)


def test_fd_ladder_rate():
    r = V.check_identity("LEM4", V.admissible_inputs("LEM4", 2), 1.5, fd=True, resolutions=[16, 32])
    assert r.rate >= 1.9
    assert "imbalance_rate" in r.metadata


def test_fit_rate_exact():
    assert math.isclose(V.fit_rate([10, 20, 40], [1.0, 0.25, 0.0625]), 2.0, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# windows


@pytest.mark.parametrize("est,w,inside", [("POINCARE_T", 1.5, True), ("POINCARE_T", 1.0, False),
                                          ("KORN_S", 1.0, False), ("KORN_S", -3.0, True),
                                          ("COERCIVE_U", 2.0, False), ("ADJ_35CG", 0.0, True),
                                          ("PS_EST", 10.0, True), ("SBE_F", 0.0, True), ("SBE_F", 0.5, False)])
def test_window_table(est, w, inside):
    assert V.in_window(est, w) is inside


def test_window_warn_and_strict():
    with pytest.warns(WindowWarning):
        assert V.check_window("KORN_S", 1.0) is False
    with pytest.raises(WindowViolation):
        V.check_window("KORN_S", 1.0, strict=True)


# ---------------------------------------------------------------------------
# empirical constants


def test_empty_family():
    with pytest.raises(EmptyFamily):
        V.scan_constants("KORN_S", TestFamily([]), [1.5], resolution=8)


def test_e_r_support_violation():
    rng = np.random.default_rng(0)
    fam = TestFamily([random_shell_mode(rng, ShellSupport(0.1, 0.95), (0, 0), power=4, full=True)])
    with pytest.raises(SupportViolation):
        V.scan_constants("POINCARE_T", fam, [1.5], resolution=8)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), cut=st.integers(1, 5))
def test_constant_monotone_under_family_enlargement(seed, cut):
    fam = V.estimate_family("KORN_S", seed, 6)
    sub = TestFamily(fam.members[:cut], fam.name, seed)
    a = V.scan_constants("KORN_S", sub, [1.5], resolution=8)[0].value
    b = V.scan_constants("KORN_S", fam, [1.5], resolution=8)[0].value
    assert b >= a


def test_poincare_reports_both_parameterizations():
    fam = V.estimate_family("POINCARE_T", 0, 3)
    e = V.estimate_constant("POINCARE_T", fam, 1.5, resolution=8)
    p = e.metadata["parameterizations"]
    assert p["canonical"] == e.value and p["as_written_delta"] == -1.5 and np.isfinite(p["as_written"])


def test_coercive_u_family_contains_killing_members():
    fam = V.estimate_family("COERCIVE_U", 0, 10)
    e = V.scan_constants("COERCIVE_U", fam, [1.5], resolution=12)[0]
    assert np.all(np.isfinite(e.ratios)) and e.value > 0


def test_scan_matches_individual_estimates():
    fam = V.estimate_family("ADJ_35CG", 3, 3)
    both = V.scan_constants("ADJ_35CG", fam, [0.5, 1.5], resolution=8)
    single = V.scan_constants("ADJ_35CG", fam, [1.5], resolution=8)[0]
    assert math.isclose(both[1].value, single.value, rel_tol=1e-13)


# ---------------------------------------------------------------------------
# kernel and Lipschitz probes

SMALL_KERNEL = V.KernelConfig(n_ang=4, q=3)


def test_kernel_probe_deterministic():
    ref = C.reference_data(1.0)
    a = V.kernel_probe(C.background_point(1.0), ref, -1.5, (4, 6), config=SMALL_KERNEL, planted=False)
    b = V.kernel_probe(C.background_point(1.0), ref, -1.5, (4, 6), config=SMALL_KERNEL, planted=False)
    assert a.outcomes == b.outcomes
    assert all(s > 0 for s in a.outcomes["sigma_min"])


def test_kernel_window_strict():
    ref = C.reference_data(1.0)
    with pytest.raises(WindowViolation):
        V.kernel_probe(C.background_point(1.0), ref, -3.0, (4, 6), config=SMALL_KERNEL, strict_window=True)


def test_smallest_generalized_against_dense():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(12, 12))
    A = M @ M.T + 0.1 * np.eye(12)
    Gm = np.diag(rng.uniform(1, 2, 12))
    pair = V.smallest_generalized(A, Gm)
    from scipy.linalg import eigh

    lam = eigh(A, Gm, eigvals_only=True)[0]
    assert math.isclose(pair.value, math.sqrt(lam), rel_tol=1e-10) or math.isclose(pair.value, lam, rel_tol=1e-10)


def test_lipschitz_identical_points():
    h, p = V.relative_perturbation(0)
    point = C.perturbed_point(1.0, h * 0.01, p * 0.01)
    fam = V.estimate_family("PS_EST", 0, 2)
    rep = V.lipschitz_probe((point, point), C.reference_data(1.0), fam,
                            config=V.LipschitzConfig(resolution=8, n_ang=4))
    assert rep.value == 0.0 and rep.metadata["zero_separation"] is True


def test_separation_norm_symmetric():
    h, p = V.relative_perturbation(1)
    a = C.perturbed_point(1.0, h * 0.01, p * 0.01)
    b = C.background_point(1.0)
    chart = V.LipschitzConfig(resolution=8, n_ang=4).chart()
    ab = V.separation_norm(a, b, -1.5, chart)
    ba = V.separation_norm(b, a, -1.5, chart)
    assert ab > 0 and math.isclose(ab, ba, rel_tol=1e-12)
