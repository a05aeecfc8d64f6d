"""Acceptance gates 1-11.  Each test prints one PASS/FAIL line (also repeated in the terminal summary).

Tolerances are pinned here and never adjusted to make a gate pass.  Runs
standalone too: ``python tests/test_acceptance.py``.
"""

import math
import time
import warnings

import numpy as np
import pytest
from click.testing import CliRunner

from ahconstraint import constraint as C
from ahconstraint import geoops as G
from ahconstraint import verify as V
from ahconstraint.basis import ShellBasis
from ahconstraint.cli import main
from ahconstraint.fields import (HYPERBOLIC_METRIC, ShellSupport, boost_killing, coordinates, cosh_distance,
                                 random_shell_mode, rotation_killing, sample)
from ahconstraint.ibp import IDENTITIES
from ahconstraint.manifold import build_ball_chart
from ahconstraint.tensor import (CONFORMAL_IDENTITIES, conformal_identity_residual, curvature, hyperbolic_connection,
                                 tensor_norm_sq)

PHI_TOL = 1e-10
PHI_SECONDS = 10.0
EXACT_TOL = 1e-10
RATE_MIN = 1.9
BOUNDARY_TOL = 1e-12
PAIRING_TOL = 1e-6
PAIRING_FD_TOL = 1e-4
WITNESS_TOL = 1e-9
RECOVERY_TOL = 1e-6
STABILITY = 0.20
KERNEL_SECONDS = 600.0
IDENTITY_SEEDS = 10
FAMILY_SIZE = 50

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


def _spread(values):
    values = list(values)
    return (max(values) - min(values)) / min(values) if min(values) > 0 else math.inf


def test_criterion_01_exact_solution():
    chart = build_ball_chart(0.3, 0.95, 64, 12, 4)
    worst, slowest = 0.0, 0.0
    for tau in (0.0, 1.0, 2.0):
        t0 = time.perf_counter()
        ps = C.background_point(tau).sample(chart.points, 2)
        p0, pi = C.phi(ps, C.reference_data(tau))
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, float(np.abs(p0).max()), float((np.linalg.norm(pi, axis=1) * chart.rho).max()))
    ok = worst <= PHI_TOL and slowest <= PHI_SECONDS
    report(1, ok, f"sup|Phi| = {worst:.2e} (tol {PHI_TOL:g}), slowest {slowest:.1f}s at resolution 64")
    assert ok


def test_criterion_02_curvature():
    chart = build_ball_chart(0.3, 0.95, 16, 8, 4)
    R = curvature(sample(HYPERBOLIC_METRIC, chart.points, 2)).scalar.value
    err = float(np.abs(R + 6.0).max())
    study = V.convergence_study("CURVATURE", [16, 32, 64])
    ok = err <= EXACT_TOL and study.rate >= RATE_MIN
    report(2, ok, f"max|R + 6| = {err:.2e}, FD rate {study.rate:.3f} over 16/32/64")
    assert ok


def test_criterion_03_conformal_identities():
    chart = build_ball_chart(0.2, 0.9, 8, 8, 4)
    worst, rates = 0.0, {}
    for which in CONFORMAL_IDENTITIES:
        worst = max(worst, conformal_identity_residual(which, chart.points).sup)
        if which == "NORM_REL":
            continue  # pointwise norm identity: no derivatives, so no FD path
        errs = [conformal_identity_residual(which, chart.points, 1.0 / n).sup for n in (16, 32, 64)]
        rates[which] = V.fit_rate([16, 32, 64], errs)
    ok = worst <= EXACT_TOL and min(rates.values()) >= RATE_MIN
    report(3, ok, f"max analytic residual {worst:.2e}, min FD rate {min(rates.values()):.3f}")
    assert ok


def test_criterion_04_integration_by_parts():
    ladder = [16, 32, 64]
    worst_rate, worst_id, worst_bnd = math.inf, None, 0.0
    for idn in IDENTITIES:
        for seed in range(IDENTITY_SEEDS):
            r = V.check_identity(idn, V.admissible_inputs(idn, seed), 1.5, fd=True, resolutions=ladder)
            if r.rate < worst_rate:
                worst_rate, worst_id = r.rate, f"{idn} seed {seed}"
        inputs = V.admissible_inputs(idn, 0, touch_inner=False)
        r = V.check_identity(idn, inputs, 1.5, resolution=16)
        worst_bnd = max(worst_bnd, max(abs(b) for b in r.metadata["boundary"]))
    ok = worst_rate >= RATE_MIN and worst_bnd <= BOUNDARY_TOL
    report(4, ok, f"{len(IDENTITIES)} identities x {IDENTITY_SEEDS} seeds: min FD rate {worst_rate:.3f} "
                  f"({worst_id}), max isolated boundary bucket {worst_bnd:.1e}")
    assert ok


def _pairing_fields(seed=0):
    rng = np.random.default_rng(seed)
    sup = ShellSupport(0.3, 0.85)
    mode = lambda rank: random_shell_mode(rng, sup, rank, power=4, full=True)
    variation = (mode((0, 2)), mode((2, 0)))
    xi = C.LapseShift(mode((0, 0)), mode((0, 1)))
    bump = mode((0, 2)) * 0.05
    return variation, xi, bump


def test_criterion_05_adjoint():
    variation, xi, bump = _pairing_fields()
    ref = C.reference_data(1.0)
    an = V.adjoint_pairing_check(C.background_point(1.0), ref, variation, xi, resolution=64)
    fd = V.adjoint_pairing_check(C.perturbed_point(1.0, bump), ref, variation, xi, fd=True,
                                 resolutions=[16, 32, 64])
    ok = an.l2 <= PAIRING_TOL and fd.l2 <= PAIRING_FD_TOL and fd.rate >= RATE_MIN
    report(5, ok, f"analytic {an.l2:.2e}, FD at perturbed point {fd.l2:.2e} (res 64), rate {fd.rate:.3f}")
    assert ok


def test_criterion_06_kernel_witnesses():
    pts = build_ball_chart(0.2, 0.9, 6, 8, 2).points
    conn = hyperbolic_connection(pts, 2)
    g = HYPERBOLIC_METRIC(coordinates(pts, 0)).value
    hn = lambda T, var: float(np.sqrt(np.abs(tensor_norm_sq(T, g, var))).max())
    t_res = hn(G.op_T(sample(cosh_distance(), pts, 2), conn).field.value, "dd")
    s_res = u_res = 0.0
    for axis in np.eye(3):
        Xj = sample(rotation_killing(axis), pts, 3)
        s_res = max(s_res, hn(G.op_S(Xj.truncate(2), conn).field.value, "dd"))
        u_res = max(u_res, hn(G.op_U(Xj, conn).value, "ddd"))
    rng = np.random.default_rng(0)
    catalogue = [rotation_killing(), boost_killing()] + [
        random_shell_mode(rng, ShellSupport(0.1, 0.95), (0, 1), full=True) for _ in range(3)]
    second_deriv = max(G.second_derivative_identity_residual(f, pts).sup for f in catalogue)
    ok = max(t_res, s_res, u_res, second_deriv) <= WITNESS_TOL
    report(6, ok, f"T(cosh) {t_res:.1e}, S(rot) {s_res:.1e}, U(rot) {u_res:.1e}, second-derivative identity {second_deriv:.1e}")
    assert ok


def test_criterion_07_model_operators():
    worst_err, worst_spread, detail = 0.0, 0.0, []
    for which in ("A", "B"):
        for s in (-1.5, 0.0, 1.5):
            basis = ShellBasis(0.25, 0.9, 12, ell_max=1)
            rng = np.random.default_rng(0)
            c = rng.normal(size=basis.size) if which == "A" else rng.normal(size=(3, basis.size))
            u = basis.field(c, (0, 0) if which == "A" else (0, 1))
            res = G.model_operator_solve(which, G.model_operator_field(which, u), s, 12)
            M = G.weighted_gram(basis, which, s, 0)
            d, cc = (res.coeffs - c).ravel(), c.ravel()
            err = math.sqrt((d @ M @ d) / (cc @ M @ cc))
            consts = [G.isomorphism_constant(which, s, n) for n in (8, 12, 16)]
            worst_err = max(worst_err, err)
            worst_spread = max(worst_spread, _spread(consts))
            detail.append(f"{which}{s:+g}:{consts[-1]:.3f}")
    ok = worst_err <= RECOVERY_TOL and worst_spread <= STABILITY
    report(7, ok, f"max relative L2_s error {worst_err:.1e}, max constant spread {worst_spread:.1%} "
                  f"({', '.join(detail)})")
    assert ok


def test_criterion_08_coercivity():
    w = 1.5
    parts, ok = [], True
    for est in ("POINCARE_T", "KORN_S", "COERCIVE_U", "ADJ_35CG"):
        fam = V.estimate_family(est, 0, FAMILY_SIZE)
        study = V.refinement_study(est, fam, w, 1.0, (32, 48, 64))
        good = study["finite"] and study["spread"] <= STABILITY
        ok &= good
        parts.append(f"{est} {study['values'][-1]:.4f} (spread {study['spread']:.1e})")
    fam = V.normal_direction_family(0, FAMILY_SIZE)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        at_one, at_w = V.scan_constants("KORN_S", fam, [1.0, w], 1.0, resolution=64)
    margin = at_one.value - at_w.value
    ok &= margin > 0
    report(8, ok, "; ".join(parts) + f"; KORN_S at w=1 exceeds w={w} by {margin:.2e}")
    assert ok


def test_criterion_09_kernel():
    t0 = time.perf_counter()
    rep = V.kernel_probe(C.background_point(1.0), C.reference_data(1.0), -1.5, (16, 24, 32))
    elapsed = time.perf_counter() - t0
    o = rep.outcomes
    ok = min(o["sigma_min"]) > 0 and o["variation"] <= STABILITY and elapsed <= KERNEL_SECONDS
    report(9, ok, f"sigma_min {[round(s, 5) for s in o['sigma_min']]}, variation {o['variation']:.2%}, "
                  f"{elapsed:.0f}s")
    assert ok


def test_criterion_10_lipschitz():
    h, p = V.relative_perturbation(0)
    fam = V.estimate_family("PS_EST", 0, 12)
    general = V.lipschitz_sequence(h, p, fam, 1.0, -1.5)
    symmetric = V.lipschitz_sequence(h, None, fam, 0.0, -1.5)
    sp = [general.outcomes["spread"], symmetric.outcomes["spread"]]
    ok = max(sp) <= STABILITY
    report(10, ok, f"ratio spread over t = 1e-1..1e-3: {sp[0]:.1%} (tau = 1), {sp[1]:.1%} (time-symmetric)")
    assert ok


SMALL_RUN = """[ladder]
resolutions = 16, 32
kernel = 8, 12
[families]
size = 6
"""


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN)
    trees = []
    for name in ("first", "second"):
        out = tmp_path / name
        res = CliRunner().invoke(main, ["all", "--config", str(cfg), "--out", str(out), "--seed", "3"])
        assert res.exit_code in (0, 1), res.output
        trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = trees[0] == trees[1] and len(trees[0]) >= 8
    report(11, ok, f"{len(trees[0])} report files byte-identical across two runs")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
