"""Verification harness: identity residuals, the adjoint pairing, empirical constants,
the kernel and Lipschitz probes and convergence studies.

Every inequality is checked as empirical finiteness plus refinement stability
and reported as "consistent-with", never as a proof.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ibp
from .errors import (DegenerateRegion, EmptyFamily, InsufficientData, SupportViolation, UnknownIdentity,
                     WindowViolation, WindowWarning)
from .fields import ShellSupport, TensorField, polynomial_field, random_shell_mode, sample
from .manifold import ChartGrid, boundary_integrate, build_ball_chart, inner_normal, omega_radius
from .records import ConstantEstimate, ProbeReport, Residual

DIM = 3
SUPPORT_TOL = 1e-10
SATURATION_FLOOR = 1e-11


def fit_rate(resolutions: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(1 / resolution)."""
    res = np.asarray(resolutions, dtype=float)
    err = np.asarray(errors, dtype=float)
    if res.size < 2:
        raise InsufficientData("a rate needs at least two resolutions")
    if np.any(err <= 0.0):
        return float("inf")
    slope = np.polyfit(np.log(1.0 / res), np.log(err), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# identities


@dataclass(frozen=True)
class IdentityConfig:
    """Shell geometry and quadrature for identity checks.

    ``resolution`` sets the number of radial cells and the finite-difference
    step 1 / resolution (scaled by 1 - r^2 at each node).
    """

    r_inner: float = 0.3
    r_outer: float = 0.95
    n_ang: int = 12
    q_radial: int = 4
    chunk: int = 8192

    def inner_radius(self, R: float | None) -> float:
        if R is None:
            return self.r_inner
        r = omega_radius(R)
        if not 0.0 < r < self.r_outer:
            raise DegenerateRegion(f"R={R} gives inner radius {r}, outside ]0, {self.r_outer}[")
        return r

    def chart(self, resolution: int, R: float | None = None) -> ChartGrid:
        return build_ball_chart(self.inner_radius(R), self.r_outer, resolution, self.n_ang, self.q_radial)


def _require(identity: str, inputs: dict[str, TensorField]) -> None:
    if identity not in ibp.IDENTITY_FUNCS:
        raise UnknownIdentity(identity)
    missing = [k for k in ibp.IDENTITY_INPUTS[identity] if k not in inputs]
    if missing:
        raise KeyError(f"{identity} needs inputs {missing}")


def check_support(inputs: dict[str, TensorField], chart: ChartGrid) -> None:
    """Carrier inputs (N, X, Y) must vanish to second order on the truncation sphere."""
    pts, _ = chart.sphere("outer")
    for name in ibp.CARRIERS:
        if name not in inputs:
            continue
        jet = sample(inputs[name], pts, 2)
        size = max(float(np.max(np.abs(d))) for d in jet.derivs)
        if size > SUPPORT_TOL:
            raise SupportViolation(f"input {name} touches the truncation sphere (size {size:.3e})")


def _outer_normal(points: np.ndarray) -> np.ndarray:
    return -inner_normal(points)


def _buckets(identity: str, inputs: dict[str, TensorField], delta: float, chart: ChartGrid,
             fd_step: float | None, include_outer: bool, chunk: int,
             error_bound: bool = False) -> tuple[list[np.ndarray], float | None]:
    """Per display [int lhs, int volume, oint boundary]; with ``error_bound`` on the FD path also
    the L1 norm of (FD integrand - exact integrand) summed over every display and bucket."""
    fn = ibp.IDENTITY_FUNCS[identity]
    fields = {k: inputs[k] for k in ibp.IDENTITY_INPUTS[identity]}
    compare = error_bound and fd_step is not None
    pts = chart.points
    rho = chart.rho
    wq = chart.quad_weights * rho**-3.0
    totals = None
    err = 0.0
    for start in range(0, pts.shape[0], chunk):
        p = pts[start:start + chunk]
        w = wq[start:start + chunk]
        geo = ibp.Geometry.at(p, delta)
        displays = fn(geo, ibp.sample_inputs(fields, p, fd_step))
        part = [np.array([w @ lhs, w @ vol, 0.0]) for lhs, vol, _ in displays]
        totals = part if totals is None else [t + q for t, q in zip(totals, part)]
        if compare:
            exact = fn(ibp.Geometry.at(p, delta), ibp.sample_inputs(fields, p, None))
            for (l1, v1, _), (l0, v0, _) in zip(displays, exact):
                err += float(w @ np.abs(l1 - l0) + w @ np.abs(v1 - v0))
    spheres = [("inner", inner_normal)] + ([("outer", _outer_normal)] if include_outer else [])
    for which, normal in spheres:
        sp, _ = chart.sphere(which)
        geo = ibp.Geometry.at(sp, delta, normal(sp))
        displays = fn(geo, ibp.sample_inputs(fields, sp, fd_step))
        for t, (_, _, bnd) in zip(totals, displays):
            t[2] += boundary_integrate(chart, bnd, which)
        if compare:
            exact = fn(ibp.Geometry.at(sp, delta, normal(sp)), ibp.sample_inputs(fields, sp, None))
            for (_, _, b1), (_, _, b0) in zip(displays, exact):
                err += boundary_integrate(chart, np.abs(b1 - b0), which)
    return totals, (err if compare else None)


def _identity_residual(identity: str, inputs: dict[str, TensorField], delta: float, chart: ChartGrid,
                       fd_step: float | None, include_outer: bool, chunk: int,
                       error_bound: bool = False) -> Residual:
    totals, bound = _buckets(identity, inputs, delta, chart, fd_step, include_outer, chunk, error_bound)
    imbalance = np.array([t[0] - t[1] - t[2] for t in totals])
    scale = max(max(abs(x) for x in t) for t in totals)
    absolute = float(np.linalg.norm(imbalance))
    rel = absolute / scale if scale > 0 else 0.0
    meta = {
        "identity": identity, "delta": delta, "path": "analytic" if fd_step is None else "fd",
        "fd_step": fd_step, "resolution": chart.n_r, "region": chart.describe(),
        "lhs": [float(t[0]) for t in totals], "volume": [float(t[1]) for t in totals],
        "boundary": [float(t[2]) for t in totals], "relative": rel,
    }
    if bound is not None:
        meta["error_bound"] = bound
    return Residual(l2=absolute, sup=absolute, metadata=meta)


def check_identity(identity: str, inputs: dict[str, TensorField], delta: float, R: float | None = None, *,
                   resolution: int = 32, fd: bool = False, resolutions: Sequence[int] | None = None,
                   config: IdentityConfig = IdentityConfig(), include_outer: bool = False) -> Residual:
    """Residual |int LHS - int RHS_volume - oint RHS_boundary| of one identity on the shell.

    The inner sphere of the shell (the sphere rho = e^{-2R} when R is given)
    is the boundary whose integrals the identity records; inputs may be
    nonzero there.  The support carriers must vanish on the truncation sphere
    unless ``include_outer`` adds its flux as well.  With ``resolutions`` the
    check runs on each and the least-squares convergence rate is attached.
    The residual reports the absolute imbalance; the relative imbalance and
    the separate lhs / volume / boundary buckets are in the metadata.

    On the FD path with a ladder, the rate is the slope of the L1 norm of
    (FD integrand - exact integrand) over every bucket, which bounds the
    change of the imbalance.  The imbalance itself can converge with
    cancelling leading terms (its slope is then erratic), so its raw slope
    is kept as ``imbalance_rate`` only.
    """
    _require(identity, inputs)
    ladder = list(resolutions) if resolutions is not None else [resolution]
    results = []
    for res in ladder:
        chart = config.chart(res, R)
        if not include_outer:
            check_support(inputs, chart)
        step = 1.0 / res if fd else None
        results.append(_identity_residual(identity, inputs, delta, chart, step, include_outer, config.chunk,
                                          error_bound=fd and len(ladder) >= 2))
    out = results[-1]
    out.metadata["R"] = R
    if len(results) >= 2:
        errs = [r.l2 for r in results]
        out.metadata["ladder"] = {"resolutions": ladder, "residuals": errs}
        out.metadata["imbalance_rate"] = fit_rate(ladder, errs)
        if fd:
            bounds = [r.metadata["error_bound"] for r in results]
            out.metadata["ladder"]["error_bounds"] = bounds
            out.rate = fit_rate(ladder, bounds)
        else:
            out.rate = out.metadata["imbalance_rate"]
        out.metadata["saturated"] = bool(max(r.metadata["relative"] for r in results) < SATURATION_FLOOR)
    return out


def admissible_inputs(identity: str, seed: int, config: IdentityConfig = IdentityConfig(), R: float | None = None,
                      touch_inner: bool = True) -> dict[str, TensorField]:
    """Random inputs for an identity: shell modes on [r_lo, r_outer] for the carriers, polynomials otherwise.

    The carriers use the (1 - t^2)^4 profile ending exactly on the truncation
    sphere, so they vanish there to third order; with ``touch_inner`` their
    support starts below the inner sphere, otherwise exactly on it.
    """
    if identity not in ibp.IDENTITY_INPUTS:
        raise UnknownIdentity(identity)
    rng = np.random.default_rng(seed)
    r_in = config.inner_radius(R)
    r_lo = r_in - 0.3 * (config.r_outer - r_in) if touch_inner else r_in
    support = ShellSupport(r_lo, config.r_outer)
    out = {}
    for name in ibp.IDENTITY_INPUTS[identity]:
        rank = ibp.INPUT_RANKS[name]
        if name in ibp.CARRIERS:
            out[name] = random_shell_mode(rng, support, rank, power=4, full=True)
        else:
            nt = sum(rank)
            coeffs = 0.3 * rng.normal(size=(10,) + (DIM,) * nt)
            out[name] = polynomial_field(coeffs, rank)
    return out


# ---------------------------------------------------------------------------
# convergence studies


def convergence_study(op: str | Callable[[int], float], resolutions: Sequence[int],
                      generator: Callable[[int], dict] | None = None, **kwargs) -> Residual:
    """Least-squares rate of a residual across resolutions.

    ``op`` is either a callable resolution -> residual, an identity id (inputs
    from ``generator(seed)`` or the seeded admissible generator; on the FD
    path the studied quantity is the integrand error bound of
    ``check_identity``) or
    "CURVATURE" (scalar curvature of the ball metric, FD path).  A finest
    residual at the rounding floor is flagged as saturated.
    """
    resolutions = list(resolutions)
    if len(resolutions) < 2:
        raise InsufficientData("convergence study needs at least two resolutions")
    fn = _study_function(op, generator, **kwargs)
    errs = [float(fn(r)) for r in resolutions]
    finest = errs[-1]
    scale = kwargs.get("scale", 1.0)
    saturated = finest <= SATURATION_FLOOR * scale
    rate = None if saturated else fit_rate(resolutions, errs)
    name = op if isinstance(op, str) else getattr(op, "__name__", "custom")
    return Residual(l2=finest, sup=max(errs), rate=rate,
                    metadata={"op": name, "resolutions": resolutions, "residuals": errs, "saturated": saturated})


def curvature_residual(resolution: int, fd: bool = True, config: IdentityConfig = IdentityConfig()) -> float:
    """sup |R(g) + 6| of the ball metric on the identity shell."""
    from .fields import HYPERBOLIC_METRIC
    from .tensor import curvature

    chart = config.chart(resolution)
    g = sample(HYPERBOLIC_METRIC, chart.points, 2, 1.0 / resolution if fd else None)
    return float(np.max(np.abs(curvature(g).scalar.value + 6.0)))


def _study_function(op, generator, **kwargs) -> Callable[[int], float]:
    if callable(op):
        return op
    if op == "CURVATURE":
        return lambda r: curvature_residual(r, fd=kwargs.get("fd", True))
    if op in ibp.IDENTITY_FUNCS:
        seed = kwargs.get("seed", 0)
        inputs = generator(seed) if generator is not None else admissible_inputs(op, seed)
        delta = kwargs.get("delta", 1.0)
        fd = kwargs.get("fd", True)
        config = kwargs.get("config", IdentityConfig())

        def run(r: int) -> float:
            chart = config.chart(r, kwargs.get("R"))
            check_support(inputs, chart)
            res = _identity_residual(op, inputs, delta, chart, 1.0 / r if fd else None, False, config.chunk,
                                     error_bound=fd)
            return res.metadata["error_bound"] if fd else res.l2

        return run
    raise UnknownIdentity(str(op))


# ---------------------------------------------------------------------------
# adjoint pairing


def _hnorm(values: np.ndarray, rho: np.ndarray, up: int, down: int) -> np.ndarray:
    """Pointwise hyperbolic norm of Cartesian components with ``up`` upper and ``down`` lower slots."""
    v = values.reshape(values.shape[0], -1)
    return np.sqrt(np.einsum("pi,pi->p", v, v)) * rho ** (down - up)


@dataclass(frozen=True)
class PairingConfig:
    r_inner: float = 0.25
    r_outer: float = 0.9
    n_ang: int = 8
    q_radial: int = 4
    chunk: int = 4096

    def chart(self, resolution: int) -> ChartGrid:
        return build_ball_chart(self.r_inner, self.r_outer, resolution, self.n_ang, self.q_radial)


def _check_both_spheres(fields: dict[str, TensorField], chart: ChartGrid) -> None:
    for which in ("inner", "outer"):
        pts, _ = chart.sphere(which)
        for name, f in fields.items():
            jet = sample(f, pts, 2)
            size = max(float(np.max(np.abs(d))) for d in jet.derivs)
            if size > SUPPORT_TOL:
                raise SupportViolation(f"{name} does not vanish on the {which} sphere (size {size:.3e})")


def _pairing_sides(point, ref, variation, xi, chart: ChartGrid, fd_step: float | None, chunk: int):
    from .constraint import dphi, dphi_adjoint

    h_f, p_f = variation
    left = right = 0.0
    wq = chart.quad_weights * chart.rho**-3.0
    for start in range(0, chart.size, chunk):
        pts = chart.points[start:start + chunk]
        w = wq[start:start + chunk]
        ps = point.sample(pts, 2, fd_step)
        hj = sample(h_f, pts, 2, fd_step)
        pj = sample(p_f, pts, 1, fd_step)
        Nj, Xj = xi.sample(pts, 2, fd_step)
        d0, di = dphi(ps, ref, hj, pj)
        a1, a2 = dphi_adjoint(ps, ref, Nj, Xj)
        Xup = np.einsum("pij,pj->pi", ps.ginv.value, Xj.value)
        left += float(w @ (d0 * Nj.value + np.einsum("pi,pi->p", di, Xup)))
        right += float(w @ (np.einsum("pij,pij->p", hj.value, a1.value) + np.einsum("pij,pij->p", pj.value, a2.value)))
    return left, right


def adjoint_pairing_check(point, ref, variation: tuple[TensorField, TensorField], xi, *, resolution: int = 64,
                          fd: bool = False, resolutions: Sequence[int] | None = None,
                          config: PairingConfig = PairingConfig(), floor: float = 1e-300) -> Residual:
    """|int <DPhi(h, p), xi> - int <(h, p), DPhi* xi>| / max(|either side|, floor).

    Both pairings use the hyperbolic volume form with densities given by
    their relative components.  The variation and xi must vanish with two
    derivatives on both spheres of the shell.
    """
    h_f, p_f = variation
    ladder = list(resolutions) if resolutions is not None else [resolution]
    _check_both_spheres({"h": h_f, "p": p_f, "N": xi.N, "X": xi.X}, config.chart(ladder[-1]))
    rels, absolutes, sides = [], [], []
    for res in ladder:
        chart = config.chart(res)
        left, right = _pairing_sides(point, ref, variation, xi, chart, 1.0 / res if fd else None, config.chunk)
        diff = abs(left - right)
        scale = max(abs(left), abs(right), floor)
        rels.append(diff / scale)
        absolutes.append(diff)
        sides.append((left, right))
    out = Residual(l2=rels[-1], sup=rels[-1],
                   metadata={"identity": "ADJOINT_PAIRING", "path": "fd" if fd else "analytic",
                             "resolution": ladder[-1], "left": sides[-1][0], "right": sides[-1][1],
                             "absolute": absolutes[-1], "tau": ref.tau})
    if len(ladder) >= 2:
        saturated = max(rels) < SATURATION_FLOOR
        out.rate = None if saturated else fit_rate(ladder, absolutes)
        out.metadata.update({"ladder": {"resolutions": ladder, "relative": rels, "absolute": absolutes},
                             "saturated": saturated})
    return out


# ---------------------------------------------------------------------------
# empirical constants
#
# ``delta`` below is always the exponent of the left-hand norm in the module's
# convention ||u||_{p,w} = (int |u|^p rho^{p w} dmu)^{1/p}.  For the estimates
# stated with the subscript -delta this is w = -delta.

ESTIMATES = ("POINCARE_T", "POINCARE_T_GLOBAL", "KORN_S", "COERCIVE_U", "ADJ_35CG", "ADJ_422", "PS_EST",
             "SBE_A", "SBE_B", "SBE_F", "SBE_FSTAR")

# (lower, upper, lower closed, upper closed, excluded points)
ESTIMATE_WINDOWS: dict[str, tuple[float, float, bool, bool, tuple[float, ...]]] = {
    "POINCARE_T": (1.0, 2.0, False, False, ()),
    "POINCARE_T_GLOBAL": (0.0, 2.0, True, False, ()),
    "KORN_S": (-np.inf, 2.0, False, False, (1.0,)),
    "COERCIVE_U": (1.0, 2.0, False, False, ()),
    "ADJ_35CG": (0.0, 2.0, True, False, (1.0,)),
    "ADJ_422": (0.0, 2.0, True, False, (1.0,)),
    "PS_EST": (0.0, np.inf, True, False, ()),
    "SBE_A": (-2.0, 2.0, False, False, ()),
    "SBE_B": (-2.0, 2.0, False, False, ()),
    "SBE_F": (-2.0, 0.0, False, True, ()),
    "SBE_FSTAR": (0.0, 2.0, True, False, ()),
}

# estimates restricted to E_R (family supported there, norms over E_R)
E_R_ESTIMATES = ("POINCARE_T", "COERCIVE_U")
# estimates with an Omega_R term on the right
OMEGA_ESTIMATES = ("SBE_A", "SBE_B", "SBE_F", "SBE_FSTAR")
PAIR_ESTIMATES = ("ADJ_35CG", "ADJ_422", "PS_EST", "SBE_F", "SBE_FSTAR")


def in_window(estimate: str, delta: float) -> bool:
    lo, hi, lo_closed, hi_closed, excluded = ESTIMATE_WINDOWS[estimate]
    above = delta >= lo if lo_closed else delta > lo
    below = delta <= hi if hi_closed else delta < hi
    return bool(above and below and all(abs(delta - e) > 1e-12 for e in excluded))


def check_window(estimate: str, delta: float, strict: bool = False) -> bool:
    """True when in the window; otherwise warn (or raise when ``strict``)."""
    if in_window(estimate, delta):
        return True
    lo, hi, lc, hc, excluded = ESTIMATE_WINDOWS[estimate]
    msg = (f"{estimate}: weight {delta} outside {'[' if lc else ']'}{lo}, {hi}{']' if hc else '['}"
           + (f" minus {list(excluded)}" if excluded else ""))
    if strict:
        raise WindowViolation(msg)
    warnings.warn(msg, WindowWarning, stacklevel=3)
    return False


@dataclass(frozen=True)
class EstimateConfig:
    """Chart for the estimates.  E_R estimates start at the Omega_R sphere, the others at ``r_inner``."""

    r_inner: float = 0.25
    r_outer: float = 0.95
    n_ang: int = 8
    q_radial: int = 2
    chunk: int = 4096
    tau: float = 1.0

    def lower_radius(self, estimate: str, R: float) -> float:
        if estimate in E_R_ESTIMATES:
            r = omega_radius(R)
            if not 0.0 < r < self.r_outer:
                raise DegenerateRegion(f"E_R for R={R} does not meet the chart")
            return r
        return self.r_inner

    def chart(self, estimate: str, R: float, resolution: int) -> ChartGrid:
        return build_ball_chart(self.lower_radius(estimate, R), self.r_outer, resolution, self.n_ang, self.q_radial)


def estimate_family(estimate: str, seed: int, size: int = 50, R: float = 1.0,
                    config: EstimateConfig = EstimateConfig()):
    """Default family of admissible test fields for an estimate.

    Shell modes with the (1 - t^2)^4 profile on random sub-shells of the
    estimate's support; ``COERCIVE_U`` adds rotation Killing 1-forms damped by
    a radial profile inside E_R; two-field estimates get (scalar, 1-form) pairs.
    """
    if estimate not in ESTIMATES:
        raise UnknownIdentity(estimate)
    from .constraint import LapseShift
    from .fields import rotation_killing, shell_mode
    from .wspace import TestFamily

    rng = np.random.default_rng(seed)
    support = ShellSupport(config.lower_radius(estimate, R), config.r_outer)
    mode = lambda rank: random_shell_mode(rng, support, rank, power=4)
    if estimate in PAIR_ESTIMATES:
        members = [LapseShift(mode((0, 0)), mode((0, 1))) for _ in range(size)]
    elif estimate in ("POINCARE_T", "POINCARE_T_GLOBAL", "SBE_A"):
        members = [mode((0, 0)) for _ in range(size)]
    else:
        members = [mode((0, 1)) for _ in range(size)]
    if estimate == "COERCIVE_U":
        n_kill = max(size // 5, 1)
        members = members[:size - n_kill]
        span = support.r_max - support.r_min
        for i in range(n_kill):
            width = span * (0.6 + 0.4 * (i + 1) / n_kill)
            r0 = support.r_max - width
            prof = shell_mode(r0, support.r_max, np.array([1.0]), degree=0, power=4)
            axis = rng.normal(size=3)
            members.append(rotation_killing(axis / np.linalg.norm(axis)).times(prof))
    return TestFamily(members, f"{estimate.lower()}-default", seed)


def _covariant_chain(jet, conn, variance: str, k: int) -> list[np.ndarray]:
    """Values of nabla^j u for j = 0..k."""
    from .tensor import covariant_derivative

    out = [jet.value]
    cur, var = jet, variance
    for _ in range(k):
        cur = covariant_derivative(cur, conn, var)
        var = "d" + var
        out.append(cur.value)
    return out


def _chain_norms(prefix: str, jet, conn, rho, down: int, k: int) -> dict[str, np.ndarray]:
    vals = _covariant_chain(jet, conn, "d" * down, k)
    return {f"{prefix}{j}": _hnorm(v, rho, 0, down + j) for j, v in enumerate(vals)}


@dataclass
class _Context:
    """Per-chunk background quantities shared by every family member."""

    pts: np.ndarray
    rho: np.ndarray
    conn: object
    point: object
    ref: object
    _ps: object = None

    @property
    def ps(self):
        if self._ps is None:
            self._ps = self.point.sample(self.pts, 2)
        return self._ps


def _context(pts: np.ndarray, point, ref) -> _Context:
    from .tensor import hyperbolic_connection

    rho = 0.5 * (1.0 - np.einsum("pi,pi->p", pts, pts))
    return _Context(pts, rho, hyperbolic_connection(pts, 1), point, ref)


def _phase_terms(ctx: _Context, N, X) -> dict[str, np.ndarray]:
    from .constraint import dphi_adjoint
    from .tensor import covariant_derivative

    ps, rho = ctx.ps, ctx.rho
    first, second = dphi_adjoint(ps, ctx.ref, N, X)
    dsec = covariant_derivative(second, ps.conn, "dd").value
    s = ps.s.value
    return {
        "A1": _hnorm(first.value, rho, 2, 0),
        "A2": _hnorm(second.value, rho, 0, 2),
        "dA2": _hnorm(dsec, rho, 0, 3),
        "P1": _hnorm(first.value / np.sqrt(s)[:, None, None], rho, 2, 0),
        "P2": _hnorm(dsec * np.sqrt(s)[:, None, None, None], rho, 0, 3),
    }


def _pointwise(estimate: str, member, ctx: _Context) -> dict[str, np.ndarray]:
    """Pointwise hyperbolic norms of every quantity entering an estimate."""
    from . import jets as J
    from .constraint import f_operator
    from .fields import coordinates, rho_jet
    from .geoops import model_operator_apply, op_S, op_T, op_U

    pts, rho, conn = ctx.pts, ctx.rho, ctx.conn
    if estimate in ("POINCARE_T", "POINCARE_T_GLOBAL", "SBE_A"):
        u = sample(member, pts, 2)
        out = _chain_norms("u", u, conn, rho, 0, 2)
        if estimate == "SBE_A":
            out["op"] = np.abs(model_operator_apply("A", u, conn).value)
        else:
            out["op"] = _hnorm(op_T(u, conn).field.value, rho, 0, 2)
        return out
    if estimate in ("KORN_S", "COERCIVE_U", "SBE_B"):
        Y = sample(member, pts, 2)
        out = _chain_norms("u", Y, conn, rho, 1, 2)
        if estimate == "SBE_B":
            out["op"] = _hnorm(model_operator_apply("B", Y, conn).value, rho, 0, 1)
        else:
            out["S"] = _hnorm(op_S(Y, conn).field.value, rho, 0, 2)
            if estimate == "COERCIVE_U":
                out["U"] = _hnorm(op_U(Y, conn).value, rho, 0, 3)
        return out
    N, X = member.sample(pts, 2)
    out = _chain_norms("N", N, conn, rho, 0, 2)
    out.update(_chain_norms("X", X, conn, rho, 1, 2))
    if estimate in ("SBE_F", "SBE_FSTAR"):
        r2 = rho_jet(coordinates(pts, 2)) ** 2.0
        f0, fi = f_operator(ctx.ps, ctx.ref, N, J.scale(r2, X))
        out["F0"] = np.abs(f0)
        out["Fi"] = _hnorm(fi, rho, 0, 1)
    else:
        out.update(_phase_terms(ctx, N, X))
    return out


# Norm terms: (pointwise key, weight factor a, weight offset b, region) meaning ||key||_{2, a w + b} over region.
_LHS2 = lambda *names: [(f"{n}{j}", 1.0, 0.0, None) for n in names for j in range(3)]
_LHS1 = lambda *names: [(f"{n}{j}", 1.0, 0.0, None) for n in names for j in range(2)]


def _terms(estimate: str) -> tuple[list, list]:
    if estimate in ("POINCARE_T", "POINCARE_T_GLOBAL"):
        return _LHS2("u"), [("op", 1.0, 0.0, None)]
    if estimate == "KORN_S":
        return _LHS1("u"), [("S", 1.0, 0.0, None)]
    if estimate == "COERCIVE_U":
        return _LHS1("u"), [("U", 1.0, 0.0, None), ("S", 1.0, 0.0, None)]
    if estimate in ("SBE_A", "SBE_B"):
        return _LHS2("u"), [("op", 1.0, 0.0, None), ("u0", 1.0, 0.0, "OMEGA")]
    lhs = _LHS2("N", "X")
    if estimate == "ADJ_35CG":
        low = [(k, 2.0, 0.0, None) for k in ("N0", "N1", "X0", "X1")]
        return lhs, [("A1", 1.0, 0.0, None), ("A2", 1.0, 0.0, None), ("dA2", 1.0, 0.0, None)] + low
    if estimate == "ADJ_422":
        low = [(k, 2.0, 0.0, None) for k in ("N0", "X0")]
        return lhs, [("A1", 1.0, 0.0, None), ("A2", 1.0, 0.0, None), ("dA2", 1.0, 0.0, None)] + low
    if estimate == "PS_EST":
        low = [(k, 2.0, 0.0, None) for k in ("N0", "N1", "X0", "X1")]
        return lhs, [("P1", 1.0, 0.0, None), ("P2", 1.0, 0.0, None)] + low
    F = [("F0", 1.0, 0.0, None), ("Fi", 1.0, 0.0, None)]
    omega = [("N0", 1.0, 0.0, "OMEGA"), ("X0", 1.0, 0.0, "OMEGA")]
    if estimate == "SBE_F":
        return lhs, F + [("N0", 0.0, 0.0, None), ("X0", 0.0, 0.0, None)] + omega
    return lhs, F + [("N0", 2.0, 0.0, None), ("X0", 2.0, 0.0, None)] + omega


def _term_norm(values: np.ndarray, rho: np.ndarray, qw: np.ndarray, weight: float) -> float:
    return float(np.sqrt(np.sum(qw * rho ** (2.0 * weight - DIM) * values**2)))


def _member_ratios(estimate: str, pw: dict[str, np.ndarray], chart: ChartGrid, deltas: Sequence[float],
                   R: float) -> list[tuple[float, float, float]]:
    """(ratio, lhs, rhs) for each weight."""
    lhs_terms, rhs_terms = _terms(estimate)
    rho, qw = chart.rho, chart.quad_weights
    omega = rho > np.exp(-2.0 * R)
    out = []
    for w in deltas:
        def total(terms):
            acc = 0.0
            for key, a, b, region in terms:
                sel = omega if region == "OMEGA" else slice(None)
                acc += _term_norm(pw[key][sel], rho[sel], qw[sel], a * w + b)
            return acc

        lhs, rhs = total(lhs_terms), total(rhs_terms)
        out.append((lhs / rhs if rhs > 0 else float("inf"), lhs, rhs))
    return out


def _check_family_support(estimate: str, family, chart: ChartGrid) -> None:
    pts, _ = chart.sphere("inner")
    if estimate not in E_R_ESTIMATES:
        return
    for i, m in enumerate(family.members):
        fields_ = [m.N, m.X] if hasattr(m, "N") else [m]
        for f in fields_:
            jet = sample(f, pts, 2)
            size = max(float(np.max(np.abs(d))) for d in jet.derivs)
            if size > SUPPORT_TOL:
                raise SupportViolation(f"{estimate}: member {i} is not supported in E_R (size {size:.3e} on its sphere)")


def scan_constants(estimate: str, family, deltas: Sequence[float], R: float = 1.0, *, resolution: int = 32,
                   point=None, config: EstimateConfig = EstimateConfig(),
                   strict_window: bool = False) -> list[ConstantEstimate]:
    """``estimate_constant`` at several weights, sharing the pointwise evaluation of the family."""
    from .constraint import background_point, reference_data
    from .wspace import WeightSpec

    if estimate not in ESTIMATES:
        raise UnknownIdentity(f"unknown estimate {estimate!r}; known: {', '.join(ESTIMATES)}")
    if len(family) == 0:
        raise EmptyFamily(f"empty test family for {estimate}")
    flags = [check_window(estimate, float(d), strict_window) for d in deltas]
    ref = reference_data(config.tau)
    point = point if point is not None else background_point(config.tau)
    chart = config.chart(estimate, R, resolution)
    _check_family_support(estimate, family, chart)
    parts: list[dict[str, list]] = [{} for _ in family.members]
    for start in range(0, chart.size, config.chunk):
        ctx = _context(chart.points[start:start + config.chunk], point, ref)
        for i, m in enumerate(family.members):
            for k, v in _pointwise(estimate, m, ctx).items():
                parts[i].setdefault(k, []).append(v)
    per_member = [_member_ratios(estimate, {k: np.concatenate(v) for k, v in pm.items()}, chart, deltas, R)
                  for pm in parts]
    out = []
    for i, (d, ok) in enumerate(zip(deltas, flags)):
        ratios = [pm[i][0] for pm in per_member]
        best = int(np.argmax(ratios))
        meta = {"estimate": estimate, "delta": float(d), "statement_delta": -float(d), "in_window": ok,
                "resolution": resolution, "R": R, "family": family.name, "seed": family.seed, "argmax": best,
                "label": "consistent-with", "tau": config.tau}
        region = {"kind": "E" if estimate in E_R_ESTIMATES else "ALL", "R": R}
        out.append(ConstantEstimate(float(ratios[best]), len(ratios), [WeightSpec(0, 2.0, float(d))], region,
                                    ratios, meta))
    return out


def estimate_constant(estimate: str, family, delta: float, R: float = 1.0, *, resolution: int = 32, point=None,
                      config: EstimateConfig = EstimateConfig(), strict_window: bool = False,
                      both_parameterizations: bool = True) -> ConstantEstimate:
    """Sup over the family of LHS / RHS for one weighted estimate.

    The right-hand side is the sum of every norm on the right of the
    estimate (lower-order and Omega_R terms included), so the value bounds
    each individual constant from below.  Members of the two-field
    estimates are ``LapseShift`` pairs; for SBE_F and SBE_FSTAR the 1-form is
    the lowered Y.  For POINCARE_T the value at -delta (the weight read as
    written in the window statement) is also attached.
    """
    deltas = [float(delta)]
    mirrored = estimate == "POINCARE_T" and both_parameterizations
    if mirrored:
        deltas.append(-float(delta))
    with warnings.catch_warnings():
        if mirrored:
            warnings.simplefilter("ignore", WindowWarning)
            check_window(estimate, float(delta), strict_window)
        ests = scan_constants(estimate, family, deltas, R, resolution=resolution, point=point, config=config,
                              strict_window=strict_window and not mirrored)
    est = ests[0]
    if mirrored:
        est.metadata["parameterizations"] = {"canonical": est.value, "as_written": ests[1].value,
                                             "as_written_delta": -float(delta)}
    return est


def refinement_study(estimate: str, family, delta: float, R: float = 1.0,
                     resolutions: Sequence[int] = (32, 48, 64), **kwargs) -> dict:
    """Constants across resolutions with the spread (max - min) / min."""
    vals = [estimate_constant(estimate, family, delta, R, resolution=r, **kwargs).value for r in resolutions]
    spread = (max(vals) - min(vals)) / min(vals) if min(vals) > 0 else float("inf")
    return {"estimate": estimate, "delta": delta, "R": R, "resolutions": list(resolutions), "values": vals,
            "spread": spread, "finite": bool(np.all(np.isfinite(vals)))}


# ---------------------------------------------------------------------------
# kernel probe

KERNEL_WINDOW = (-2.0, -1.0)


@dataclass(frozen=True)
class KernelConfig:
    """Spline trial space for the discrete P*: clamped cubic splines times angular degree <= ell_max."""

    r_inner: float = 0.25
    r_outer: float = 0.9
    ell_max: int = 1
    n_ang: int = 6
    q: int = 4
    tol: float = 1e-8
    max_outer: int = 200
    chunk: int = 256
    variation_tol: float = 0.2
    planted_tol: float = 0.2


def _pstar_op(point, ref):
    from .constraint import p_star

    def op(points, inputs, reps):
        ps = point.sample(points, 2).tile(reps)
        return list(p_star(ps, ref, inputs[0], inputs[1]))

    return op


def _pstar_weights(w: float):
    def weights(points):
        rho = 0.5 * (1.0 - np.einsum("pi,pi->p", points, points))
        base = rho ** (2.0 * w - DIM)
        return [base * rho**-4.0, base * rho**6.0]

    return weights


def _domain_op(points, inputs, reps):
    from .tensor import covariant_derivative, hyperbolic_connection, tile_connection

    conn = tile_connection(hyperbolic_connection(points, 1), reps)
    out = []
    for u, var in ((inputs[0], ""), (inputs[1], "d")):
        d1 = covariant_derivative(u, conn, var)
        out += [u.value, d1.value, covariant_derivative(d1, conn, "d" + var).value]
    return out


def _domain_weights(w: float):
    def weights(points):
        rho = 0.5 * (1.0 - np.einsum("pi,pi->p", points, points))
        base = rho ** (2.0 * w - DIM)
        return [base * rho ** (2.0 * (rank + j)) for rank in (0, 1) for j in range(3)]

    return weights


KERNEL_SHAPES = [(), (DIM,)]


def _gram_with_extras(basis, op, weights, extras: Sequence[tuple[TensorField, TensorField]],
                      chunk: int) -> np.ndarray:
    """sum_p w_p L_p^T L_p over the spline dofs followed by one column per extra (N, X) pair."""
    from .basis import operator_rows

    pts_all = basis.chart.points
    qw_all = basis.chart.quad_weights
    ndof = basis.size * (1 + DIM) + len(extras)
    gram = np.zeros((ndof, ndof))
    for start in range(0, pts_all.shape[0], chunk):
        pts = pts_all[start:start + chunk]
        qw = qw_all[start:start + chunk]
        rows = operator_rows(basis, op, KERNEL_SHAPES, pts)
        ex = [op(pts, [sample(N, pts, 2), sample(X, pts, 2)], 1) for N, X in extras]
        for k, (L, w) in enumerate(zip(rows, weights(pts))):
            if ex:
                cols = np.stack([e[k].reshape(pts.shape[0], -1) for e in ex], axis=-1)
                L = np.concatenate([L, cols], axis=2)
            Lw = (L * np.sqrt(qw * w)[:, None, None]).reshape(-1, ndof)
            gram += Lw.T @ Lw
    return 0.5 * (gram + gram.T)


@dataclass
class SmallestPair:
    """Smallest generalized eigenvalue: dense value, inverse-iteration Rayleigh quotient and its history."""

    value: float
    iterative: float
    vector: np.ndarray
    iterations: int
    inner_iterations: int
    settled: bool


def smallest_generalized(A: np.ndarray, G: np.ndarray, tol: float = 1e-8, max_outer: int = 200,
                         seed: int = 0) -> SmallestPair:
    """Smallest lam of A x = lam G x.

    The value comes from the dense symmetric-definite solver.  Inverse
    iteration with PCG inner solves runs alongside (stop when the Rayleigh
    quotient changes by at most ``tol`` relative, or after ``max_outer``
    steps); its quotient is an upper bound that must not undercut the dense
    value.  On clustered spectra it may stop unsettled, which is reported.
    """
    from scipy.linalg import eigh

    from .errors import SolverDivergence
    from .geoops import pcg

    dense_vals, dense_vecs = eigh(A, G, subset_by_index=[0, 0])
    n = A.shape[0]
    diag = np.diag(A).copy()
    x = np.random.default_rng(seed).normal(size=n)
    x /= np.sqrt(x @ G @ x)
    lam_old = np.inf
    inner = 0
    settled = False
    it = 0
    for it in range(1, max_outer + 1):
        res = pcg(A, G @ x, tol=1e-12, maxiter=20 * n, precond=diag)
        if not res.converged:
            raise SolverDivergence(f"inner PCG solve stalled at outer step {it}")
        inner += res.iterations
        z = res.x
        x = z / np.sqrt(z @ G @ z)
        lam = float(x @ A @ x)
        if abs(lam - lam_old) <= tol * abs(lam):
            settled = True
            break
        lam_old = lam
    return SmallestPair(float(dense_vals[0]), lam, dense_vecs[:, 0], it, inner, settled)


def planted_cosh(config: KernelConfig = KernelConfig()):
    """The cosh-distance function cut off by a (1 - t^2)^4 profile on the trial shell, with zero shift."""
    from .constraint import LapseShift
    from .fields import constant, cosh_distance, shell_mode

    prof = shell_mode(config.r_inner, config.r_outer, np.array([1.0]), degree=0, power=4)
    return LapseShift(cosh_distance().times(prof), constant(np.zeros(DIM), (0, 1)))


def kernel_probe(point, ref, delta: float = -1.5, ladder: Sequence[int] = (16, 24, 32), *,
                 config: KernelConfig = KernelConfig(), planted: bool = True, seed: int = 0,
                 strict_window: bool = False) -> ProbeReport:
    """Smallest singular value of the discrete P* from W^{2,2} to L^2, both with weight -delta.

    ``delta`` is the weight as it appears in the kernel statement, so the
    module exponent is w = -delta.  With ``planted`` the damped cosh function
    is appended to the trial space and the smallest singular value is
    recomputed; it must not drop by more than ``planted_tol``.
    """
    lo, hi = KERNEL_WINDOW
    ok = lo < delta < hi
    if not ok:
        msg = f"kernel probe: delta = {delta} outside ]{lo}, {hi}["
        if strict_window:
            raise WindowViolation(msg)
        warnings.warn(msg, WindowWarning, stacklevel=2)
    from .basis import ShellBasis

    w = -float(delta)
    op = _pstar_op(point, ref)
    extras = [(planted_cosh(config).N, planted_cosh(config).X)] if planted else []
    sigmas, iterative, iters, settled, aug, quotients = [], [], [], [], [], []
    for n in ladder:
        basis = ShellBasis(config.r_inner, config.r_outer, int(n), ell_max=config.ell_max, n_ang=config.n_ang,
                           q=config.q)
        A = _gram_with_extras(basis, op, _pstar_weights(w), extras, config.chunk)
        G = _gram_with_extras(basis, _domain_op, _domain_weights(w), extras, config.chunk)
        m = A.shape[0] - len(extras)
        pair = smallest_generalized(A[:m, :m], G[:m, :m], config.tol, config.max_outer, seed)
        sigmas.append(float(np.sqrt(max(pair.value, 0.0))))
        iterative.append(float(np.sqrt(max(pair.iterative, 0.0))))
        iters.append(pair.iterations)
        settled.append(pair.settled)
        if planted:
            from scipy.linalg import eigh

            lam_aug = eigh(A, G, eigvals_only=True, subset_by_index=[0, 0])[0]
            aug.append(float(np.sqrt(max(lam_aug, 0.0))))
            quotients.append(float(np.sqrt(A[-1, -1] / G[-1, -1])))
    variation = (max(sigmas) - min(sigmas)) / max(sigmas) if max(sigmas) > 0 else float("inf")
    passed = bool(min(sigmas) > 0 and variation <= config.variation_tol)
    gaps = [(it - sg) / sg if sg > 0 else float("inf") for it, sg in zip(iterative, sigmas)]
    outcomes = {"sigma_min": sigmas, "sigma_min_inverse_iteration": iterative, "outer_iterations": iters,
                "settled": settled, "iteration_gap": gaps, "variation": variation}
    passed = passed and min(gaps) >= -1e-8
    if planted:
        drops = [1.0 - a / s for a, s in zip(aug, sigmas)]
        outcomes.update({"sigma_min_with_planted": aug, "planted_quotient": quotients,
                         "planted_drop": drops})
        passed = passed and max(drops) <= config.planted_tol
    params = {"delta": float(delta), "w": w, "tau": ref.tau, "ladder": [int(n) for n in ladder],
              "in_window": ok, "r_inner": config.r_inner, "r_outer": config.r_outer, "ell_max": config.ell_max,
              "seed": seed}
    return ProbeReport("KERNEL", params, outcomes, passed)


# ---------------------------------------------------------------------------
# Lipschitz probe


@dataclass(frozen=True)
class LipschitzConfig:
    r_inner: float = 0.25
    r_outer: float = 0.95
    n_ang: int = 8
    q_radial: int = 2
    resolution: int = 32
    chunk: int = 4096
    stability_tol: float = 0.2

    def chart(self) -> ChartGrid:
        return build_ball_chart(self.r_inner, self.r_outer, self.resolution, self.n_ang, self.q_radial)


def separation_norm(first, second, delta: float, chart: ChartGrid) -> float:
    """||g - g~||_{2,2,delta} + ||pi - pi~||_{1,2,delta} (weights as in the phase space)."""
    from .wspace import WeightSpec, weighted_norm

    dg = weighted_norm(first.g - second.g, WeightSpec(2, 2.0, delta), chart)
    dp = weighted_norm(first.pi - second.pi, WeightSpec(1, 2.0, delta), chart)
    return dg + dp


def lipschitz_probe(points: tuple, ref, family, delta: float = -1.5, *,
                    config: LipschitzConfig = LipschitzConfig()) -> ConstantEstimate:
    """sup over xi of ||(P*_1 - P*_2) xi||_{2,-delta} / (||(g - g~, pi - pi~)||_F ||xi||_{2,2,-delta}).

    ``delta`` is the phase-space weight (delta <= 0); the P* norms use
    w = -delta.  Identical points return 0 with the ``zero_separation`` flag.
    """
    from .constraint import p_star
    from .wspace import WeightSpec

    if len(family) == 0:
        raise EmptyFamily("empty xi family for the Lipschitz probe")
    first, second = points
    chart = config.chart()
    w = -float(delta)
    sep = 0.0 if first is second else separation_norm(first, second, delta, chart)
    meta = {"estimate": "LIPSCHITZ", "delta": float(delta), "w": w, "tau": ref.tau, "separation": sep,
            "resolution": config.resolution, "label": "consistent-with"}
    spec = [WeightSpec(0, 2.0, w)]
    if sep == 0.0:
        meta["zero_separation"] = True
        return ConstantEstimate(0.0, len(family), spec, None, [0.0] * len(family), meta)
    keys = ("D1", "D2", "N0", "N1", "N2", "X0", "X1", "X2")
    sums = [dict.fromkeys(keys, 0.0) for _ in family.members]
    wq = chart.quad_weights
    for start in range(0, chart.size, config.chunk):
        ctx = _context(chart.points[start:start + config.chunk], first, ref)
        ps2 = second.sample(ctx.pts, 2)
        wt = wq[start:start + config.chunk] * ctx.rho ** (2.0 * w - DIM)
        for i, m in enumerate(family.members):
            N, X = m.sample(ctx.pts, 2)
            a1, a2 = p_star(ctx.ps, ref, N, X)
            b1, b2 = p_star(ps2, ref, N, X)
            pw = {"D1": _hnorm(a1 - b1, ctx.rho, 2, 0), "D2": _hnorm(a2 - b2, ctx.rho, 0, 3)}
            pw.update(_chain_norms("N", N, ctx.conn, ctx.rho, 0, 2))
            pw.update(_chain_norms("X", X, ctx.conn, ctx.rho, 1, 2))
            for k in keys:
                sums[i][k] += float(wt @ pw[k] ** 2)
    ratios = []
    for s in sums:
        num = np.sqrt(s["D1"]) + np.sqrt(s["D2"])
        den = sum(np.sqrt(s[k]) for k in keys[2:])
        ratios.append(float(num / (sep * den)))
    best = int(np.argmax(ratios))
    meta["argmax"] = best
    return ConstantEstimate(ratios[best], len(ratios), spec, None, ratios, meta)


def lipschitz_sequence(h: TensorField, p: TensorField | None, family, tau: float = 1.0, delta: float = -1.5,
                       ts: Sequence[float] = (1e-1, 1e-2, 1e-3), *,
                       config: LipschitzConfig = LipschitzConfig()) -> ProbeReport:
    """Lipschitz ratios between the background and (g + t h, pi + t p) along a shrinking t sequence."""
    from .constraint import background_point, perturbed_point, reference_data

    ref = reference_data(tau)
    base = background_point(tau)
    values = [lipschitz_probe((base, perturbed_point(tau, h, p, t)), ref, family, delta, config=config).value
              for t in ts]
    spread = (max(values) - min(values)) / min(values) if min(values) > 0 else float("inf")
    params = {"tau": tau, "delta": delta, "t": [float(t) for t in ts], "time_symmetric": p is None and tau == 0.0,
              "resolution": config.resolution}
    return ProbeReport("LIPSCHITZ", params, {"ratios": values, "spread": spread},
                       bool(np.all(np.isfinite(values)) and spread <= config.stability_tol))


def normal_direction_family(seed: int, size: int = 50, config: EstimateConfig = EstimateConfig()):
    """1-forms f(r) rho^mu omega with omega = d rho / rho, mu uniform in [-1, 1], f a (1 - t^2)^4 profile.

    These load only the normal component <Y, omega>, the direction whose
    coefficient in the weighted Korn identity vanishes at w = (n - 1) / 2;
    they serve as the witness family for the excluded Korn weight.
    """
    from . import jets as J
    from .fields import rho_jet, shell_mode
    from .wspace import TestFamily

    rng = np.random.default_rng(seed)
    span = config.r_outer - config.r_inner
    members = []
    for _ in range(size):
        width = rng.uniform(0.6, 1.0) * span
        r0 = config.r_inner + rng.uniform(0.0, span - width)
        mu = rng.uniform(-1.0, 1.0)
        prof = shell_mode(r0, r0 + width, np.array([1.0]), degree=0, power=4)

        def fn(X, prof=prof, mu=mu):
            return J.scale(prof(X) * rho_jet(X) ** (mu - 1.0), X) * -1.0

        members.append(TensorField(fn, (0, 1), "normal_mode"))
    return TestFamily(members, "normal-direction", seed)


def relative_perturbation(seed: int, support: ShellSupport = ShellSupport(0.3, 0.9), scale: float = 1.0):
    """(h, p) of hyperbolic size O(scale): rho^-2 and rho^2 times (1 - t^2)^4 shell modes.

    Cartesian components of a bounded (0, 2) tensor grow like rho^-2 and
    those of a bounded (2, 0) tensor decay like rho^2, so these perturb the
    background by a fixed relative amount everywhere on their support.
    """
    from .fields import rho_power

    rng = np.random.default_rng(seed)
    h = random_shell_mode(rng, support, (0, 2), power=4, full=True).times(rho_power(-2.0)) * scale
    p = random_shell_mode(rng, support, (2, 0), power=4, full=True).times(rho_power(2.0)) * scale
    return h, p
