"""Connections, covariant derivatives, curvature and the conformal identities.

All operations act on jets (see ``jets``).  Tensor slots carry Cartesian
components with contravariant slots listed first.  Curvature follows

    R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db} - G^a_{de} G^e_{cb},
    Riem_{abcd} = g_{ae} R^e_{bcd},   Ric_{bd} = R^a_{bad},

under which hyperbolic space has Riem_{ijkl} = g_il g_jk - g_ik g_jl and
Ric = -2 g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jets as J
from .errors import SingularMetric, UnknownIdentity
from .fields import HYPERBOLIC_METRIC, RHO, TensorField, bump, coordinates, rho_jet, rho_power, sample
from .jets import Jet
from .records import Residual, residual_from_values

DIM = 3
_SLOTS = "abcdefgh"


@dataclass(frozen=True)
class Connection:
    """Levi-Civita connection: ``gamma`` has slots (k, i, j) for G^k_{ij}."""

    gamma: Jet
    metric: Jet
    inverse: Jet


@dataclass(frozen=True)
class CurvatureBundle:
    riemann: Jet  # Riem_{abcd}, all lower
    ricci: Jet
    scalar: Jet
    riemann_mixed: Jet  # R^a_{bcd}


def check_metric(g: Jet) -> None:
    v = g.value
    if not np.all(np.isfinite(v)):
        raise SingularMetric("metric has non-finite components")
    if np.any(np.linalg.det(v) <= 0.0):
        raise SingularMetric("metric determinant is not positive at some node")


def christoffel(g: Jet) -> Connection:
    """Levi-Civita symbols of the metric jet ``g`` (order drops by one)."""
    check_metric(g)
    k = g.order - 1
    if k < 0:
        raise ValueError("metric jet needs first derivatives")
    ginv = J.inv(g.truncate(k))
    dg = g.d()  # slots (l, i, j) = d_l g_ij
    low = (dg.permute([2, 0, 1]) + dg.permute([2, 1, 0]) - dg) * 0.5  # slots (l, i, j) lowered
    gamma = J.contract("kl,lij->kij", ginv, low)
    return Connection(gamma, g, J.inv(g))


def covariant_derivative(T: Jet, conn: Connection, variance: str) -> Jet:
    """Covariant derivative; the new derivative index is the first slot.

    ``variance`` lists each slot of ``T`` as "u" (upper) or "d" (lower).
    """
    if len(variance) != len(T.shape):
        raise ValueError("variance string does not match tensor rank")
    G = conn.gamma
    k = min(T.order - 1, G.order)
    G = G.truncate(k)
    out = T.d().truncate(k)
    Tk = T.truncate(k)
    slots = _SLOTS[: len(variance)]
    for p, v in enumerate(variance):
        replaced = slots[:p] + "z" + slots[p + 1:]
        if v == "u":
            out = out + J.contract(f"{slots[p]}xz,{replaced}->x{slots}", G, Tk)
        else:
            out = out - J.contract(f"zx{slots[p]},{replaced}->x{slots}", G, Tk)
    return out


def hessian(u: Jet, conn: Connection) -> Jet:
    return covariant_derivative(covariant_derivative(u, conn, ""), conn, "d")


def laplacian(u: Jet, conn: Connection, variance: str = "") -> Jet:
    """Rough Laplacian g^{ij} nabla_i nabla_j of a tensor jet."""
    d1 = covariant_derivative(u, conn, variance)
    d2 = covariant_derivative(d1, conn, "d" + variance)
    rest = _SLOTS[: len(variance)]
    ginv = conn.inverse.truncate(d2.order)
    return J.contract(f"xy,xy{rest}->{rest}", ginv, d2)


def curvature(g: Jet) -> CurvatureBundle:
    conn = christoffel(g)
    G = conn.gamma
    if G.order < 1:
        raise ValueError("metric jet needs second derivatives for curvature")
    dG = G.d()  # slots (x, a, i, j) = d_x G^a_ij
    k = dG.order
    Gk = G.truncate(k)
    mixed = (dG.permute([1, 3, 0, 2]) - dG.permute([1, 3, 2, 0])
             + J.contract("ace,edb->abcd", Gk, Gk) - J.contract("ade,ecb->abcd", Gk, Gk))
    gk = g.truncate(k)
    riem = J.contract("ae,ebcd->abcd", gk, mixed)
    ric = J.trace(mixed, "abad->bd")
    scal = J.contract("bd,bd->", conn.inverse.truncate(k), ric)
    return CurvatureBundle(riem, ric, scal, mixed)


def a_tensor(g: Jet, g_ref: Jet) -> Jet:
    """Difference of Levi-Civita connections G(g) - G(g_ref), slots (k, i, j)."""
    return christoffel(g).gamma - christoffel(g_ref).gamma


def ricci_difference(g: Jet, g_ref: Jet) -> Jet:
    """Ric(g) - Ric(g_ref) written through the connection difference A and the reference connection."""
    ref = christoffel(g_ref)
    A = christoffel(g).gamma - ref.gamma
    dA = covariant_derivative(A, ref, "udd")  # slots (x, i, j, k)
    k = dA.order
    Ak = A.truncate(k)
    return (J.trace(dA, "iijk->jk") - J.trace(dA, "jiik->jk")
            + J.contract("mjk,iim->jk", Ak, Ak) - J.contract("ijm,mki->jk", Ak, Ak))


def scalar_curvature_covariant(g: Jet, g_ref: Jet) -> Jet:
    """R(g) = g^{jk} (Ric(g_ref)_{jk} + ricci difference)."""
    diff = ricci_difference(g, g_ref)
    k = diff.order
    ric_ref = curvature(g_ref).ricci.truncate(k)
    return J.contract("jk,jk->", J.inv(g.truncate(k)), ric_ref + diff)


def tensor_norm_sq(T: Jet | np.ndarray, g: np.ndarray, variance: str) -> np.ndarray:
    """Pointwise squared norm of a tensor (values only) with respect to metric values ``g``."""
    t = T.value if isinstance(T, Jet) else np.asarray(T)
    ginv = np.linalg.inv(g)
    n = len(variance)
    a = _SLOTS[:n]
    b = "".join(chr(ord(c) + 16) for c in a)  # disjoint letters for the second copy
    ops = [t]
    parts = [f"p{a}"]
    for p, v in enumerate(variance):
        ops.append(g if v == "u" else ginv)
        parts.append(f"p{a[p]}{b[p]}")
    ops.append(t)
    parts.append(f"p{b}")
    return np.einsum(",".join(parts) + "->p", *ops)


# ---------------------------------------------------------------------------
# conformal identities on the ball model

CONFORMAL_IDENTITIES = ("CHRISTOFFEL_CONF", "HESS_RHO", "LAPL_RHO", "LAPL_GEN", "NORM_REL", "HESS_RHOINV",
                        "LAPL_RHOINV")

DEFAULT_TEST_BUMP = bump((0.3, -0.2, 0.35), 0.3, 1.0)
_NORM_TEST = bump((-0.1, 0.4, 0.2), 0.35, np.arange(9.0).reshape(3, 3) - 3.5, (0, 2))
_NORM_TEST_MIXED = bump((-0.1, 0.4, 0.2), 0.35, np.sin(np.arange(27.0)).reshape(3, 3, 3), (2, 1))


def _identity_sides(which: str, points: np.ndarray, fd_step: float | None, field: TensorField | None):
    """(lhs, rhs, variance) value arrays for one conformal identity."""
    n = points.shape[0]
    g = sample(HYPERBOLIC_METRIC, points, 2, fd_step)
    rho = sample(RHO, points, 2, fd_step)
    gv = g.value
    r = rho.value
    drho = rho.d().truncate(0).value
    a = np.einsum("pi,pi->p", drho, drho)
    hess_h = rho.derivs[2]
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    omega = drho / r[:, None]
    if which == "CHRISTOFFEL_CONF":
        conn = christoffel(g.truncate(1))
        rhs = -(np.einsum("kj,pi->pkij", np.eye(3), drho) + np.einsum("ki,pj->pkij", np.eye(3), drho)
                - np.einsum("ij,pk->pkij", np.eye(3), drho)) / r[:, None, None, None]
        return conn.gamma.value, rhs, "udd"
    if which in ("HESS_RHO", "LAPL_RHO"):
        conn = christoffel(g)
        H = hessian(rho, conn).value
        rhs = hess_h + r[:, None, None] * (2 * np.einsum("pi,pj->pij", omega, omega) - gv * a[:, None, None])
        if which == "HESS_RHO":
            return H, rhs, "dd"
        lhs = np.einsum("pij,pij->p", np.linalg.inv(gv), H)
        lap_h = np.trace(hess_h, axis1=1, axis2=2)
        return lhs, r**2 * lap_h - (DIM - 2) * r * a, ""
    if which == "LAPL_GEN":
        u = sample(field or DEFAULT_TEST_BUMP, points, 2, fd_step)
        conn = christoffel(g)
        lhs = laplacian(u, conn).value
        du = u.derivs[1]
        lap_h = np.trace(u.derivs[2], axis1=1, axis2=2)
        rhs = r**2 * (lap_h - (DIM - 2) / r * np.einsum("pi,pi->p", drho, du))
        return lhs, rhs, ""
    if which == "NORM_REL":
        out_l, out_r = [], []
        for fld in ([field] if field is not None else [_NORM_TEST, _NORM_TEST_MIXED]):
            u = sample(fld, points, 0, None)
            var = fld.variance
            m, rr = fld.rank[1], fld.rank[0]
            lhs = np.sqrt(tensor_norm_sq(u, gv, var))
            rhs = r ** (m - rr) * np.sqrt(tensor_norm_sq(u, np.asarray(eye), var))
            out_l.append(lhs)
            out_r.append(rhs)
        return np.stack(out_l, 1), np.stack(out_r, 1), "s"
    if which in ("HESS_RHOINV", "LAPL_RHOINV"):
        inv_rho = sample(rho_power(-1.0), points, 2, fd_step)
        conn = christoffel(g)
        H = hessian(inv_rho, conn).value
        if which == "HESS_RHOINV":
            rhs = (a / r)[:, None, None] * gv - hess_h / (r**2)[:, None, None]
            return H, rhs, "dd"
        lhs = np.einsum("pij,pij->p", np.linalg.inv(gv), H)
        return lhs, DIM * a / r - np.trace(hess_h, axis1=1, axis2=2), ""
    raise UnknownIdentity(which)


def conformal_identity_residual(which: str, points: np.ndarray, fd_step: float | None = None,
                                field: TensorField | None = None) -> Residual:
    """Residual of one conformal identity, measured pointwise in the hyperbolic norm.

    ``fd_step=None`` uses analytic jets; otherwise every input field is
    differentiated by central differences with that (rho-scaled) step.
    """
    if which not in CONFORMAL_IDENTITIES:
        raise UnknownIdentity(which)
    lhs, rhs, var = _identity_sides(which, points, fd_step, field)
    diff = lhs - rhs
    if var in ("", "s"):
        pw = np.abs(diff).reshape(diff.shape[0], -1).max(axis=1)
    else:
        gv = HYPERBOLIC_METRIC(J.Jet([points])).value
        pw = np.sqrt(np.abs(tensor_norm_sq(diff, gv, var)))
    res = residual_from_values(pw)
    res.metadata.update({"identity": which, "path": "analytic" if fd_step is None else "fd",
                         "fd_step": fd_step, "nodes": int(points.shape[0])})
    return res


def hyperbolic_connection(points: np.ndarray, order: int = 1, fd_step: float | None = None) -> Connection:
    """Connection of the ball metric with ``order`` derivatives on the symbols.

    The analytic path uses the closed conformal form of the symbols (checked
    against the general construction by the CHRISTOFFEL_CONF identity); the
    FD path differentiates the metric numerically.
    """
    if fd_step is not None:
        return christoffel(sample(HYPERBOLIC_METRIC, points, order + 1, fd_step))
    X = coordinates(points, order + 1)
    rho = rho_jet(X)
    eye = J.Jet.constant(np.eye(3), X.npts, order + 1)
    g = J.scale(rho ** -2.0, eye)
    ginv = J.scale(rho * rho, eye)
    drho = rho.d()
    eye_k = eye.truncate(order)
    term = (J.contract("kj,i->kij", eye_k, drho) + J.contract("ki,j->kij", eye_k, drho)
            - J.contract("ij,k->kij", eye_k, drho))
    gamma = -J.scale(J.reciprocal(rho.truncate(order)), term)
    return Connection(gamma, g, ginv)


def tile_connection(conn: Connection, reps: int) -> Connection:
    return Connection(tile_jet(conn.gamma, reps), tile_jet(conn.metric, reps), tile_jet(conn.inverse, reps))


def tile_jet(a: Jet, reps: int) -> Jet:
    """Repeat a jet ``reps`` times along the point axis."""
    return Jet([np.concatenate([d] * reps, axis=0) for d in a.derivs])


def raise_index(w: Jet, conn: Connection) -> Jet:
    return J.contract("ij,j->i", conn.inverse.truncate(w.order), w)


def lower_index(v: Jet, conn: Connection) -> Jet:
    return J.contract("ij,j->i", conn.metric.truncate(v.order), v)
