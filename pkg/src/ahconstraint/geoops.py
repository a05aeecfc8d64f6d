"""Background operators: the Hessian-type T, the Killing operator S, the second-order U,
the second-derivative identity for 1-forms, and the model operators A = -Lap + 3 and
B = -Lap + 2 with a weighted least-squares solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jets as J
from .basis import ShellBasis, assemble
from .errors import KindMismatch, SolverDivergence, WeightOutOfRange
from .fields import TensorField, coordinates, sample
from .jets import Jet
from .records import Residual, residual_from_values
from .tensor import (Connection, covariant_derivative, curvature, christoffel, hessian, hyperbolic_connection,
                     laplacian, raise_index, tensor_norm_sq, tile_connection)

DIM = 3
MODEL_WINDOW = (DIM + 1) / 2.0


@dataclass(frozen=True)
class OperatorOutput:
    field: Jet
    trace: Jet


def op_T(N: Jet, conn: Connection) -> OperatorOutput:
    """Hessian minus N times the metric; trace is Lap N - 3N."""
    H = hessian(N, conn)
    g = conn.metric.truncate(H.order)
    T = H - J.scale(N.truncate(H.order), g)
    return OperatorOutput(T, J.contract("ij,ij->", conn.inverse.truncate(T.order), T))


def op_S(Y: Jet, conn: Connection) -> OperatorOutput:
    """Symmetrized covariant derivative of a 1-form; trace is div Y."""
    S = J.symmetrize(covariant_derivative(Y, conn, "d"))
    return OperatorOutput(S, J.contract("ij,ij->", conn.inverse.truncate(S.order), S))


def op_U(X: Jet, conn: Connection) -> Jet:
    """U_kji = nabla_k nabla_j X_i - g_jk X_i + g_ik X_j."""
    D2 = covariant_derivative(covariant_derivative(X, conn, "d"), conn, "dd")  # slots (k, j, i)
    k = D2.order
    g = conn.metric.truncate(k)
    Xk = X.truncate(k)
    return D2 - J.contract("jk,i->kji", g, Xk) + J.contract("ik,j->kji", g, Xk)


def u_contraction(U: Jet, conn: Connection) -> Jet:
    """g^{kj} U_kji, equal to Lap X_i - 2 X_i."""
    return J.contract("kj,kji->i", conn.inverse.truncate(U.order), U)


def second_derivative_sides(X: Jet, g: Jet) -> tuple[np.ndarray, np.ndarray]:
    """Values of both sides of nabla_k nabla_j X_i = Riem_ijkl X^l + nabla_k S_ij + nabla_j S_ik - nabla_i S_jk."""
    conn = christoffel(g)
    D2 = covariant_derivative(covariant_derivative(X, conn, "d"), conn, "dd").value
    S = op_S(X, conn).field
    dS = covariant_derivative(S, conn, "dd").value  # slots (x, a, b)
    riem = curvature(g).riemann.value
    Xup = np.einsum("pij,pj->pi", np.linalg.inv(g.value), X.value)
    rhs = (np.einsum("pijkl,pl->pkji", riem, Xup) + np.einsum("pkij->pkji", dS)
           + np.einsum("pjik->pkji", dS) - np.einsum("pijk->pkji", dS))
    return D2, rhs


def second_derivative_identity_residual(X: TensorField, points: np.ndarray, fd_step: float | None = None,
                                        metric: TensorField | None = None) -> Residual:
    """Residual of the 1-form second-derivative identity, in the hyperbolic norm."""
    from .fields import HYPERBOLIC_METRIC

    gfield = metric or HYPERBOLIC_METRIC
    g = sample(gfield, points, 2, fd_step)
    Xj = sample(X, points, 2, fd_step)
    lhs, rhs = second_derivative_sides(Xj, g)
    gv = HYPERBOLIC_METRIC(coordinates(points, 0)).value
    pw = np.sqrt(np.abs(tensor_norm_sq(lhs - rhs, gv, "ddd")))
    res = residual_from_values(pw)
    res.metadata.update({"identity": "SECOND_DERIVATIVE", "path": "analytic" if fd_step is None else "fd",
                         "fd_step": fd_step})
    return res


def model_operator_apply(which: str, u: Jet, conn: Connection) -> Jet:
    """A u = -Lap u + 3u on functions, B Y = -Lap Y + 2Y on 1-forms."""
    if which == "A":
        if u.shape != ():
            raise KindMismatch("operator A acts on functions")
        lap = laplacian(u, conn, "")
        return -lap + u.truncate(lap.order) * float(DIM)
    if which == "B":
        if u.shape != (DIM,):
            raise KindMismatch("operator B acts on 1-forms")
        lap = laplacian(u, conn, "d")
        return -lap + u.truncate(lap.order) * float(DIM - 1)
    raise KindMismatch(f"unknown model operator {which!r}")


def model_operator_field(which: str, u: TensorField) -> TensorField:
    """The model operator applied to a field, as a new field (hyperbolic background)."""

    def fn(X: Jet) -> Jet:
        pts = X.value
        conn = hyperbolic_connection(pts, 1 + X.order)
        return model_operator_apply(which, sample(u, pts, 2 + X.order), conn)

    return TensorField(fn, u.rank, f"{which}({u.name})")


# ---------------------------------------------------------------------------
# weighted least-squares solve


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residuals: list[float]
    converged: bool


def pcg(A: np.ndarray, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None,
        precond: np.ndarray | None = None) -> PCGResult:
    """Preconditioned conjugate gradients with a diagonal preconditioner."""
    n = b.shape[0]
    maxiter = maxiter or int(10 * np.sqrt(n))
    minv = 1.0 / precond if precond is not None else np.ones(n)
    x = np.zeros(n)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    history = [float(np.linalg.norm(r))]
    if bnorm == 0.0:
        return PCGResult(x, 0, history, True)
    z = minv * r
    d = z.copy()
    rz = r @ z
    k = 0
    while k < maxiter and history[-1] > tol * bnorm:
        Ad = A @ d
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        z = minv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
        k += 1
        history.append(float(np.linalg.norm(r)))
    return PCGResult(x, k, history, history[-1] <= tol * bnorm)


def _field_shape(which: str) -> tuple:
    return () if which == "A" else (DIM,)


def _model_op(which: str):
    def op(points, inputs, reps):
        conn = tile_connection(hyperbolic_connection(points, 1), reps)
        return [model_operator_apply(which, inputs[0], conn).value]

    return op


def _weight_rank(which: str) -> int:
    return 0 if which == "A" else 1


@dataclass
class SolveResult:
    coeffs: np.ndarray
    field: TensorField
    iterations: int
    residuals: list[float]
    converged: bool
    weight: float
    basis: ShellBasis
    constant: float = float("nan")
    metadata: dict = field(default_factory=dict)

    def trace_rows(self) -> list[tuple[int, float]]:
        return list(enumerate(self.residuals))


def weighted_gram(basis: ShellBasis, which: str, s: float, order: int) -> np.ndarray:
    """Hilbertian weighted Sobolev Gram matrix: sum over j <= order of the rho^{2s}-weighted L2 norm of nabla^j u."""
    shape = _field_shape(which)
    var0 = "" if which == "A" else "d"

    def op(points, inputs, reps):
        conn = tile_connection(hyperbolic_connection(points, 1), reps)
        u = inputs[0]
        outs = [u.value]
        d1 = covariant_derivative(u, conn, var0)
        if order >= 1:
            outs.append(d1.value)
        if order >= 2:
            outs.append(covariant_derivative(d1, conn, "d" + var0).value)
        return outs

    def weights(points):
        rho = 0.5 * (1.0 - np.einsum("pi,pi->p", points, points))
        base = rho ** (2 * s - DIM)
        return [base * rho ** (2 * (_weight_rank(which) + j)) for j in range(order + 1)]

    return assemble(basis, op, [shape], weights).gram


def model_operator_solve(which: str, f: TensorField, s: float, resolution: int = 16, *,
                         r_inner: float = 0.25, r_outer: float = 0.9, ell_max: int = 1, tol: float = 1e-12,
                         maxiter: int | None = None, strict_window: bool = True) -> SolveResult:
    """Weighted least-squares solve of (model operator) u = f in the spline trial space.

    Minimizes the rho^{2s}-weighted L2 norm of the residual by PCG on the
    normal equations with a Jacobi preconditioner.  Trial functions vanish
    with their radial slope on both spheres (homogeneous Dirichlet closure).
    """
    if abs(s) >= MODEL_WINDOW:
        if strict_window:
            raise WeightOutOfRange(f"|s| = {abs(s)} outside the isomorphism window |s| < {MODEL_WINDOW}")
    if which not in ("A", "B"):
        raise KindMismatch(f"unknown model operator {which!r}")
    basis = ShellBasis(r_inner, r_outer, resolution, ell_max=ell_max)
    shape = _field_shape(which)

    def weights(points):
        rho = 0.5 * (1.0 - np.einsum("pi,pi->p", points, points))
        return [rho ** (2 * s - DIM + 2 * _weight_rank(which))]

    def targets(points):
        return [f(coordinates(points, 0)).value]

    asm = assemble(basis, _model_op(which), [shape], weights, targets)
    diag = np.diag(asm.gram).copy()
    res = pcg(asm.gram, asm.rhs, tol=tol, maxiter=maxiter, precond=diag)
    if not res.converged:
        raise SolverDivergence(f"PCG stopped after {res.iterations} iterations, "
                               f"relative residual {res.residuals[-1] / max(res.residuals[0], 1e-300):.3e}")
    coeffs = res.x if which == "A" else res.x.reshape(DIM, basis.size)
    u = basis.field(coeffs, (0, 0) if which == "A" else (0, 1))
    # ||u||_{2,2,s} / ||f||_{2,s} with the sum-of-norms convention
    norms = []
    G2 = _component_grams(basis, which, s)
    for G in G2:
        norms.append(np.sqrt(max(res.x @ G @ res.x, 0.0)))
    fnorm = np.sqrt(asm.target_sq)
    const = float(sum(norms) / fnorm) if fnorm > 0 else 0.0
    return SolveResult(coeffs, u, res.iterations, res.residuals, res.converged, s, basis, const,
                       {"dof": int(res.x.size), "cap": int(maxiter or 10 * np.sqrt(res.x.size))})


def _component_grams(basis: ShellBasis, which: str, s: float) -> list[np.ndarray]:
    out = []
    prev = np.zeros(1)
    for order in range(3):
        G = weighted_gram(basis, which, s, order)
        out.append(G - prev if order else G)
        prev = G
    return out


def isomorphism_constant(which: str, s: float, resolution: int, *, r_inner: float = 0.25, r_outer: float = 0.9,
                         ell_max: int = 1) -> float:
    """sup over the trial space of ||u||_{W^{2,2}_s} / ||(model op) u||_{L^2_s} (Hilbertian norms)."""
    from scipy.linalg import eigh

    basis = ShellBasis(r_inner, r_outer, resolution, ell_max=ell_max)
    shape = _field_shape(which)

    def weights(points):
        rho = 0.5 * (1.0 - np.einsum("pi,pi->p", points, points))
        return [rho ** (2 * s - DIM + 2 * _weight_rank(which))]

    A = assemble(basis, _model_op(which), [shape], weights).gram
    B = weighted_gram(basis, which, s, 2)
    lam = eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / np.sqrt(lam))
