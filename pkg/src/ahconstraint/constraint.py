"""Vacuum constraint operator, its linearization and adjoint, P* and the operator F.

Densities are stored relative to the hyperbolic volume form.  With
s = sqrt(det g / det g_hyp), a density such as sqrt(g) has relative
component s, and the momentum is pi = pit * s where pit ("pi tilde") is an
ordinary symmetric (2, 0) tensor.  Every multiplication or division by sqrt(g)
in the formulas below is therefore an explicit multiplication by ``s``.
The dimension is fixed to n = 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jets as J
from .errors import EquivalenceViolation
from .fields import HYPERBOLIC_METRIC, TensorField, coordinates, rho_jet, sample
from .jets import Jet
from .tensor import (Connection, check_metric, christoffel, covariant_derivative, curvature, hessian, laplacian,
                     tensor_norm_sq, tile_jet)

DIM = 3
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class ReferenceData:
    """Model data K = tau g_hyp, pi = tau (1 - n) g_hyp^{ij} dmu(g_hyp), 2 Lambda = n (n - 1)(tau^2 - 1)."""

    tau: float
    K_ref: TensorField
    pi_ref: TensorField
    Lambda: float


def reference_data(tau: float) -> ReferenceData:
    tau = float(tau)

    def k_fn(X: Jet) -> Jet:
        return HYPERBOLIC_METRIC(X) * tau

    def pi_fn(X: Jet) -> Jet:
        r = rho_jet(X)
        return J.scale(r * r, J.Jet.constant(np.eye(3), X.npts, X.order)) * (tau * (1 - DIM))

    return ReferenceData(tau, TensorField(k_fn, (0, 2), "K_ref", True), TensorField(pi_fn, (2, 0), "pi_ref", True),
                         0.5 * DIM * (DIM - 1) * (tau**2 - 1.0))


@dataclass(frozen=True)
class PhasePoint:
    """Metric g (covariant) and momentum components relative to the hyperbolic volume form."""

    g: TensorField
    pi: TensorField
    lam: float = DEFAULT_LAMBDA

    def sample(self, points: np.ndarray, order: int = 2, fd_step: float | None = None,
               check: bool = True) -> "PhaseSample":
        g = sample(self.g, points, order, fd_step)
        pi = sample(self.pi, points, max(order - 1, 0), fd_step)
        return PhaseSample.build(points, g, pi, self.lam if check else None)


def background_point(tau: float, lam: float = DEFAULT_LAMBDA) -> PhasePoint:
    return PhasePoint(HYPERBOLIC_METRIC, reference_data(tau).pi_ref, lam)


def perturbed_point(tau: float, h: TensorField | None = None, p: TensorField | None = None, t: float = 1.0,
                    lam: float = DEFAULT_LAMBDA) -> PhasePoint:
    """(g_hyp + t h, pi_ref + t p)."""
    base = background_point(tau, lam)
    g = base.g + h * t if h is not None else base.g
    pi = base.pi + p * t if p is not None else base.pi
    return PhasePoint(g, pi, lam)


@dataclass(frozen=True)
class LapseShift:
    """Lapse N (function) and shift X (1-form)."""

    N: TensorField
    X: TensorField

    def sample(self, points: np.ndarray, order: int = 2, fd_step: float | None = None) -> tuple[Jet, Jet]:
        return sample(self.N, points, order, fd_step), sample(self.X, points, order, fd_step)


@dataclass(frozen=True)
class Density:
    """A tensor times the explicit scalar factor s; ``components`` are relative to dmu(g_hyp)."""

    tensor: Jet
    factor: Jet

    @property
    def components(self) -> Jet:
        k = min(self.tensor.order, self.factor.order)
        return J.scale(self.factor.truncate(k), self.tensor.truncate(k))


def volume_ratio(g: Jet, points: np.ndarray) -> Jet:
    """s = sqrt(det g / det g_hyp) = sqrt(det g) rho^3."""
    rho = rho_jet(coordinates(points, g.order))
    return J.sqrt(J.det(g) * rho**6.0)


def check_equivalence(g: np.ndarray, rho: np.ndarray, lam: float) -> None:
    """lam g_hyp < g < g_hyp / lam, i.e. eigenvalues of rho^2 g in (lam, 1/lam)."""
    ev = np.linalg.eigvalsh(g * (rho**2)[:, None, None])
    if ev.min() <= lam or ev.max() >= 1.0 / lam:
        raise EquivalenceViolation(
            f"metric not within the lambda = {lam} band of the background: eigenvalues in [{ev.min():.4g}, {ev.max():.4g}]")


@dataclass
class PhaseSample:
    """Jets of (g, pi) and derived quantities at a point set."""

    g: Jet
    ginv: Jet
    conn: Connection
    s: Jet
    pit: Jet  # pi / sqrt(g), contravariant
    K: Jet  # covariant second fundamental form
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, points: np.ndarray, g: Jet, pi_rel: Jet, lam: float | None = DEFAULT_LAMBDA) -> "PhaseSample":
        check_metric(g)
        if lam is not None:
            check_equivalence(g.value, 0.5 * (1 - np.einsum("pi,pi->p", points, points)), lam)
        conn = christoffel(g)
        s = volume_ratio(g, points)
        k = min(pi_rel.order, s.order)
        pit = J.scale(J.reciprocal(s.truncate(k)), pi_rel.truncate(k))
        return cls(g, conn.inverse, conn, s, pit, k_from_momentum(g.truncate(k), pit))

    def tile(self, reps: int) -> "PhaseSample":
        t = lambda a: tile_jet(a, reps)
        conn = Connection(t(self.conn.gamma), t(self.conn.metric), t(self.conn.inverse))
        return PhaseSample(t(self.g), t(self.ginv), conn, t(self.s), t(self.pit), t(self.K))


def k_from_momentum(g: Jet, pit: Jet) -> Jet:
    """K_ij = pit_ij - tr(pit) g_ij / (n - 1), the inverse of the momentum map."""
    low = J.contract3("ia,ab,bj->ij", g, pit, g)
    tr = J.contract("ab,ab->", g, pit)
    return low - J.scale(tr, g) * (1.0 / (DIM - 1))


def momentum_from_K(g: Jet, K: Jet, points: np.ndarray) -> Density:
    """pi^{ij} = (K^{ij} - tr_g K g^{ij}) sqrt(g), returned as tensor and factor."""
    ginv = J.inv(g)
    Kup = J.contract3("ia,ab,bj->ij", ginv, K, ginv)
    trK = J.contract("ab,ab->", ginv, K)
    return Density(Kup - J.scale(trK, ginv), volume_ratio(g, points))


def _lower2(g: Jet, T: Jet) -> Jet:
    return J.contract3("ia,ab,bj->ij", g, T, g)


def _pi_quantities(ps: PhaseSample, k: int):
    g = ps.g.truncate(k)
    pit = ps.pit.truncate(k)
    pl = _lower2(g, pit)
    tr = J.contract("ab,ab->", g, pit)
    sq = J.contract("ab,ab->", pl, pit)
    return g, pit, pl, tr, sq


def einstein_tensor(ps: PhaseSample, Lambda: float) -> tuple[Jet, Jet]:
    """E^{ij} = R^{ij} - (R - 2 Lambda) g^{ij} / 2 and R (values and derivative orders available)."""
    key = ("einstein", float(Lambda))
    if key in ps.cache:
        return ps.cache[key]
    cb = curvature(ps.g)
    k = cb.ricci.order
    ginv = ps.ginv.truncate(k)
    Rup = J.contract3("ia,ab,bj->ij", ginv, cb.ricci, ginv)
    ps.cache[key] = (Rup - J.scale(cb.scalar - 2 * Lambda, ginv) * 0.5, cb.scalar)
    return ps.cache[key]


def pi_tensor(ps: PhaseSample, k: int = 0) -> Jet:
    """Pi^{ij} = tr pit pit^{ij} - 2 pit^i_k pit^{kj} + |pit|^2 g^{ij}/2 - (tr pit)^2 g^{ij}/4 (n = 3)."""
    g, pit, pl, tr, sq = _pi_quantities(ps, k)
    ginv = ps.ginv.truncate(k)
    return (J.scale(tr, pit) * (2.0 / (DIM - 1)) - J.contract3("ia,ab,bj->ij", pit, g, pit) * 2.0
            + J.scale(sq, ginv) * 0.5 - J.scale(tr * tr, ginv) * (0.5 / (DIM - 1)))


def phi(ps: PhaseSample, ref: ReferenceData) -> tuple[np.ndarray, np.ndarray]:
    """Constraint operator values (relative components): Hamiltonian scalar and momentum covector."""
    cb = curvature(ps.g)
    g, pit, pl, tr, sq = _pi_quantities(ps, 0)
    s = ps.s.value
    phi0 = s * (cb.scalar.value - 2 * ref.Lambda - sq.value + tr.value**2 / (DIM - 1))
    dpit = covariant_derivative(ps.pit.truncate(1), ps.conn, "uu")  # slots (x, j, k)
    div = np.einsum("pkjk->pj", dpit.value)
    phii = 2.0 * s[:, None] * np.einsum("pij,pj->pi", ps.g.value, div)
    return phi0, phii


def density_divergence(p_rel: Jet, ps: PhaseSample) -> np.ndarray:
    """Relative components of nabla_j p^{jk} for a (2, 0) density p with relative components p_rel."""
    k = min(p_rel.order, ps.s.order)
    ptil = J.scale(J.reciprocal(ps.s.truncate(k)), p_rel.truncate(k))
    d = covariant_derivative(ptil, ps.conn, "uu")
    return ps.s.value[:, None] * np.einsum("pjjk->pk", d.value)


def dphi(ps: PhaseSample, ref: ReferenceData, h: Jet, p: Jet) -> tuple[np.ndarray, np.ndarray]:
    """Linearized constraint operator applied to (h, p); p given by relative components."""
    conn = ps.conn
    ginv = ps.ginv.value
    g = ps.g.value
    s = ps.s.value
    dh = covariant_derivative(h, conn, "dd")
    d2h = covariant_derivative(dh, conn, "ddd").value  # slots (a, b, i, j)
    divdiv = np.einsum("pai,pbj,pabij->p", ginv, ginv, d2h)
    trh = J.contract("ij,ij->", ps.ginv.truncate(h.order), h)
    lap_tr = laplacian(trh, conn).value
    E, _ = einstein_tensor(ps, ref.Lambda)
    Pi = pi_tensor(ps).value
    hv = h.value
    _, pit, pl, tr, _ = _pi_quantities(ps, 0)
    pv = p.value
    d0 = s * (divdiv - lap_tr - np.einsum("pij,pij->p", hv, E.value) + np.einsum("pij,pij->p", hv, Pi))
    d0 = d0 + np.einsum("pij,pij->p", pv, tr.value[:, None, None] * g * (2.0 / (DIM - 1)) - 2.0 * pl.value)
    dhv = dh.value  # slots (x, i, j) = nabla_x h_ij
    pitv = pit.value
    term = np.einsum("pjk,pkij->pi", pitv, dhv) * 2.0 - np.einsum("pjk,pijk->pi", pitv, dhv)
    dpit = covariant_derivative(ps.pit.truncate(1), conn, "uu").value
    div_pit = np.einsum("pkjk->pj", dpit)
    di = s[:, None] * (term + 2.0 * np.einsum("pij,pj->pi", hv, div_pit))
    di = di + 2.0 * np.einsum("pik,pk->pi", g, density_divergence(p, ps))
    return d0, di


def dphi_adjoint(ps: PhaseSample, ref: ReferenceData, N: Jet, X: Jet) -> tuple[Jet, Jet]:
    """Formal adjoint applied to (N, X): a (2, 0) density (relative comps) and a (0, 2) tensor.

    Orders: the first component keeps order ``min(N.order, X.order) - 2``-ish
    derivative data as available; the second keeps one order more.
    """
    conn = ps.conn
    E, _ = einstein_tensor(ps, ref.Lambda)
    k1 = min(N.order - 2, X.order - 1, ps.pit.order - 1, E.order)
    k1 = max(k1, 0)
    ginv = ps.ginv.truncate(k1)
    H = hessian(N, conn).truncate(k1)
    Hup = J.contract3("ia,ab,bj->ij", ginv, H, ginv)
    lapN = J.contract("ab,ab->", ginv, H)
    Pi = pi_tensor(ps, k1)
    Nk = N.truncate(k1)
    first = Hup - J.scale(lapN, ginv) + J.scale(Nk, Pi - E.truncate(k1))
    # Lie-derivative part: X^k nabla_k pit^{ij} + div X pit^{ij} - nabla_k X^i pit^{jk} - nabla_k X^j pit^{ik}
    dX = covariant_derivative(X, conn, "d").truncate(k1)  # slots (k, a) = nabla_k X_a
    Xup = J.contract("ab,b->a", ginv, X.truncate(k1))
    dXup = J.contract("ia,ka->ki", ginv, dX)  # nabla_k X^i
    divX = J.trace(dXup, "kk->")
    pit = ps.pit.truncate(k1)
    dpit = covariant_derivative(ps.pit, conn, "uu").truncate(k1)
    lie = (J.contract("k,kij->ij", Xup, dpit) + J.scale(divX, pit)
           - J.contract("ki,jk->ij", dXup, pit) - J.contract("kj,ik->ij", dXup, pit))
    first = J.scale(ps.s.truncate(k1), first + lie)
    # second component
    k2 = min(N.order, X.order - 1, ps.pit.order, ps.g.order - 1)
    g2 = ps.g.truncate(k2)
    pit2 = ps.pit.truncate(k2)
    pl = _lower2(g2, pit2)
    tr = J.contract("ab,ab->", g2, pit2)
    S = J.symmetrize(covariant_derivative(X, conn, "d")).truncate(k2)
    second = J.scale(N.truncate(k2), J.scale(tr, g2) * (2.0 / (DIM - 1)) - pl * 2.0) - S * 2.0
    return first, second


def p_star(ps: PhaseSample, ref: ReferenceData, N: Jet, X: Jet) -> tuple[np.ndarray, np.ndarray]:
    """(s^{-1/2} first adjoint component, s^{1/2} nabla of the second), values only."""
    first, second = dphi_adjoint(ps, ref, N, X)
    if second.order < 1:
        raise ValueError("P* needs second derivatives of the lapse and shift")
    dsec = covariant_derivative(second, ps.conn, "dd").value
    s = ps.s.value
    return first.value / np.sqrt(s)[:, None, None], dsec * np.sqrt(s)[:, None, None, None]


def op_O(ps: PhaseSample, N: Jet) -> Jet:
    """O(N) = Hess N - g Lap N."""
    H = hessian(N, ps.conn)
    ginv = ps.ginv.truncate(H.order)
    return H - J.scale(J.contract("ab,ab->", ginv, H), ps.g.truncate(H.order))


def variation_from_yY(ps: PhaseSample, ref: ReferenceData, y: Jet, Y: Jet) -> tuple[Jet, Jet]:
    """h = 2 y g and p = (2 S(Y)^{ij} - g^{ij} tr S(Y) - (n-1)(n-2) tau y g^{ij}) sqrt(g) (relative comps)."""
    h = J.scale(y, ps.g.truncate(y.order)) * 2.0
    Ylow = J.contract("ij,j->i", ps.g.truncate(Y.order), Y)
    S = J.symmetrize(covariant_derivative(Ylow, ps.conn, "d"))
    k = S.order
    ginv = ps.ginv.truncate(k)
    Sup = J.contract3("ia,ab,bj->ij", ginv, S, ginv)
    trS = J.contract("ab,ab->", ginv, S)
    inner = Sup * 2.0 - J.scale(trS, ginv) - J.scale(y.truncate(k), ginv) * ((DIM - 1) * (DIM - 2) * ref.tau)
    return h, J.scale(ps.s.truncate(k), inner)


def f_operator(ps: PhaseSample, ref: ReferenceData, y: Jet, Y: Jet) -> tuple[np.ndarray, np.ndarray]:
    """F(y, Y) = DPhi(h, p) with (h, p) built from (y, Y) as in ``variation_from_yY``."""
    h, p = variation_from_yY(ps, ref, y, Y)
    return dphi(ps, ref, h, p)


def f_leading_terms(ps: PhaseSample, y: Jet, Y: Jet) -> tuple[np.ndarray, np.ndarray]:
    """Model parts 2(n-1) s (-Lap y + n y) and -2 s (-Lap Y + (n-1) Y)_i (Y lowered) for diagnostics."""
    s = ps.s.value
    lap_y = laplacian(y, ps.conn).value
    Ylow = J.contract("ij,j->i", ps.g.truncate(Y.order), Y)
    lap_Y = laplacian(Ylow, ps.conn, "d").value
    f0 = 2 * (DIM - 1) * s * (-lap_y + DIM * y.value)
    fi = -2 * s[:, None] * (-lap_Y + (DIM - 1) * Ylow.value)
    return f0, fi


def _hyp_norm(T: np.ndarray, points: np.ndarray, variance: str) -> np.ndarray:
    gv = HYPERBOLIC_METRIC(coordinates(points, 0)).value
    return np.sqrt(np.abs(tensor_norm_sq(T, gv, variance)))


def integrability_residuals(ps: PhaseSample, ref: ReferenceData, points: np.ndarray) -> dict[str, np.ndarray]:
    """Pointwise hyperbolic norms of the curvature and momentum combinations that must be
    square integrable; on the exact model they vanish identically."""
    cb = curvature(ps.g)
    g = ps.g.value
    tau2 = ref.tau**2
    riem = cb.riemann.value - (np.einsum("pil,pjk->pijkl", g, g) - np.einsum("pik,pjl->pijkl", g, g))
    ric = cb.ricci.value + (DIM - 1) * g
    scal = cb.scalar.value - 2 * ref.Lambda + DIM * (DIM - 1) * tau2
    ginv = ps.ginv.value
    Pi = pi_tensor(ps).value + 0.5 * (DIM - 1) * (DIM - 4) * tau2 * ginv
    E, _ = einstein_tensor(ps, ref.Lambda)
    Ev = E.value + ((DIM - 1) - 0.5 * DIM * (DIM - 1) * tau2) * ginv
    return {
        "INTEG_RIEM": _hyp_norm(riem, points, "dddd"),
        "INTEG_RIC": _hyp_norm(ric, points, "dd"),
        "INTEG_SCAL": np.abs(scal),
        "INTEG_PI": _hyp_norm(Pi, points, "uu"),
        "INTEG_E": _hyp_norm(Ev, points, "uu"),
    }


def adjoint_decomposition(ps: PhaseSample, ref: ReferenceData, points: np.ndarray, N: Jet,
                          X: Jet) -> dict[str, np.ndarray]:
    """Split the adjoint into its model parts and remainder buckets.

    Model parts (indices up, hyperbolic background operators):
      first / sqrt(g) ~ T - g tr T + (n-1) tau (2 S(X) - g tr S(X)) - (n-1)(n-2) tau^2 g N
      second          ~ -2 (S(X) + tau g N)
    The remainders hold everything else; they vanish on the exact model.
    """
    from .geoops import op_S, op_T
    from .tensor import hyperbolic_connection

    first, second = dphi_adjoint(ps, ref, N, X)
    hconn = hyperbolic_connection(points, 1)
    gh = hconn.metric.value
    ghinv = hconn.inverse.value
    T = op_T(N, hconn)
    S = op_S(X, hconn)
    tau = ref.tau
    Nv = N.value
    m1 = (T.field.value - T.trace.value[:, None, None] * gh
          + (DIM - 1) * tau * (2 * S.field.value - S.trace.value[:, None, None] * gh)
          - (DIM - 1) * (DIM - 2) * tau**2 * gh * Nv[:, None, None])
    m1_up = np.einsum("pia,pab,pbj->pij", ghinv, m1, ghinv)
    m2 = -2.0 * (S.field.value + tau * gh * Nv[:, None, None])
    r1 = first.value / ps.s.value[:, None, None] - m1_up
    r2 = second.value - m2
    return {
        "model_first": _hyp_norm(m1_up, points, "uu"),
        "remainder_first": _hyp_norm(r1, points, "uu"),
        "model_second": _hyp_norm(m2, points, "dd"),
        "remainder_second": _hyp_norm(r2, points, "dd"),
    }


# ---------------------------------------------------------------------------
# storage

PHASE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class StoredPhasePoint:
    """Nodal jets of (g, pi) read back from disk; samples only on the stored nodes."""

    points: np.ndarray
    g: Jet
    pi: Jet
    lam: float = DEFAULT_LAMBDA

    def sample(self, points: np.ndarray, order: int = 2, fd_step: float | None = None,
               check: bool = True) -> PhaseSample:
        if fd_step is not None:
            raise ValueError("stored phase points carry exact nodal jets only")
        if points.shape != self.points.shape or not np.array_equal(points, self.points):
            raise ValueError("stored phase points can only be sampled on their own nodes")
        if order > self.g.order:
            raise ValueError(f"stored jets have order {self.g.order}, {order} requested")
        return PhaseSample.build(points, self.g.truncate(order), self.pi.truncate(max(order - 1, 0)),
                                 self.lam if check else None)


def store_phase_point(point: PhasePoint, points: np.ndarray, path, order: int = 2) -> None:
    """Text header, then little-endian float64 blocks: nodes, the g jet (orders 0..order), the pi jet (0..order-1)."""
    g = sample(point.g, points, order)
    pi = sample(point.pi, points, max(order - 1, 0))
    header = (f"ahphase {PHASE_FORMAT_VERSION}\nlam {point.lam!r}\nnodes {points.shape[0]}\n"
              f"g_order {g.order}\npi_order {pi.order}\nend\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(points, dtype="<f8").tobytes())
        for d in list(g.derivs) + list(pi.derivs):
            fh.write(np.ascontiguousarray(d, dtype="<f8").tobytes())


def load_phase_point(path) -> StoredPhasePoint:
    from pathlib import Path

    from .errors import ParseError

    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    if marker not in raw:
        raise ParseError("missing header terminator", 0, 0)
    end = raw.index(marker) + len(marker)
    meta = {}
    for i, line in enumerate(raw[:end].decode("ascii").splitlines()[:-1], start=1):
        key, _, val = line.partition(" ")
        if not val:
            raise ParseError(f"malformed header line {line!r}", i, 1)
        meta[key] = val
    if int(meta.get("ahphase", -1)) != PHASE_FORMAT_VERSION:
        raise ParseError(f"unsupported phase format {meta.get('ahphase')}", 1, 1)
    n = int(meta["nodes"])
    data = np.frombuffer(raw[end:], dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        block = data[pos:pos + size].reshape(shape).copy()
        pos += size
        return block

    pts = take((n, DIM))
    g = Jet([take((n,) + (DIM,) * k + (DIM, DIM)) for k in range(int(meta["g_order"]) + 1)])
    pi = Jet([take((n,) + (DIM,) * k + (DIM, DIM)) for k in range(int(meta["pi_order"]) + 1)])
    if pos != data.size:
        raise ParseError("trailing or missing data after the phase blocks", 0, 0)
    return StoredPhasePoint(pts, g, pi, float(meta["lam"]))
