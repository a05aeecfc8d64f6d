"""Pointwise integrands of the weighted integration-by-parts identities on the ball.

Each identity is a list of displays; a display is a triple of nodal arrays
(lhs, volume, boundary) such that

    int lhs dmu = int volume dmu + oint boundary dsigma

holds exactly on a shell of the ball model for compactly supported inputs.
Asymptotic coefficients are replaced by their exact ball values: with
omega = d rho / rho,

    a = |d rho|_h^2 = r^2,   Lap_h rho = -3,   Hess_h rho = -h,
    c = (2 delta + 1 - n) a + rho Lap_h rho,
    B(X) = a |X|^2 - Hess_h rho(X#, X#) / rho,

so every remainder is accounted for and a nonzero residual only measures
discretization.  The boundary integrands are evaluated with the outward unit
normal of the shell (toward decreasing r on the inner sphere).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import TensorField, sample
from .geoops import op_S, op_T, op_U
from .jets import Jet
from .tensor import Connection, covariant_derivative, hyperbolic_connection

DIM = 3

Display = tuple[np.ndarray, np.ndarray, np.ndarray]

# input name -> rank; N, X, Y carry the compact support
INPUT_RANKS = {"N": (0, 0), "X": (0, 1), "Y": (0, 1), "V": (1, 0), "u": (0, 0), "v": (0, 0)}
CARRIERS = ("N", "X", "Y")

IDENTITY_INPUTS = {
    "LEM2": ("N",), "LEM4": ("N",), "LEM6": ("N",), "COMB7": ("N",),
    "CORD10": ("Y",), "CORD11": ("Y",),
    "IHP0": ("X",), "IHP1": ("X",), "IHP2": ("X",), "IHP3": ("X",), "COMB_U": ("X",),
    "LEMD1": ("Y", "V"), "PROPD2": ("Y", "V", "u"), "LEMPD3": ("Y", "u", "v"),
}
IDENTITIES = tuple(IDENTITY_INPUTS)
# identities whose boundary integrals are documented as vanishing for inputs vanishing on the inner sphere
BOUNDARY_ISOLATION = ("LEM2", "LEM4", "LEM6", "CORD10", "CORD11")


@dataclass
class Geometry:
    """Background quantities at a node set (values only)."""

    points: np.ndarray
    rho: np.ndarray
    a: np.ndarray
    omega: np.ndarray
    ginv: np.ndarray
    metric: np.ndarray
    hess_h_rho: np.ndarray
    lap_h_rho: np.ndarray
    weight: np.ndarray
    c: np.ndarray
    normal: np.ndarray | None
    delta: float
    _conn: Connection | None = None

    @property
    def conn(self) -> Connection:
        if self._conn is None:
            self._conn = hyperbolic_connection(self.points, 1)
        return self._conn

    @classmethod
    def at(cls, points: np.ndarray, delta: float, normal: np.ndarray | None = None) -> "Geometry":
        x = np.asarray(points, dtype=float)
        n = x.shape[0]
        rho = 0.5 * (1.0 - np.einsum("pi,pi->p", x, x))
        a = np.einsum("pi,pi->p", x, x)
        omega = -x / rho[:, None]
        ginv = (rho**2)[:, None, None] * np.eye(DIM)
        metric = (rho**-2)[:, None, None] * np.eye(DIM)
        hess = -np.broadcast_to(np.eye(DIM), (n, DIM, DIM))
        lap = np.full(n, -3.0)
        c = (2 * delta + 1 - DIM) * a + rho * lap
        return cls(x, rho, a, omega, ginv, metric, hess, lap, rho ** (2 * delta), c, normal, delta)

    # metric helpers on 1-forms / vectors
    def up(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("pij,pj->pi", self.ginv, w)

    def ip(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("pij,pi,pj->p", self.ginv, u, v)

    def nsq(self, u: np.ndarray) -> np.ndarray:
        return self.ip(u, u)

    def nsq2(self, T: np.ndarray) -> np.ndarray:
        return np.einsum("pab,pij,pai,pbj->p", self.ginv, self.ginv, T, T)

    def bilinear(self, T: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """T(u#, v#) for a covariant 2-tensor and 1-forms."""
        return np.einsum("pij,pi,pj->p", T, self.up(u), self.up(v))

    def on_normal(self, w: np.ndarray) -> np.ndarray:
        """<w, eta> for a 1-form w; zero away from the boundary."""
        if self.normal is None:
            return np.zeros(self.points.shape[0])
        return np.einsum("pi,pi->p", w, self.normal)

    def hess_rho(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.bilinear(self.hess_h_rho, u, v)

    def b_form(self, X: np.ndarray) -> np.ndarray:
        return self.a * self.nsq(X) - self.hess_rho(X, X) / self.rho


@dataclass
class Inputs:
    """Sampled input jets (order 2) keyed by name."""

    jets: dict[str, Jet]
    cache: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> Jet:
        return self.jets[key]


def sample_inputs(fields: dict[str, TensorField], points: np.ndarray, fd_step: float | None) -> Inputs:
    return Inputs({k: sample(f, points, 2, fd_step) for k, f in fields.items()})


# ---------------------------------------------------------------------------
# lapse identities


def _lapse(geo: Geometry, inp: Inputs):
    if "lapse" not in inp.cache:
        N = inp["N"]
        T = op_T(N, geo.conn)
        inp.cache["lapse"] = (N.value, N.derivs[1], T.field.value, T.trace.value)
    return inp.cache["lapse"]


def lem2(geo: Geometry, inp: Inputs) -> list[Display]:
    N = inp["N"]
    Nv, dN = N.value, N.derivs[1]
    w = geo.weight
    lhs = 2 * Nv * geo.ip(dN, geo.omega) * w
    vol = -geo.c * Nv**2 * w
    bnd = Nv**2 * geo.on_normal(geo.omega) * w
    return [(lhs, vol, bnd)]


def lem4(geo: Geometry, inp: Inputs) -> list[Display]:
    Nv, dN, T, _ = _lapse(geo, inp)
    w = geo.weight
    lhs = -2 * geo.bilinear(T, dN, geo.omega) * w
    vol = geo.c * (geo.nsq(dN) - Nv**2) * w
    bnd = (Nv**2 - geo.nsq(dN)) * geo.on_normal(geo.omega) * w
    return [(lhs, vol, bnd)]


def lem6(geo: Geometry, inp: Inputs) -> list[Display]:
    Nv, dN, _, trT = _lapse(geo, inp)
    w, d = geo.weight, geo.delta
    lhs = -Nv * trT * w
    vol = (-(d * geo.c - DIM) * Nv**2 + geo.nsq(dN)) * w
    bnd = (-Nv * geo.on_normal(dN) + d * Nv**2 * geo.on_normal(geo.omega)) * w
    return [(lhs, vol, bnd)]


def comb7(geo: Geometry, inp: Inputs) -> list[Display]:
    Nv, dN, T, trT = _lapse(geo, inp)
    (_, v6, b6), = lem6(geo, inp)
    (_, v4, b4), = lem4(geo, inp)
    lhs = (geo.bilinear(T, dN, geo.omega) - Nv * trT) * geo.weight
    return [(lhs, v6 - 0.5 * v4, b6 - 0.5 * b4)]


# ---------------------------------------------------------------------------
# shift identities


@dataclass
class _Shift:
    X: np.ndarray
    D: np.ndarray  # nabla_j X_i, slots (j, i)
    S: np.ndarray
    div: np.ndarray
    U: np.ndarray | None


def _shift(geo: Geometry, inp: Inputs, key: str, with_u: bool = False) -> _Shift:
    hit = inp.cache.get(key)
    if hit is not None and (hit.U is not None or not with_u):
        return hit
    X = inp[key]
    D = covariant_derivative(X, geo.conn, "d").value
    S = op_S(X, geo.conn)
    U = op_U(X, geo.conn).value if with_u else None
    inp.cache[key] = _Shift(X.value, D, S.field.value, S.trace.value, U)
    return inp.cache[key]


def _xd(geo: Geometry, sh: _Shift, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """nabla X(first, second) = first^j second^i nabla_j X_i for 1-forms (or vectors if already raised)."""
    return np.einsum("pji,pj,pi->p", sh.D, first, second)


def _d_eta(geo: Geometry, sh: _Shift, X_up: np.ndarray, normal_first: bool) -> np.ndarray:
    if geo.normal is None:
        return np.zeros(geo.points.shape[0])
    return _xd(geo, sh, geo.normal, X_up) if normal_first else _xd(geo, sh, X_up, geo.normal)


def ihp0(geo: Geometry, inp: Inputs) -> list[Display]:
    sh = _shift(geo, inp, "X")
    w, d = geo.weight, geo.delta
    Xu, wu = geo.up(sh.X), geo.up(geo.omega)
    xo = geo.ip(sh.X, geo.omega)
    xsq = geo.nsq(sh.X)
    first = (_xd(geo, sh, wu, Xu) * w, -0.5 * geo.c * xsq * w, 0.5 * xsq * geo.on_normal(geo.omega) * w)
    second = (_xd(geo, sh, Xu, wu) * w,
              (-(sh.div * xo + (2 * d + 1) * xo**2) + geo.b_form(sh.X)) * w,
              xo * geo.on_normal(sh.X) * w)
    return [first, second]


def ihp1(geo: Geometry, inp: Inputs) -> list[Display]:
    sh = _shift(geo, inp, "X", with_u=True)
    w, d = geo.weight, geo.delta
    Xu = geo.up(sh.X)
    lhs = np.einsum("pkj,pkji,pi->p", geo.ginv, sh.U, Xu) * w
    vol = (-geo.nsq2(sh.D) + (d * geo.c - (DIM - 1)) * geo.nsq(sh.X)) * w
    bnd = (_d_eta(geo, sh, Xu, True) - d * geo.nsq(sh.X) * geo.on_normal(geo.omega)) * w
    return [(lhs, vol, bnd)]


def _ihp2_lhs(geo: Geometry, sh: _Shift) -> np.ndarray:
    Dup = np.einsum("pja,pib,pab->pji", geo.ginv, geo.ginv, sh.D)
    return np.einsum("pkji,pji,pk->p", sh.U, Dup, geo.up(geo.omega))


def ihp2(geo: Geometry, inp: Inputs) -> list[Display]:
    sh = _shift(geo, inp, "X", with_u=True)
    w, d = geo.weight, geo.delta
    xo = geo.ip(sh.X, geo.omega)
    diffsq = geo.nsq2(sh.D) - geo.nsq(sh.X)
    lhs = (_ihp2_lhs(geo, sh) + sh.div * xo) * w
    vol = (-0.5 * geo.c * diffsq - ((2 * d + 1) * xo**2 - geo.b_form(sh.X))) * w
    bnd = (0.5 * diffsq * geo.on_normal(geo.omega) + xo * geo.on_normal(sh.X)) * w
    return [(lhs, vol, bnd)]


def _ihp3_contraction(geo: Geometry, sh: _Shift) -> np.ndarray:
    return np.einsum("pik,pkji,pj->p", geo.ginv, sh.U, geo.up(sh.X))


def ihp3(geo: Geometry, inp: Inputs) -> list[Display]:
    sh = _shift(geo, inp, "X", with_u=True)
    w, d = geo.weight, geo.delta
    xo = geo.ip(sh.X, geo.omega)
    Xu = geo.up(sh.X)
    lhs = (_ihp3_contraction(geo, sh) + 2 * geo.nsq2(sh.S) - 2 * d * sh.div * xo) * w
    vol = (geo.nsq2(sh.D) + (DIM - 1) * geo.nsq(sh.X) - 2 * d * geo.b_form(sh.X)
           + 2 * d * (2 * d + 1) * xo**2) * w
    bnd = (_d_eta(geo, sh, Xu, False) - 2 * d * xo * geo.on_normal(sh.X)) * w
    return [(lhs, vol, bnd)]


def cord10(geo: Geometry, inp: Inputs, key: str = "Y") -> list[Display]:
    sh = _shift(geo, inp, key)
    w, d = geo.weight, geo.delta
    Y = sh.X
    yo = geo.ip(Y, geo.omega)
    ysq = geo.nsq(Y)
    lhs = 2 * (geo.bilinear(sh.S, Y, geo.omega) + 0.5 * sh.div * yo) * w
    vol = (((DIM + 1) / 2 - d) * geo.a * ysq - 0.5 * geo.rho * geo.lap_h_rho * ysq
           - geo.hess_rho(Y, Y) / geo.rho - (2 * d + 1) * yo**2) * w
    bnd = (yo * geo.on_normal(Y) + 0.5 * ysq * geo.on_normal(geo.omega)) * w
    return [(lhs, vol, bnd)]


def cord11(geo: Geometry, inp: Inputs, key: str = "Y") -> list[Display]:
    sh = _shift(geo, inp, key)
    w, d = geo.weight, geo.delta
    Y = sh.X
    yo = geo.ip(Y, geo.omega)
    lhs = 2 * geo.bilinear(sh.S, geo.omega, geo.omega) * yo * w
    vol = (yo**2 * ((DIM - 1 - 2 * d) * geo.a - geo.rho * geo.lap_h_rho)
           - 2 * yo * geo.hess_rho(Y, geo.omega) / geo.rho) * w
    bnd = yo**2 * geo.on_normal(geo.omega) * w
    return [(lhs, vol, bnd)]


def comb_u(geo: Geometry, inp: Inputs) -> list[Display]:
    """IHP2 - IHP1/2 + IHP3/2 + CORD10 - CORD11/2 with the left side written out.

    The left side carries the term 2 S(X)(X, omega) contributed by CORD10.
    """
    parts = [(ihp2, 1.0), (ihp1, -0.5), (ihp3, 0.5), (lambda g, i: cord10(g, i, "X"), 1.0),
             (lambda g, i: cord11(g, i, "X"), -0.5)]
    vol = 0.0
    bnd = 0.0
    for fn, coef in parts:
        (_, v, b), = fn(geo, inp)
        vol = vol + coef * v
        bnd = bnd + coef * b
    sh = _shift(geo, inp, "X", with_u=True)
    X = sh.X
    xo = geo.ip(X, geo.omega)
    u_part = (_ihp2_lhs(geo, sh) - 0.5 * np.einsum("pkj,pkji,pi->p", geo.ginv, sh.U, geo.up(X))
              + 0.5 * _ihp3_contraction(geo, sh))
    rest = (geo.nsq2(sh.S) - geo.bilinear(sh.S, geo.omega, geo.omega) * xo + (2 - geo.delta) * sh.div * xo
            + 2 * geo.bilinear(sh.S, X, geo.omega))
    return [((u_part + rest) * geo.weight, vol, bnd)]


# ---------------------------------------------------------------------------
# generic divergence identities (no rho weight)


def _propd2_parts(geo: Geometry, inp: Inputs, with_u: bool) -> Display:
    conn = geo.conn
    sh = _shift(geo, inp, "Y")
    Y = sh.X
    Vj = inp["V"]
    V = Vj.value
    DV = covariant_derivative(Vj, conn, "u").value  # slots (i, j) = nabla_i V^j
    divV = np.einsum("pii->p", DV)
    Yu = geo.up(Y)
    yv = np.einsum("pi,pi->p", Y, V)
    ysq = geo.nsq(Y)
    dVYY = np.einsum("pij,pi,pj->p", DV, Yu, Y)
    lhs = np.einsum("pij,pi,pj->p", sh.S, Yu, V) + 0.5 * sh.div * yv
    vol = -0.5 * (dVYY + 0.5 * divV * ysq)
    vn = np.zeros_like(yv) if geo.normal is None else np.einsum("pi,pij,pj->p", V, geo.metric, geo.normal)
    bnd = 0.5 * yv * geo.on_normal(Y) + 0.25 * ysq * vn
    if with_u:
        u = inp["u"]
        e2u = np.exp(2 * u.value)
        du = u.derivs[1]
        vol = vol - 0.5 * (2 * geo.ip(du, Y) * yv + np.einsum("pi,pi->p", du, V) * ysq)
        return lhs * e2u, vol * e2u, bnd * e2u
    return lhs, vol, bnd


def lemd1(geo: Geometry, inp: Inputs) -> list[Display]:
    return [_propd2_parts(geo, inp, False)]


def propd2(geo: Geometry, inp: Inputs) -> list[Display]:
    return [_propd2_parts(geo, inp, True)]


def lempd3(geo: Geometry, inp: Inputs) -> list[Display]:
    conn = geo.conn
    sh = _shift(geo, inp, "Y")
    Y = sh.X
    u, v = inp["u"], inp["v"]
    e2u = np.exp(2 * u.value)
    du = u.derivs[1]
    vv, dv = v.value, v.derivs[1]
    H = covariant_derivative(covariant_derivative(v, conn, ""), conn, "d").value
    lap = np.einsum("pij,pij->p", geo.ginv, H)
    dvy = geo.ip(dv, Y)
    lhs = -2 * vv * e2u * geo.bilinear(sh.S, dv, dv) * dvy
    bracket = geo.nsq(dv) + vv * lap + 2 * vv * geo.ip(dv, du)
    vol = e2u * dvy * (dvy * bracket + 2 * vv * geo.bilinear(H, Y, dv))
    bnd = -vv * e2u * dvy**2 * geo.on_normal(dv)
    return [(lhs, vol, bnd)]


IDENTITY_FUNCS: dict[str, Callable[[Geometry, Inputs], list[Display]]] = {
    "LEM2": lem2, "LEM4": lem4, "LEM6": lem6, "COMB7": comb7, "CORD10": cord10, "CORD11": cord11,
    "IHP0": ihp0, "IHP1": ihp1, "IHP2": ihp2, "IHP3": ihp3, "COMB_U": comb_u,
    "LEMD1": lemd1, "PROPD2": propd2, "LEMPD3": lempd3,
}
