"""Tensor fields as callables on coordinate jets, plus the test-field catalogue.

A field maps a coordinate jet to a jet of its Cartesian components.  Feeding
it a coordinate jet of order k yields exact derivatives up to order k (the
analytic path).  ``sample`` with ``fd_step`` set instead evaluates the same
callable on point values only and builds derivatives from second-order
central differences (the finite-difference path).  The FD step is scaled by
``1 - |x|^2`` so that the stencil has uniform size in hyperbolic units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import jets as J
from .jets import Jet

MAX_FD_ORDER = 2
CHUNK = 4096


@dataclass(frozen=True)
class TensorField:
    """Rank-(r, m) tensor field given by its Cartesian components.

    ``rank = (contravariant, covariant)``.  ``fn`` receives a coordinate jet
    and returns a jet of shape ``(3,) * (r + m)`` with the contravariant slots
    first.
    """

    fn: Callable[[Jet], Jet]
    rank: tuple[int, int] = (0, 0)
    name: str = ""
    symmetric: bool = False

    def __call__(self, X: Jet) -> Jet:
        return self.fn(X)

    @property
    def variance(self) -> str:
        return "u" * self.rank[0] + "d" * self.rank[1]

    def sample(self, points: np.ndarray, order: int, fd_step: float | None = None) -> Jet:
        return sample(self, points, order, fd_step)

    def __add__(self, other: "TensorField") -> "TensorField":
        if other.rank != self.rank:
            raise ValueError("rank mismatch")
        return TensorField(lambda X: self.fn(X) + other.fn(X), self.rank, f"{self.name}+{other.name}",
                           self.symmetric and other.symmetric)

    def __sub__(self, other: "TensorField") -> "TensorField":
        return self + other * -1.0

    def __mul__(self, c: float) -> "TensorField":
        return TensorField(lambda X: self.fn(X) * float(c), self.rank, self.name, self.symmetric)

    __rmul__ = __mul__

    def __neg__(self) -> "TensorField":
        return self * -1.0

    def times(self, s: "TensorField") -> "TensorField":
        """Pointwise product with a scalar field."""
        return TensorField(lambda X: J.scale(s.fn(X), self.fn(X)), self.rank, f"{s.name}*{self.name}",
                           self.symmetric)


def coordinates(points: np.ndarray, order: int) -> Jet:
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    derivs = [points.copy()]
    if order >= 1:
        derivs.append(np.broadcast_to(np.eye(3), (n, 3, 3)).copy())
    for k in range(2, order + 1):
        derivs.append(np.zeros((n,) + (3,) * (k + 1)))
    return Jet(derivs)


def fd_offsets(order: int) -> list[tuple[tuple[int, int], ...]]:
    """Stencil offsets as tuples of (axis, sign) steps."""
    offs: list[tuple[tuple[int, int], ...]] = [()]
    if order >= 1:
        offs += [((i, s),) for i in range(3) for s in (1, -1)]
    if order >= 2:
        offs += [((i, s), (j, t)) for i in range(3) for j in range(i + 1, 3) for s in (1, -1) for t in (1, -1)]
    return offs


def local_step(points: np.ndarray, h: float) -> np.ndarray:
    return h * (1.0 - np.einsum("pi,pi->p", points, points))


def _fd_sample(f: TensorField, points: np.ndarray, order: int, h: float) -> Jet:
    if order > MAX_FD_ORDER:
        raise ValueError(f"finite differences provide at most order {MAX_FD_ORDER}")
    n = points.shape[0]
    step = local_step(points, h)
    offs = fd_offsets(order)
    shifted = []
    for off in offs:
        q = points.copy()
        for axis, sgn in off:
            q[:, axis] += sgn * step
        shifted.append(q)
    vals = f(coordinates(np.concatenate(shifted), 0)).derivs[0]
    vals = vals.reshape((len(offs), n) + vals.shape[1:])
    table = {off: vals[k] for k, off in enumerate(offs)}
    tshape = vals.shape[2:]
    bs = (n,) + (1,) * len(tshape)
    s = step.reshape(bs)
    f0 = table[()]
    derivs = [f0]
    if order >= 1:
        d1 = np.empty((n, 3) + tshape)
        for i in range(3):
            d1[:, i] = (table[((i, 1),)] - table[((i, -1),)]) / (2 * s)
        derivs.append(d1)
    if order >= 2:
        d2 = np.empty((n, 3, 3) + tshape)
        for i in range(3):
            d2[:, i, i] = (table[((i, 1),)] - 2 * f0 + table[((i, -1),)]) / s**2
            for j in range(i + 1, 3):
                m = (table[((i, 1), (j, 1))] - table[((i, 1), (j, -1))]
                     - table[((i, -1), (j, 1))] + table[((i, -1), (j, -1))]) / (4 * s**2)
                d2[:, i, j] = m
                d2[:, j, i] = m
        derivs.append(d2)
    return Jet(derivs)


def sample(f: TensorField, points: np.ndarray, order: int, fd_step: float | None = None,
           chunk: int = CHUNK) -> Jet:
    """Jet of ``f`` at ``points`` up to ``order``; FD when ``fd_step`` is set."""
    points = np.asarray(points, dtype=float)
    parts = []
    for start in range(0, points.shape[0], chunk):
        p = points[start:start + chunk]
        if fd_step is None:
            parts.append(f(coordinates(p, order)).truncate(order))
        else:
            parts.append(_fd_sample(f, p, order, fd_step))
    if len(parts) == 1:
        return parts[0]
    return J.concat(parts)


# ---------------------------------------------------------------------------
# catalogue


def rho_jet(X: Jet) -> Jet:
    return 0.5 * (1.0 - J.contract("i,i->", X, X))


RHO = TensorField(rho_jet, (0, 0), "rho")


def _hyperbolic_metric(X: Jet) -> Jet:
    r = rho_jet(X)
    return J.scale(r ** -2.0, J.Jet.constant(np.eye(3), X.npts, X.order))


HYPERBOLIC_METRIC = TensorField(_hyperbolic_metric, (0, 2), "g_hyp", symmetric=True)
EUCLIDEAN_METRIC = TensorField(lambda X: J.Jet.constant(np.eye(3), X.npts, X.order), (0, 2), "h_euc",
                               symmetric=True)


def constant(value, rank: tuple[int, int] = (0, 0), name: str = "const") -> TensorField:
    arr = np.asarray(value, dtype=float)
    return TensorField(lambda X: J.Jet.constant(arr, X.npts, X.order), rank, name)


def rho_power(p: float) -> TensorField:
    return TensorField(lambda X: rho_jet(X) ** p, (0, 0), f"rho^{p:g}")


def cosh_distance() -> TensorField:
    """cosh of the hyperbolic distance to the centre, (1 + r^2) / (1 - r^2)."""
    return TensorField(lambda X: rho_jet(X) ** -1.0 - 1.0, (0, 0), "cosh_dist")


def rotation_killing(axis=(0.0, 0.0, 1.0), lowered: bool = True) -> TensorField:
    """Rotation generator a x x; lowered with the hyperbolic metric by default."""
    a = np.asarray(axis, dtype=float)
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    m = np.einsum("ijk,j->ik", eps, a)

    def fn(X: Jet) -> Jet:
        v = J.contract("ik,k->i", J.Jet.constant(m, X.npts, X.order), X)
        return J.scale(rho_jet(X) ** -2.0, v) if lowered else v

    return TensorField(fn, (0, 1) if lowered else (1, 0), "rotation")


def boost_killing(direction=(1.0, 0.0, 0.0), lowered: bool = True) -> TensorField:
    """Hyperbolic translation generator ((1 + r^2) a / 2 - (a.x) x)."""
    a = np.asarray(direction, dtype=float)

    def fn(X: Jet) -> Jet:
        A = J.Jet.constant(a, X.npts, X.order)
        r2 = J.contract("i,i->", X, X)
        v = J.scale(0.5 * (1.0 + r2), A) - J.scale(J.contract("i,i->", A, X), X)
        return J.scale(rho_jet(X) ** -2.0, v) if lowered else v

    return TensorField(fn, (0, 1) if lowered else (1, 0), "boost")


def _bump_profile(q: np.ndarray, k: int) -> np.ndarray:
    inside = q < 1.0
    t = np.where(inside, 1.0 / np.where(inside, 1.0 - q, 1.0), 0.0)
    f = np.where(inside, np.exp(1.0 - t), 0.0)
    polys = [1.0, -t**2, t**3 * (t - 2.0), -t**6 + 6 * t**5 - 6 * t**4]
    return np.where(inside, f * polys[k], 0.0)


BUMP_PROFILE = [lambda q, k=k: _bump_profile(q, k) for k in range(4)]


def bump_jet(X: Jet, center, radius: float) -> Jet:
    c = J.Jet.constant(np.asarray(center, dtype=float), X.npts, X.order)
    dx = X - c
    q = J.contract("i,i->", dx, dx) * (1.0 / radius**2)
    if X.order > 3:
        raise ValueError("bump profiles implemented up to order 3")
    return J.apply(q, BUMP_PROFILE)


def bump(center, radius: float, coeff=1.0, rank: tuple[int, int] | None = None) -> TensorField:
    """Compactly supported smooth bump times a constant tensor ``coeff``."""
    coeff = np.asarray(coeff, dtype=float)
    if rank is None:
        rank = (0, coeff.ndim)
    center = np.asarray(center, dtype=float)

    def fn(X: Jet) -> Jet:
        b = bump_jet(X, center, radius)
        if coeff.ndim == 0:
            return b * float(coeff)
        return J.scale(b, J.Jet.constant(coeff, X.npts, X.order))

    sym = coeff.ndim == 2 and np.allclose(coeff, coeff.T)
    return TensorField(fn, rank, "bump", sym)


def conformal_factor_metric(u: TensorField) -> TensorField:
    """e^{2u} times the hyperbolic metric."""

    def fn(X: Jet) -> Jet:
        return J.scale(J.exp(u(X) * 2.0), _hyperbolic_metric(X))

    return TensorField(fn, (0, 2), "conformal", symmetric=True)


def direction_points(center_radius: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    lo, hi = center_radius
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * rng.uniform(lo, hi)


@dataclass(frozen=True)
class ShellSupport:
    """Radial window that admissible test fields must stay inside."""

    r_min: float
    r_max: float
    width: tuple[float, float] = (0.12, 0.25)


def random_bump_field(rng: np.random.Generator, support: ShellSupport, rank: tuple[int, int] = (0, 0),
                      n_bumps: int = 2, symmetric: bool = True) -> TensorField:
    """Sum of bumps whose supports sit inside ``support``."""
    total = None
    for _ in range(n_bumps):
        rad = rng.uniform(*support.width)
        lo = support.r_min + rad
        hi = support.r_max - rad
        if hi <= lo:
            rad = 0.45 * (support.r_max - support.r_min)
            lo = hi = 0.5 * (support.r_min + support.r_max)
        c = direction_points((lo, hi), rng)
        nt = rank[0] + rank[1]
        coeff = rng.normal(size=(3,) * nt) if nt else rng.normal()
        if nt == 2 and symmetric:
            coeff = 0.5 * (coeff + coeff.T)
        term = bump(c, rad, coeff, rank)
        total = term if total is None else total + term
    return total


def boundary_bump_field(rng: np.random.Generator, r_sphere: float, rank: tuple[int, int] = (0, 0),
                        radius: float = 0.2) -> TensorField:
    """Bump centred on a sphere, so it does not vanish there."""
    c = direction_points((r_sphere, r_sphere), rng)
    nt = rank[0] + rank[1]
    coeff = rng.normal(size=(3,) * nt) if nt else 1.0 + abs(rng.normal())
    if nt == 2:
        coeff = 0.5 * (coeff + coeff.T)
    return bump(c, radius, coeff, rank)


def _monomials(X: Jet, degree: int) -> Jet:
    """Jets of 1, x_i, x_i x_j (i <= j) up to ``degree``, stacked in the last slot."""
    one = J.Jet.constant(1.0, X.npts, X.order)
    mons = [one]
    if degree >= 1:
        mons += [X.take(i) for i in range(3)]
    if degree >= 2:
        mons += [X.take(i) * X.take(j) for i in range(3) for j in range(i, 3)]
    if degree > 2:
        raise ValueError("polynomial degree above 2 is not supported")
    return Jet([np.stack([m.derivs[k] for m in mons], axis=-1) for k in range(X.order + 1)])


N_MONOMIALS = {0: 1, 1: 4, 2: 10}


def _power_profile(power: int):
    """Derivatives of q -> (1 - q)^power on q < 1, zero beyond."""

    def table(k: int):
        def f(q: np.ndarray) -> np.ndarray:
            if k > power:
                return np.zeros_like(q)
            c = (-1.0) ** k * math.factorial(power) / math.factorial(power - k)
            return np.where(q < 1.0, c * np.clip(1.0 - q, 0.0, None) ** (power - k), 0.0)

        return f

    return [table(k) for k in range(4)]


def shell_mode(r_min: float, r_max: float, coeffs: np.ndarray, rank: tuple[int, int] = (0, 0),
               degree: int = 2, power: int | None = None) -> TensorField:
    """Radial bump on [r_min, r_max] times a polynomial in x with tensor coefficients.

    ``coeffs`` has shape (number of monomials,) + tensor shape.  Such fields
    are smooth in the angular variables, so sphere quadrature converges fast.
    With ``power`` set, the radial profile is (1 - t^2)^power instead of the
    smooth bump: it has power - 1 vanishing derivatives at the end spheres and
    is polynomial in between, which keeps quadrature on matching shells exact
    up to the weight.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    rc, hw = 0.5 * (r_min + r_max), 0.5 * (r_max - r_min)
    nt = rank[0] + rank[1]
    sym = nt == 2 and np.allclose(coeffs, np.swapaxes(coeffs, -1, -2))
    profile = BUMP_PROFILE if power is None else _power_profile(power)

    def fn(X: Jet) -> Jet:
        if X.order > 3:
            raise ValueError("bump profiles implemented up to order 3")
        r = J.sqrt(J.contract("i,i->", X, X))
        t = (r - rc) * (1.0 / hw)
        prof = J.apply(t * t, profile)
        poly = _monomials(X, degree)
        val = poly.map(lambda a: np.tensordot(a, coeffs, axes=(a.ndim - 1, 0)))
        return J.scale(prof, val)

    return TensorField(fn, rank, "shell_mode", sym)


def random_shell_mode(rng: np.random.Generator, support: ShellSupport, rank: tuple[int, int] = (0, 0),
                      degree: int = 2, symmetric: bool = True, power: int | None = None,
                      full: bool = False) -> TensorField:
    """Shell mode with normal random coefficients on a random sub-shell of ``support`` (all of it if ``full``)."""
    span = support.r_max - support.r_min
    width = span if full else rng.uniform(0.6, 1.0) * span
    r0 = support.r_min + (0.0 if full else rng.uniform(0.0, span - width))
    nt = rank[0] + rank[1]
    coeffs = rng.normal(size=(N_MONOMIALS[degree],) + (3,) * nt)
    if nt == 2 and symmetric:
        coeffs = 0.5 * (coeffs + np.swapaxes(coeffs, -1, -2))
    return shell_mode(r0, r0 + width, coeffs, rank, degree, power)


def polynomial_field(coeffs: np.ndarray, rank: tuple[int, int] = (0, 0), degree: int = 2) -> TensorField:
    """Polynomial of degree <= 2 in x with tensor coefficients (no support restriction)."""
    coeffs = np.asarray(coeffs, dtype=float)

    def fn(X: Jet) -> Jet:
        poly = _monomials(X, degree)
        return poly.map(lambda a: np.tensordot(a, coeffs, axes=(a.ndim - 1, 0)))

    return TensorField(fn, rank, "polynomial")
