"""Poincare-ball chart, defining function, regions, quadrature and boundary integrals.

The model is the unit ball with Euclidean metric h and defining function
rho = (1 - |x|^2) / 2, so that g = rho^-2 h is exact hyperbolic space.  The
computational domain is the shell r_inner <= r <= r_outer; the inner sphere
plays the role of the inner boundary and r_outer < 1 truncates the conformal
boundary at infinity.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import jets as J
from .errors import DegenerateRegion, InvalidGeometry, NonFinite
from .fields import TensorField, rho_jet

GRID_FORMAT_VERSION = 1
REGION_KINDS = ("OMEGA", "E", "A", "ALL")


def rho_of_radius(r):
    return 0.5 * (1.0 - np.asarray(r, dtype=float) ** 2)


def radius_of_rho(rho):
    return np.sqrt(1.0 - 2.0 * np.asarray(rho, dtype=float))


def sphere_rule(n_ang: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and weights on S^2: Gauss-Legendre in cos(theta), trapezoid in phi."""
    ct, wt = np.polynomial.legendre.leggauss(n_ang)
    n_phi = 2 * n_ang
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - ct**2)
    dirs = np.stack([
        np.outer(st, np.cos(phi)).ravel(),
        np.outer(st, np.sin(phi)).ravel(),
        np.repeat(ct, n_phi),
    ], axis=1)
    w = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    return dirs, w


def radial_rule(r_inner: float, r_outer: float, n_r: int, q: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule (q points per cell) on [r_inner, r_outer]."""
    x, w = np.polynomial.legendre.leggauss(q)
    edges = np.linspace(r_inner, r_outer, n_r + 1)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wr = (0.5 * (b - a) * w).ravel()
    return r, wr


@dataclass(frozen=True)
class ChartGrid:
    """Quadrature grid of the shell r_inner <= r <= r_outer.

    ``points`` are Cartesian nodes, ``nodes`` the (r, theta, phi) triples and
    ``quad_weights`` integrate against the Euclidean volume.
    """

    r_inner: float
    r_outer: float
    n_r: int
    n_theta: int
    n_phi: int
    points: np.ndarray
    nodes: np.ndarray
    quad_weights: np.ndarray
    n_ang: int
    q_radial: int = 2

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def rho(self) -> np.ndarray:
        return rho_of_radius(self.nodes[:, 0])

    @property
    def shell_volume(self) -> float:
        return 4.0 * np.pi / 3.0 * (self.r_outer**3 - self.r_inner**3)

    def sphere(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        """Points and Euclidean area weights on the inner or outer sphere."""
        r0 = {"inner": self.r_inner, "outer": self.r_outer}[which]
        dirs, w = sphere_rule(self.n_ang)
        return r0 * dirs, r0**2 * w

    def describe(self) -> dict:
        return {"r_inner": self.r_inner, "r_outer": self.r_outer, "n_r": self.n_r, "n_theta": self.n_theta,
                "n_phi": self.n_phi, "q_radial": self.q_radial}


def build_ball_chart(r_inner: float, r_outer: float, n_r: int, n_ang: int, q_radial: int = 2) -> ChartGrid:
    """Tensor-product quadrature grid of the shell; see ``ChartGrid``."""
    if not (0.0 < r_inner < r_outer < 1.0):
        raise InvalidGeometry(f"need 0 < r_inner < r_outer < 1, got {r_inner}, {r_outer}")
    if min(n_r, n_ang) < 1 or q_radial < 1:
        raise InvalidGeometry("grid counts must be positive")
    r, wr = radial_rule(r_inner, r_outer, n_r, q_radial)
    dirs, wa = sphere_rule(n_ang)
    points = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = (wr[:, None] * r[:, None] ** 2 * wa[None, :]).ravel()
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * np.pi)
    nodes = np.stack([np.repeat(r, dirs.shape[0]), np.tile(theta, r.size), np.tile(phi, r.size)], axis=1)
    return ChartGrid(r_inner, r_outer, n_r, n_ang, 2 * n_ang, points, nodes, weights, n_ang, q_radial)


@dataclass(frozen=True)
class DefiningFunction:
    value: np.ndarray
    gradient: np.ndarray
    euclidean_hessian: np.ndarray

    @property
    def gradient_norm(self) -> np.ndarray:
        return np.linalg.norm(self.gradient, axis=-1)


def evaluate_defining_function(chart_or_points) -> DefiningFunction:
    pts = chart_or_points.points if isinstance(chart_or_points, ChartGrid) else np.atleast_2d(chart_or_points)
    n = pts.shape[0]
    return DefiningFunction(
        value=0.5 * (1.0 - np.einsum("pi,pi->p", pts, pts)),
        gradient=-pts.copy(),
        euclidean_hessian=np.broadcast_to(-np.eye(3), (n, 3, 3)).copy(),
    )


def smoothstep_down(t: np.ndarray, k: int = 0) -> np.ndarray:
    """Quintic profile equal to 1 for t <= 1 and 0 for t >= 2 (C^2), and its derivatives."""
    s = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
    inside = (t > 1.0) & (t < 2.0)
    forms = [
        lambda s: 1.0 - (10 * s**3 - 15 * s**4 + 6 * s**5),
        lambda s: -(30 * s**2 - 60 * s**3 + 30 * s**4),
        lambda s: -(60 * s - 180 * s**2 + 120 * s**3),
        lambda s: -(60 - 360 * s + 360 * s**2),
    ]
    if k == 0:
        return forms[0](s)
    return np.where(inside, forms[k](s), 0.0)


def cutoff_field(R: float) -> TensorField:
    """chi_R = chi(-ln(rho) / R) as a field usable on any point set."""
    profile = [lambda t, k=k: smoothstep_down(t, k) for k in range(4)]

    def fn(X: J.Jet) -> J.Jet:
        arg = J.log(rho_jet(X)) * (-1.0 / R)
        return J.apply(arg, profile)

    return TensorField(fn, (0, 0), f"chi_{R:g}")


def omega_radius(R: float) -> float:
    """Radius bounding Omega_R = {rho > e^{-2R}}; 0 if Omega_R is empty."""
    thr = np.exp(-2.0 * R)
    if thr >= 0.5:
        return 0.0
    return float(radius_of_rho(thr))


def cutoff_chi(chart: ChartGrid, R: float) -> np.ndarray:
    """Nodal values of chi_R on the chart."""
    if not np.any(chart.rho > np.exp(-2.0 * R)):
        raise DegenerateRegion(f"Omega_R contains no grid node for R={R}")
    return _chi_values(chart.rho, R)


def _chi_values(rho: np.ndarray, R: float) -> np.ndarray:
    return smoothstep_down(-np.log(rho) / R)


@dataclass(frozen=True)
class RegionMask:
    """Node membership of Omega_R, E_R = M minus Omega_R, or A_R = Omega_R minus Omega_{R/2}.

    Omega_R uses the strict inequality rho > e^{-2R}.
    """

    kind: str
    R: float
    node_membership: np.ndarray
    strict: bool = True

    def contains_rho(self, rho: np.ndarray) -> np.ndarray:
        return region_contains(self.kind, self.R, rho)

    def describe(self) -> dict:
        return {"kind": self.kind, "R": self.R, "strict": self.strict, "count": int(self.node_membership.sum())}


def region_contains(kind: str, R: float, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if kind == "ALL":
        return np.ones(rho.shape, dtype=bool)
    in_omega = rho > np.exp(-2.0 * R)
    if kind == "OMEGA":
        return in_omega
    if kind == "E":
        return ~in_omega
    if kind == "A":
        return in_omega & ~(rho > np.exp(-R))
    raise ValueError(f"unknown region kind {kind!r}; expected one of {REGION_KINDS}")


def region_mask(chart: ChartGrid, kind: str, R: float) -> RegionMask:
    if R <= 0:
        raise ValueError("R must be positive")
    kind = {"Omega_R": "OMEGA", "E_R": "E", "A_R": "A"}.get(kind, kind)
    if kind in ("OMEGA", "A") and np.exp(-2.0 * R) >= 0.5:
        raise DegenerateRegion(f"Omega_R is empty for R={R} (threshold above sup rho)")
    member = region_contains(kind, R, chart.rho)
    if not member.any():
        raise DegenerateRegion(f"region {kind} with R={R} contains no grid node")
    return RegionMask(kind, R, member)


def full_region(chart: ChartGrid) -> RegionMask:
    return RegionMask("ALL", float("inf"), np.ones(chart.size, dtype=bool))


def _values(chart_pts: np.ndarray, f) -> np.ndarray:
    if isinstance(f, TensorField):
        return f(J.Jet([chart_pts])).value
    if callable(f):
        return np.asarray(f(chart_pts), dtype=float)
    return np.asarray(f, dtype=float)


def integrate_weighted(chart: ChartGrid, f, delta: float = 0.0, region: RegionMask | None = None,
                       measure: str = "g") -> float:
    """Integral of f * rho**delta over the region.

    ``measure`` is "g" for the hyperbolic volume rho^-3 dx or "h" for dx.
    ``f`` may be nodal values, a callable on points, or a scalar field.
    """
    vals = _values(chart.points, f)
    if vals.ndim == 0:
        vals = np.full(chart.size, float(vals))
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand has non-finite node values")
    rho = chart.rho
    w = chart.quad_weights * rho**delta
    if measure == "g":
        w = w * rho**-3.0
    elif measure != "h":
        raise ValueError("measure must be 'g' or 'h'")
    if region is not None:
        w = np.where(region.node_membership, w, 0.0)
    return float(np.dot(w, vals))


def boundary_integrate(chart: ChartGrid, f, which: str = "inner") -> float:
    """Surface integral against the area induced by the hyperbolic metric."""
    pts, w = chart.sphere(which)
    vals = _values(pts, f)
    if vals.ndim == 0:
        vals = np.full(w.shape, float(vals))
    r0 = np.linalg.norm(pts[0])
    return float(np.dot(w * rho_of_radius(r0) ** -2.0, vals))


def inner_normal(points: np.ndarray) -> np.ndarray:
    """Unit normal (hyperbolic metric) pointing toward decreasing r, as a vector."""
    r = np.linalg.norm(points, axis=1, keepdims=True)
    rho = rho_of_radius(r)
    return -rho * points / r


# ---------------------------------------------------------------------------
# serialization


def save_chart(chart: ChartGrid, path: str | Path) -> None:
    """Text header followed by little-endian float64 columns (r, theta, phi, weight)."""
    header = (f"ahgrid {GRID_FORMAT_VERSION}\n"
              f"r_inner {chart.r_inner!r}\nr_outer {chart.r_outer!r}\nn_r {chart.n_r}\n"
              f"n_ang {chart.n_ang}\nq_radial {chart.q_radial}\nnodes {chart.size}\nend\n")
    cols = np.column_stack([chart.nodes, chart.quad_weights]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(cols.tobytes(order="C"))


def load_chart(path: str | Path) -> ChartGrid:
    raw = Path(path).read_bytes()
    end = raw.index(b"\nend\n") + len(b"\nend\n")
    meta = {}
    for line in raw[:end].decode("ascii").splitlines():
        key, _, val = line.partition(" ")
        meta[key] = val
    if int(meta["ahgrid"]) != GRID_FORMAT_VERSION:
        raise InvalidGeometry(f"unsupported grid format version {meta['ahgrid']}")
    cols = np.frombuffer(raw[end:], dtype="<f8").reshape(int(meta["nodes"]), 4)
    r, th, ph, w = cols.T
    pts = np.stack([r * np.sin(th) * np.cos(ph), r * np.sin(th) * np.sin(ph), r * np.cos(th)], axis=1)
    n_ang = int(meta["n_ang"])
    return ChartGrid(float(meta["r_inner"]), float(meta["r_outer"]), int(meta["n_r"]), n_ang, 2 * n_ang,
                     pts, cols[:, :3].copy(), w.copy(), n_ang, int(meta["q_radial"]))


def export_nodes_csv(chart: ChartGrid, path: str | Path, columns: dict[str, np.ndarray] | None = None) -> None:
    cols = {"r": chart.nodes[:, 0], "theta": chart.nodes[:, 1], "phi": chart.nodes[:, 2],
            "weight": chart.quad_weights, "rho": chart.rho}
    cols.update(columns or {})
    names = list(cols)
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    data = np.column_stack([cols[k] for k in names])
    for row in data:
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    Path(path).write_text(buf.getvalue())
