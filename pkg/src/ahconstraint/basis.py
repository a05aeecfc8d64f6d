"""Finite-dimensional trial spaces on the shell and assembly of weighted Gram matrices.

Trial functions are clamped cubic B-splines in r (value and slope vanish on
both spheres) times low-degree polynomials in the unit direction.  Linear
differential operators are assembled without symbolic work: the operator is
applied to unit jets (one per input derivative component), which yields its
pointwise coefficient matrix, and the basis jets are then contracted against
those coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import BSpline

from . import jets as J
from .fields import TensorField, coordinates
from .jets import Jet
from .manifold import ChartGrid, build_ball_chart

SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
UNITS_PER_COMPONENT = 1 + 3 + len(SYM_PAIRS)


def _apply_vector(u: Jet, table: Callable[[int, np.ndarray], np.ndarray], k: int) -> Jet:
    """Jet of a vector of scalar functions of ``u``; ``table(j, v)`` gives j-th derivatives."""
    val = table(0, u.derivs[0])
    if k == 0:
        return Jet([val])
    inner = _apply_vector(u.truncate(k - 1), lambda j, v: table(j + 1, v), k - 1)
    return Jet.assemble(val, J.contract("m,x->xm", inner, u.d().truncate(k - 1)))


def _angular_jets(n: Jet, ell_max: int) -> Jet:
    one = J.Jet.constant(1.0, n.npts, n.order)
    funcs = [one]
    if ell_max >= 1:
        funcs += [n.take(i) for i in range(3)]
    if ell_max >= 2:
        nx, ny, nz = (n.take(i) for i in range(3))
        funcs += [nx * ny, ny * nz, nx * nz, nx * nx - ny * ny, nz * nz * 3.0 - 1.0]
    if ell_max > 2:
        raise ValueError("angular degree above 2 is not supported")
    return Jet([np.stack([f.derivs[k] for f in funcs], axis=-1) for k in range(n.order + 1)])


@dataclass
class ShellBasis:
    """Clamped radial splines times angular polynomials on [r_inner, r_outer]."""

    r_inner: float
    r_outer: float
    n_intervals: int
    ell_max: int = 1
    n_ang: int = 6
    q: int = 4
    chart: ChartGrid = field(init=False)

    def __post_init__(self):
        if self.n_intervals < 2:
            raise ValueError("need at least two radial intervals")
        inner = np.linspace(self.r_inner, self.r_outer, self.n_intervals + 1)
        self.knots = np.concatenate([[self.r_inner] * 3, inner, [self.r_outer] * 3])
        n_all = len(self.knots) - 4
        self._splines = []
        for j in range(2, n_all - 2):
            c = np.zeros(n_all)
            c[j] = 1.0
            s = BSpline(self.knots, c, 3, extrapolate=False)
            self._splines.append([s] + [s.derivative(m) for m in (1, 2, 3)])
        self.chart = build_ball_chart(self.r_inner, self.r_outer, self.n_intervals, self.n_ang, self.q)

    @property
    def n_radial(self) -> int:
        return len(self._splines)

    @property
    def n_angular(self) -> int:
        return {0: 1, 1: 4, 2: 9}[self.ell_max]

    @property
    def size(self) -> int:
        return self.n_radial * self.n_angular

    def _radial_table(self, j: int, r: np.ndarray) -> np.ndarray:
        cols = [np.nan_to_num(s[j](r)) for s in self._splines]
        return np.stack(cols, axis=-1)

    def scalar_jets(self, X: Jet) -> Jet:
        """Jets of all scalar basis functions; the basis index is the last slot."""
        r = J.sqrt(J.contract("i,i->", X, X))
        rad = _apply_vector(r, self._radial_table, X.order)
        ang = _angular_jets(J.scale(J.reciprocal(r), X), self.ell_max)
        prod = J.contract("a,b->ab", rad, ang)
        return prod.map(lambda a: a.reshape(a.shape[:-2] + (self.size,)))

    def field(self, coeffs: np.ndarray, rank: tuple[int, int] = (0, 0)) -> TensorField:
        """Expansion sum_b coeffs[..., b] phi_b as a field; leading axes of coeffs are components."""
        coeffs = np.asarray(coeffs, dtype=float)

        def fn(X: Jet) -> Jet:
            b = self.scalar_jets(X)
            return b.map(lambda a: a @ coeffs.T if coeffs.ndim == 2 else a @ coeffs)

        return TensorField(fn, rank, "spline")

    def project(self, f: TensorField) -> np.ndarray:
        """Euclidean L2 projection of a field onto the span (per component)."""
        pts = self.chart.points
        w = self.chart.quad_weights
        B = self.scalar_jets(coordinates(pts, 0)).value
        G = B.T @ (w[:, None] * B)
        vals = f(coordinates(pts, 0)).value.reshape(pts.shape[0], -1)
        rhs = B.T @ (w[:, None] * vals)
        sol = np.linalg.solve(G, rhs)
        return sol.T if sol.shape[1] > 1 else sol[:, 0]


def _unit_inputs(shapes: Sequence[tuple], npts: int) -> tuple[list[Jet], int]:
    """Tiled input jets realizing every unit derivative component once."""
    comps = [int(np.prod(s)) if s else 1 for s in shapes]
    n_units = UNITS_PER_COMPONENT * sum(comps)
    jets = []
    offset = 0
    for shape, nc in zip(shapes, comps):
        d0 = np.zeros((n_units, npts, nc))
        d1 = np.zeros((n_units, npts, 3, nc))
        d2 = np.zeros((n_units, npts, 3, 3, nc))
        for c in range(nc):
            base = offset + UNITS_PER_COMPONENT * c
            d0[base, :, c] = 1.0
            for i in range(3):
                d1[base + 1 + i, :, i, c] = 1.0
            for m, (i, j) in enumerate(SYM_PAIRS):
                d2[base + 4 + m, :, i, j, c] = 1.0
                d2[base + 4 + m, :, j, i, c] = 1.0
        offset += UNITS_PER_COMPONENT * nc
        tail = tuple(shape)
        jets.append(Jet([d0.reshape((n_units * npts,) + tail),
                         d1.reshape((n_units * npts, 3) + tail),
                         d2.reshape((n_units * npts, 3, 3) + tail)]))
    return jets, n_units


def _basis_components(B: Jet) -> np.ndarray:
    """(npts, 10, nb) array of value, gradient and symmetric Hessian entries."""
    rows = [B.derivs[0]] + [B.derivs[1][:, i] for i in range(3)]
    rows += [B.derivs[2][:, i, j] for i, j in SYM_PAIRS]
    return np.stack(rows, axis=1)


OpFn = Callable[[np.ndarray, list[Jet], int], list[np.ndarray]]
"""op(points, inputs, reps): ``inputs`` live on ``points`` tiled ``reps`` times."""


@dataclass
class Assembly:
    gram: np.ndarray
    rhs: np.ndarray | None
    target_sq: float


def operator_rows(basis: ShellBasis, op: OpFn, shapes: Sequence[tuple], points: np.ndarray) -> list[np.ndarray]:
    """Pointwise matrices mapping dof vectors to flattened operator outputs."""
    npts = points.shape[0]
    inputs, n_units = _unit_inputs(shapes, npts)
    outs = op(points, inputs, n_units)
    E = _basis_components(basis.scalar_jets(coordinates(points, 2)))
    nb = basis.size
    comps = [int(np.prod(s)) if s else 1 for s in shapes]
    rows = []
    for out in outs:
        C = out.reshape(n_units, npts, -1)
        blocks = []
        for u0 in range(0, n_units, UNITS_PER_COMPONENT):
            Cu = C[u0:u0 + UNITS_PER_COMPONENT]
            blocks.append(np.einsum("upm,pub->pmb", Cu, E))
        rows.append(np.concatenate(blocks, axis=2))
    return rows


def assemble(basis: ShellBasis, op: OpFn, shapes: Sequence[tuple],
             weights: Callable[[np.ndarray], list[np.ndarray]],
             targets: Callable[[np.ndarray], list[np.ndarray]] | None = None, chunk: int = 256) -> Assembly:
    """Weighted normal matrix sum_p w_p L_p^T L_p (and L^T W t for given targets)."""
    pts_all = basis.chart.points
    qw_all = basis.chart.quad_weights
    ndof = basis.size * sum(int(np.prod(s)) if s else 1 for s in shapes)
    gram = np.zeros((ndof, ndof))
    rhs = np.zeros(ndof) if targets is not None else None
    tsq = 0.0
    for start in range(0, pts_all.shape[0], chunk):
        pts = pts_all[start:start + chunk]
        qw = qw_all[start:start + chunk]
        rows = operator_rows(basis, op, shapes, pts)
        ws = weights(pts)
        ts = targets(pts) if targets is not None else None
        for k, (L, w) in enumerate(zip(rows, ws)):
            ww = qw * w
            Lw = (L * np.sqrt(ww)[:, None, None]).reshape(-1, ndof)
            gram += Lw.T @ Lw
            if ts is not None:
                t = ts[k].reshape(pts.shape[0], -1)
                tw = (t * np.sqrt(ww)[:, None]).ravel()
                rhs += Lw.T @ tw
                tsq += float(tw @ tw)
    return Assembly(0.5 * (gram + gram.T), rhs, tsq)


def split_dofs(vec: np.ndarray, basis: ShellBasis, shapes: Sequence[tuple]) -> list[np.ndarray]:
    out = []
    off = 0
    for s in shapes:
        nc = int(np.prod(s)) if s else 1
        block = vec[off:off + nc * basis.size].reshape(nc, basis.size)
        out.append(block[0] if not s else block)
        off += nc * basis.size
    return out
