"""Weighted Lebesgue, Sobolev and Hölder norms on the ball model, and empirical
probes of the weighted functional inequalities.

Norm convention (used everywhere): for a tensor u,

    ||u||_{p,delta}   = ( int |u|_hyp^p rho^{p delta} dmu(g_hyp) )^{1/p},
    ||u||_{inf,delta} = sup rho^delta |u|_hyp,
    ||u||_{k,p,delta} = sum_{j <= k} ||nabla^j u||_{p,delta},

with nabla the hyperbolic Levi-Civita connection.  Every public entry point
takes delta exactly as written in this formula; callers that want the
"-delta" norms pass the negated value themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyFamily, InsufficientSmoothness, NonFinite, UnknownIdentity
from .fields import (ShellSupport, TensorField, cosh_distance, random_bump_field, random_shell_mode, rho_power,
                     rotation_killing, sample)
from .manifold import ChartGrid, RegionMask
from .records import ConstantEstimate
from .tensor import covariant_derivative, hyperbolic_connection

DIM = 3
CONVENTIONS = ("as-written", "negated")


@dataclass(frozen=True)
class WeightSpec:
    """Derivative order k, exponent p (may be inf) and weight delta."""

    k: int = 0
    p: float = 2.0
    delta: float = 0.0
    convention: str = "as-written"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError("k must be a non-negative integer")
        if not (self.p >= 1.0):
            raise ValueError("p must be at least 1")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")

    def to_dict(self) -> dict:
        return {"k": int(self.k), "p": "inf" if math.isinf(self.p) else float(self.p), "delta": float(self.delta),
                "convention": self.convention}


# ---------------------------------------------------------------------------
# pointwise norms of covariant derivatives


def _rho(points: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - np.einsum("pi,pi->p", points, points))


def derivative_norms(u: TensorField, points: np.ndarray, k: int, fd_step: float | None = None) -> list[np.ndarray]:
    """Pointwise hyperbolic norms |nabla^j u| for j = 0..k.

    A Cartesian tensor with r upper and m lower slots has hyperbolic norm
    rho^{m - r} times its Euclidean norm.
    """
    if fd_step is not None and k > 2:
        raise InsufficientSmoothness("the FD path supplies at most two derivatives")
    r, m = u.rank
    var = "u" * r + "d" * m
    jet = sample(u, points, k, fd_step)
    rho = _rho(points)
    conn = hyperbolic_connection(points, max(k - 1, 0)) if k else None
    out = []
    cur, cvar = jet, var
    for j in range(k + 1):
        v = cur.value.reshape(points.shape[0], -1)
        out.append(np.sqrt(np.einsum("pi,pi->p", v, v)) * rho ** (m + j - r))
        if j < k:
            cur = covariant_derivative(cur, conn, cvar)
            cvar = "d" + cvar
    return out


def _lp(vals: np.ndarray, rho: np.ndarray, w: np.ndarray, p: float, delta: float) -> float:
    if not np.all(np.isfinite(vals)):
        raise NonFinite("norm integrand has non-finite node values")
    if math.isinf(p):
        return float(np.max(rho**delta * vals)) if vals.size else 0.0
    return float(np.sum(w * rho ** (p * delta - DIM) * vals**p) ** (1.0 / p))


def _region_nodes(chart: ChartGrid, region: RegionMask | None) -> np.ndarray:
    if region is None:
        return np.arange(chart.size)
    return np.nonzero(region.node_membership)[0]


def weighted_norm(u: TensorField | np.ndarray, spec: WeightSpec, chart: ChartGrid, region: RegionMask | None = None,
                  fd_step: float | None = None, chunk: int = 8192) -> float:
    """||u||_{k,p,delta} over the region (whole chart by default).

    ``u`` may also be an array of nodal hyperbolic norms (k = 0 only).
    """
    idx = _region_nodes(chart, region)
    rho_all = chart.rho
    if isinstance(u, np.ndarray):
        if spec.k > 0:
            raise InsufficientSmoothness("nodal values carry no derivatives")
        vals = np.abs(u.reshape(chart.size, -1)).max(axis=1) if u.ndim > 1 else np.abs(u)
        return _lp(vals[idx], rho_all[idx], chart.quad_weights[idx], spec.p, spec.delta)
    parts = [[] for _ in range(spec.k + 1)]
    for s in range(0, idx.size, chunk):
        sel = idx[s:s + chunk]
        for j, v in enumerate(derivative_norms(u, chart.points[sel], spec.k, fd_step)):
            parts[j].append(v)
    total = 0.0
    for j in range(spec.k + 1):
        vals = np.concatenate(parts[j]) if parts[j] else np.zeros(0)
        total += _lp(vals, rho_all[idx], chart.quad_weights[idx], spec.p, spec.delta)
    return total


# ---------------------------------------------------------------------------
# Hölder


def hyperbolic_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distance in the Poincaré ball (curvature -1)."""
    num = 2.0 * np.sum((x - y) ** 2, axis=-1)
    den = (1.0 - np.sum(x * x, axis=-1)) * (1.0 - np.sum(y * y, axis=-1))
    return np.arccosh(1.0 + num / den)


def _orthonormal_values(u: TensorField | np.ndarray, points: np.ndarray) -> np.ndarray:
    """Components in the orthonormal frame rho * d/dx_i: Cartesian components times rho^{m - r}."""
    if isinstance(u, np.ndarray):
        return u.reshape(points.shape[0], -1).astype(float)
    r, m = u.rank
    vals = sample(u, points, 0).value.reshape(points.shape[0], -1)
    return vals * (_rho(points) ** (m - r))[:, None]


@dataclass
class HolderEstimate:
    value: float
    sup_part: float
    seminorm_part: float
    pairs: int
    label: str = "lower bound (sampled node pairs)"


def holder_seminorm_estimate(u: TensorField | np.ndarray, alpha: float, delta: float, chart: ChartGrid,
                             max_distance: float = 1.0, max_nodes: int = 4000, neighbours: int = 12,
                             seed: int = 0) -> HolderEstimate:
    """Sampled ||u||_{C^{0,alpha}_delta}: sup rho^delta |u| plus the weighted difference quotient
    over node pairs at hyperbolic distance at most ``max_distance``.

    Every node is compared with its nearest neighbours (this catches
    short-range roughness), and a fixed random subset of at most
    ``max_nodes`` nodes is compared with all nodes in range.  The result is a
    lower bound for the true norm.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    pts = chart.points
    vals = _orthonormal_values(u, pts)
    rho = _rho(pts)
    sup_part = float(np.max(rho**delta * np.linalg.norm(vals, axis=1)))
    tree = cKDTree(pts)

    def quotient(i: np.ndarray, j: np.ndarray) -> tuple[float, int]:
        d = hyperbolic_distance(pts[i], pts[j])
        ok = (d <= max_distance) & (d > 0)
        if not ok.any():
            return 0.0, 0
        diff = np.linalg.norm(vals[i[ok]] - vals[j[ok]], axis=1)
        return float(np.max(rho[i[ok]] ** delta * diff / d[ok] ** alpha)), int(ok.sum())

    k = min(neighbours + 1, chart.size)
    _, nb = tree.query(pts, k=k)
    best, npairs = quotient(np.repeat(np.arange(chart.size), k - 1), nb[:, 1:].ravel())
    sel = np.arange(chart.size)
    if chart.size > max_nodes:
        sel = np.sort(np.random.default_rng(seed).choice(chart.size, max_nodes, replace=False))
    # d <= D implies |x - y|^2 <= (cosh D - 1) / 2 (1 - |x|^2)
    reach = np.sqrt((math.cosh(max_distance) - 1.0) / 2.0 * (1.0 - np.sum(pts * pts, axis=1)))
    for i in sel:
        nbi = np.asarray(tree.query_ball_point(pts[i], reach[i]), dtype=int)
        q, m = quotient(np.full(nbi.size, i), nbi)
        best = max(best, q)
        npairs += m
    return HolderEstimate(sup_part + best, sup_part, best, npairs)


# ---------------------------------------------------------------------------
# test families


@dataclass
class TestFamily:
    """Reproducible list of test fields; ``pairs`` optionally fixes the pairing used by product inequalities."""

    members: list[TensorField]
    name: str = "family"
    seed: int | None = None
    pairs: list[tuple[int, int]] | None = None

    __test__ = False  # not a pytest class

    def __len__(self) -> int:
        return len(self.members)

    def member_pairs(self) -> list[tuple[TensorField, TensorField]]:
        n = len(self.members)
        idx = self.pairs if self.pairs is not None else [(i, (i + 1) % n) for i in range(n)]
        return [(self.members[i], self.members[j]) for i, j in idx]

    @classmethod
    def random(cls, seed: int, size: int, support: ShellSupport, rank: tuple[int, int] = (0, 0),
               kind: str = "bump", **kwargs) -> "TestFamily":
        """``kind`` is "bump" (localized bump sums) or "mode" (angularly smooth shell modes)."""
        rng = np.random.default_rng(seed)
        make = {"bump": random_bump_field, "mode": random_shell_mode}[kind]
        return cls([make(rng, support, rank, **kwargs) for _ in range(size)], f"{kind}-{rank}", seed)

    @classmethod
    def catalogue(cls) -> "TestFamily":
        """Deterministic scalar fields: rho powers and the cosh-distance function."""
        members = [rho_power(p) for p in (0.5, 1.0, 1.5, 2.0, 3.0)] + [cosh_distance()]
        return cls(members, "catalogue")

    @classmethod
    def killing_catalogue(cls) -> "TestFamily":
        return cls([rotation_killing(a) for a in np.eye(3)], "rotation-killing")

    def extended(self, other: "TestFamily") -> "TestFamily":
        return TestFamily(self.members + other.members, f"{self.name}+{other.name}", self.seed)


# ---------------------------------------------------------------------------
# inequality probes

INEQUALITIES = ("HOLDER1", "HOLDER2", "SOBOLEV_INC", "SOBOLEV_INEQ", "EHRLING", "PROD_19G", "PROD_19GBIS",
                "UINFD", "U3D", "ANNULUS", "DECAY")
EXPLICIT_BOUND = ("HOLDER1", "HOLDER2", "ANNULUS")


@dataclass
class _Norms:
    chart: ChartGrid
    region: RegionMask | None
    fd_step: float | None

    def __call__(self, u, k: int, p: float, delta: float) -> float:
        return weighted_norm(u, WeightSpec(k, p, delta), self.chart, self.region, self.fd_step)


def _need(specs: Sequence[WeightSpec], n: int, which: str) -> None:
    if len(specs) != n:
        raise ValueError(f"{which} expects {n} weight specs, got {len(specs)}")


def _ratio(num: float, den: float) -> float:
    if den <= 0.0:
        return 0.0 if num <= 0.0 else float("inf")
    return num / den


def _member_ratio(which: str, norm: _Norms, u: TensorField, v: TensorField | None, specs: Sequence[WeightSpec],
                  params: dict) -> float:
    if which == "HOLDER1":
        _need(specs, 3, which)
        sp, sq, sr = specs
        if not math.isclose(1 / sp.p, 1 / sq.p + 1 / sr.p, rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError("HOLDER1 requires 1/p = 1/q + 1/r")
        return _ratio(norm(u.times(v), 0, sp.p, sq.delta + sr.delta), norm(u, 0, sq.p, sq.delta) * norm(v, 0, sr.p, sr.delta))
    if which == "HOLDER2":
        _need(specs, 3, which)
        sp, sq, sr = specs
        lam = params.get("lam")
        if lam is None:
            lam = (1 / sp.p - 1 / sr.p) / (1 / sq.p - 1 / sr.p)
        den = norm(u, 0, sq.p, sp.delta) ** lam * norm(u, 0, sr.p, sp.delta) ** (1 - lam)
        return _ratio(norm(u, 0, sp.p, sp.delta), den)
    if which in ("SOBOLEV_INC", "SOBOLEV_INEQ"):
        _need(specs, 2, which)
        big, small = specs
        return _ratio(norm(u, small.k, small.p, small.delta), norm(u, big.k, big.p, big.delta))
    if which == "EHRLING":
        _need(specs, 2, which)
        lo, hi = specs  # ||u||_{j,p,delta} <= eps ||u||_{k,p,delta} + C ||u||_{p,delta}
        eps = params.get("eps", 0.1)
        excess = norm(u, lo.k, lo.p, lo.delta) - eps * norm(u, hi.k, hi.p, hi.delta)
        return _ratio(max(excess, 0.0), norm(u, 0, lo.p, lo.delta))
    if which in ("PROD_19G", "PROD_19GBIS"):
        if which == "PROD_19G":
            _need(specs, 2, which)
            s1, s2 = specs
        else:
            _need(specs, 1, which)
            s1 = s2 = specs[0]
        delta = s1.delta + s2.delta if which == "PROD_19G" else s1.delta
        return _ratio(norm(u.times(v), 0, 2.0, delta), norm(u, 1, 2.0, s1.delta) * norm(v, 1, 2.0, s2.delta))
    if which == "UINFD":
        _need(specs, 1, which)
        d = specs[0].delta
        eps = params.get("eps", 0.1)
        excess = norm(u, 0, math.inf, d) - eps * norm(u, 2, 2.0, d)
        return _ratio(max(excess, 0.0) * eps**3, norm(u, 1, 2.0, d))
    if which == "U3D":
        _need(specs, 1, which)
        d = specs[0].delta
        eps = params.get("eps", 0.1)
        excess = norm(u, 0, 3.0, d) - eps * norm(u, 1, 2.0, d)
        return _ratio(max(excess, 0.0) * eps, norm(u, 0, 2.0, d))
    if which == "ANNULUS":
        _need(specs, 2, which)
        sd, se = specs
        R = params["R"]
        factor = math.exp(2 * R * (sd.delta - se.delta))
        return _ratio(norm(u, 0, se.p, se.delta), norm(u, 0, sd.p, sd.delta) * factor)
    if which == "DECAY":
        _need(specs, 1, which)
        s = specs[0]
        eps = params.get("eps", 0.1)
        return _ratio(norm(u, 0, math.inf, s.delta + eps), norm(u, s.k or 2, 2.0, s.delta))
    raise UnknownIdentity(f"unknown inequality {which!r}")


def inequality_ratio(which: str, family: TestFamily, specs: Sequence[WeightSpec], chart: ChartGrid,
                     region: RegionMask | None = None, fd_step: float | None = None, **params) -> ConstantEstimate:
    """Sup over the family of LHS / RHS for one weighted inequality.

    Ids and spec layout:
      HOLDER1      [(p, delta), (q, d1), (r, d2)]   ||uv||_{p,d1+d2} / ||u||_{q,d1} ||v||_{r,d2}
      HOLDER2      [(p, delta), (q, .), (r, .)]     interpolation, lam from 1/p = lam/q + (1-lam)/r
      SOBOLEV_INC  [(k, q, delta), (k', p, delta')] ||u||_{k',p,delta'} / ||u||_{k,q,delta}
      SOBOLEV_INEQ [(j+k, p, delta), (j, q, delta)] same ratio layout
      EHRLING      [(j, p, delta), (k, p, delta)]   (||u||_j - eps ||u||_k)_+ / ||u||_0, param eps
      PROD_19G     [(1, 2, d1), (1, 2, d2)]         ||uv||_{2,d1+d2} / ||u||_{1,2,d1} ||v||_{1,2,d2}
      PROD_19GBIS  [(1, 2, delta)]                  same with d1 = d2 = delta
      UINFD        [delta]                          eps^3 (||u||_inf - eps ||u||_{2,2})_+ / ||u||_{1,2}
      U3D          [delta]                          eps (||u||_3 - eps ||u||_{1,2})_+ / ||u||_2
      ANNULUS      [(p, delta), (p, eta)], param R  ||u||_{p,eta} / (e^{2R(delta-eta)} ||u||_{p,delta}) on E_R
      DECAY        [(k, 2, delta)], param eps       sup rho^{delta+eps}|u| / ||u||_{k,2,delta}: a
                                                    bounded-sup proxy for u = o(rho^-delta)
    For HOLDER1, HOLDER2 and ANNULUS the returned value must not exceed 1.
    """
    if which not in INEQUALITIES:
        raise UnknownIdentity(f"unknown inequality {which!r}; known: {', '.join(INEQUALITIES)}")
    if len(family) == 0:
        raise EmptyFamily(f"empty test family for {which}")
    norm = _Norms(chart, region, fd_step)
    paired = which in ("HOLDER1", "PROD_19G", "PROD_19GBIS")
    items: Iterable = family.member_pairs() if paired else [(u, None) for u in family.members]
    ratios = [_member_ratio(which, norm, u, v, specs, params) for u, v in items]
    meta = {"inequality": which, "family": family.name, "seed": family.seed, "params": dict(params)}
    if which == "DECAY":
        meta["label"] = "sup-bound proxy for the decay claim"
    if which in EXPLICIT_BOUND:
        meta["explicit_bound"] = 1.0
    return ConstantEstimate(float(max(ratios)), len(ratios), list(specs), region, ratios, meta)


def constant_rows(estimates: Sequence[ConstantEstimate]) -> list[dict]:
    """CSV-ready rows: inequality id, delta tuple, family size, value, region R."""
    rows = []
    for e in estimates:
        deltas = tuple(s.delta for s in e.spec) if e.spec else ()
        R = getattr(e.region, "R", None) if e.region is not None else None
        rows.append({"id": e.metadata.get("inequality", e.metadata.get("estimate", "")),
                     "deltas": " ".join(f"{d:g}" for d in deltas), "family_size": e.family_size,
                     "value": e.value, "region_R": "" if R is None else R})
    return rows
