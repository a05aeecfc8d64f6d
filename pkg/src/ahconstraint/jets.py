"""Forward-mode Taylor jets of tensor-valued fields sampled at points.

A jet stores a field together with its Cartesian coordinate derivatives up
to some order.  ``derivs[k]`` has shape ``(npts,) + (3,) * k + shape`` where
``shape`` is the tensor shape of the value.  Derivative axes come before the
tensor axes, and ``d()`` turns the outermost derivative into a new leading
tensor slot, so every operation written for values lifts to all orders by
the Leibniz and chain rules.
"""

from __future__ import annotations

import string
from typing import Callable, Sequence

import numpy as np

DIM = 3


class Jet:
    __slots__ = ("derivs",)

    def __init__(self, derivs: Sequence[np.ndarray]):
        self.derivs = list(derivs)

    @property
    def order(self) -> int:
        return len(self.derivs) - 1

    @property
    def value(self) -> np.ndarray:
        return self.derivs[0]

    @property
    def shape(self) -> tuple:
        return self.derivs[0].shape[1:]

    @property
    def npts(self) -> int:
        return self.derivs[0].shape[0]

    @classmethod
    def constant(cls, value, npts: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        base = np.broadcast_to(value, (npts,) + value.shape).copy()
        derivs = [base]
        for k in range(1, order + 1):
            derivs.append(np.zeros((npts,) + (DIM,) * k + value.shape))
        return cls(derivs)

    @classmethod
    def assemble(cls, value: np.ndarray, dj: "Jet | None") -> "Jet":
        """Build a jet from its value and the jet of its gradient."""
        if dj is None:
            return cls([value])
        return cls([value] + dj.derivs)

    def d(self) -> "Jet":
        if self.order < 1:
            raise ValueError("jet has no derivative data")
        return Jet(self.derivs[1:])

    def truncate(self, order: int) -> "Jet":
        return Jet(self.derivs[: order + 1])

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Jet":
        """Apply a linear map acting on the trailing tensor axes."""
        return Jet([fn(a) for a in self.derivs])

    def permute(self, perm: Sequence[int]) -> "Jet":
        """Permute tensor slots: new slot i is old slot perm[i]."""
        out = []
        for k, a in enumerate(self.derivs):
            lead = list(range(k + 1))
            out.append(np.transpose(a, lead + [k + 1 + p for p in perm]))
        return Jet(out)

    def take(self, index) -> "Jet":
        """Index into the tensor slots, e.g. ``take((0,))`` for a component."""
        if not isinstance(index, tuple):
            index = (index,)
        return Jet([a[(Ellipsis,) + index] if len(index) else a for a in self.derivs])

    def _binary(self, other, op) -> "Jet":
        if isinstance(other, Jet):
            k = min(self.order, other.order)
            out = []
            for i in range(k + 1):
                a, b = self.derivs[i], other.derivs[i]
                out.append(op(a, b))
            return Jet(out)
        other = np.asarray(other, dtype=float)
        return Jet([op(self.derivs[0], other)] + [op(a, 0.0 * other) for a in self.derivs[1:]])

    def __add__(self, other) -> "Jet":
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        return self._binary(other, np.subtract)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __neg__(self) -> "Jet":
        return Jet([-a for a in self.derivs])

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.shape == ():
                return scale(other, self)
            if self.shape == ():
                return scale(self, other)
            raise ValueError("use contract() for products of two tensor jets")
        return Jet([a * other for a in self.derivs])

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return scale(reciprocal(other), self)
        return Jet([a / other for a in self.derivs])

    def __rtruediv__(self, other) -> "Jet":
        return reciprocal(self) * other

    def __pow__(self, p: float) -> "Jet":
        return power(self, p)

    def __repr__(self) -> str:
        return f"Jet(npts={self.npts}, shape={self.shape}, order={self.order})"


def _fresh(spec: str) -> str:
    for c in string.ascii_letters:
        if c not in spec:
            return c
    raise ValueError("out of index letters")


def contract(spec: str, a: Jet, b: Jet) -> Jet:
    """Einsum-style product of two jets over their tensor slots.

    ``spec`` only names tensor slots, e.g. ``"ij,jk->ik"``; the point axis
    is implicit.
    """
    return _contract(spec, a, b, min(a.order, b.order))


def pair_einsum(sa: str, sb: str, out: str, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Batched ``einsum`` of two operands with a leading point axis, via matmul.

    numpy's einsum runs an unoptimized loop for many tiny batched products;
    routing through matmul is much faster.  Specs with repeated letters inside
    one operand fall back to einsum.
    """
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb) or len(set(out)) != len(out):
        return np.einsum(f"...{sa},...{sb}->...{out}", A, B)
    # sum out letters private to one operand and absent from the output
    only_a = [c for c in sa if c not in sb and c not in out]
    if only_a:
        A = A.sum(axis=tuple(1 + sa.index(c) for c in only_a))
        sa = "".join(c for c in sa if c not in only_a)
    only_b = [c for c in sb if c not in sa and c not in out]
    if only_b:
        B = B.sum(axis=tuple(1 + sb.index(c) for c in only_b))
        sb = "".join(c for c in sb if c not in only_b)
    batch = [c for c in sa if c in sb and c in out]
    summed = [c for c in sa if c in sb and c not in out]
    free_a = [c for c in sa if c not in sb]
    free_b = [c for c in sb if c not in sa]
    n = A.shape[0]
    dims = {c: A.shape[1 + i] for i, c in enumerate(sa)}
    dims.update({c: B.shape[1 + i] for i, c in enumerate(sb)})
    size = lambda cs: int(np.prod([dims[c] for c in cs])) if cs else 1
    At = A.transpose([0] + [1 + sa.index(c) for c in batch + free_a + summed])
    Bt = B.transpose([0] + [1 + sb.index(c) for c in batch + summed + free_b])
    At = At.reshape(n, size(batch), size(free_a), size(summed))
    Bt = Bt.reshape(n, size(batch), size(summed), size(free_b))
    C = np.matmul(At, Bt).reshape((n,) + tuple(dims[c] for c in batch + free_a + free_b))
    order = batch + free_a + free_b
    return C.transpose([0] + [1 + order.index(c) for c in out])


def _contract(spec: str, a: Jet, b: Jet, k: int) -> Jet:
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    A, B = a.derivs[0], b.derivs[0]
    if A.shape[0] == B.shape[0] and A.ndim == len(sa) + 1 and B.ndim == len(sb) + 1:
        val = pair_einsum(sa, sb, out, A, B)
    else:
        val = np.einsum(f"...{sa},...{sb}->...{out}", A, B)
    if k == 0:
        return Jet([val])
    x = _fresh(spec)
    left = _contract(f"{x}{sa},{sb}->{x}{out}", a.d(), b, k - 1)
    right = _contract(f"{sa},{x}{sb}->{x}{out}", a, b.d(), k - 1)
    return Jet.assemble(val, left + right)


def contract3(spec: str, a: Jet, b: Jet, c: Jet) -> Jet:
    """Three-factor contraction, evaluated left to right."""
    ins, out = spec.split("->")
    sa, sb, sc = ins.split(",")
    mid = "".join(dict.fromkeys(ch for ch in sa + sb if ch in sc + out))
    return contract(f"{mid},{sc}->{out}", contract(f"{sa},{sb}->{mid}", a, b), c)


def trace(a: Jet, spec: str) -> Jet:
    """Single-jet einsum such as ``"ii->"`` or ``"ijj->i"``; linear, so exact."""
    ins, out = spec.split("->")
    return Jet([np.einsum(f"...{ins}->...{out}", t) for t in a.derivs])


def scale(s: Jet, t: Jet) -> Jet:
    """Product of a scalar jet with a tensor jet of any shape."""
    letters = string.ascii_lowercase[: len(t.shape)]
    return contract(f",{letters}->{letters}", s, t)


def outer(a: Jet, b: Jet) -> Jet:
    la = string.ascii_lowercase[: len(a.shape)]
    lb = string.ascii_lowercase[len(a.shape): len(a.shape) + len(b.shape)]
    return contract(f"{la},{lb}->{la}{lb}", a, b)


def apply(u: Jet, fs: Sequence[Callable[[np.ndarray], np.ndarray]]) -> Jet:
    """Compose a scalar function with a scalar jet.

    ``fs`` lists the function and its successive derivatives; it must be at
    least ``u.order + 1`` long.
    """
    if u.shape != ():
        raise ValueError("apply expects a scalar jet")
    return _apply(u, fs, u.order)


def _apply(u: Jet, fs, k: int) -> Jet:
    val = fs[0](u.derivs[0])
    if k == 0:
        return Jet([val])
    inner = _apply(u.truncate(k - 1), fs[1:], k - 1)
    return Jet.assemble(val, scale(inner, u.d()))


def power(u: Jet, p: float) -> Jet:
    fs = []
    coef = 1.0
    for j in range(u.order + 1):
        fs.append(lambda v, c=coef, e=p - j: c * v**e)
        coef *= p - j
    return apply(u, fs)


def reciprocal(u: Jet) -> Jet:
    return power(u, -1.0)


def sqrt(u: Jet) -> Jet:
    return power(u, 0.5)


def exp(u: Jet) -> Jet:
    return apply(u, [np.exp] * (u.order + 1))


def log(u: Jet) -> Jet:
    fs = [np.log]
    coef = 1.0
    for j in range(1, u.order + 1):
        fs.append(lambda v, c=coef, e=-j: c * v**e)
        coef *= -j
    return apply(u, fs)


def inv(a: Jet) -> Jet:
    """Inverse of a jet of 3x3 matrices."""
    return _inv(a, a.order)


def _inv(a: Jet, k: int) -> Jet:
    val = np.linalg.inv(a.derivs[0])
    if k == 0:
        return Jet([val])
    ai = _inv(a.truncate(k - 1), k - 1)
    da = a.d().truncate(k - 1)
    return Jet.assemble(val, -contract3("ik,xkl,lj->xij", ai, da, ai))


def det(a: Jet) -> Jet:
    """Determinant of a jet of 3x3 matrices."""
    return _det(a, a.order)


def _det(a: Jet, k: int) -> Jet:
    val = np.linalg.det(a.derivs[0])
    if k == 0:
        return Jet([val])
    lower = a.truncate(k - 1)
    dlog = contract("ij,xji->x", _inv(lower, k - 1), a.d().truncate(k - 1))
    return Jet.assemble(val, scale(_det(lower, k - 1), dlog))


def symmetrize(a: Jet, i: int = 0, j: int = 1) -> Jet:
    """Average a jet with itself under the swap of tensor slots i and j."""
    n = len(a.shape)
    perm = list(range(n))
    perm[i], perm[j] = perm[j], perm[i]
    return (a + a.permute(perm)) * 0.5


def concat(jets: Sequence[Jet]) -> Jet:
    """Stack jets along the point axis."""
    k = min(j.order for j in jets)
    return Jet([np.concatenate([j.derivs[i] for j in jets], axis=0) for i in range(k + 1)])
