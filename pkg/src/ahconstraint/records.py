"""Result records shared by the verification layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class Residual:
    """Size of LHS - RHS for one identity, optionally across resolutions."""

    l2: float
    sup: float
    rate: float | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"l2": self.l2, "sup": self.sup, "rate": self.rate, "metadata": self.metadata}


def residual_from_values(diff: np.ndarray, weights: np.ndarray | None = None, **metadata) -> Residual:
    """Sup and (optionally quadrature-weighted) L2 size of a nodal residual array."""
    diff = np.asarray(diff, dtype=float)
    flat = diff.reshape(diff.shape[0], -1) if diff.ndim > 1 else diff[:, None]
    pointwise = np.sqrt(np.einsum("pi,pi->p", flat, flat))
    sup = float(pointwise.max()) if pointwise.size else 0.0
    if weights is None:
        l2 = float(np.sqrt(np.mean(pointwise**2))) if pointwise.size else 0.0
    else:
        l2 = float(np.sqrt(np.sum(weights * pointwise**2)))
    return Residual(l2=l2, sup=sup, metadata=dict(metadata))


@dataclass
class ConstantEstimate:
    """Empirical constant: sup of LHS / RHS over a test family."""

    value: float
    family_size: int
    spec: Any = None
    region: Any = None
    ratios: list[float] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        spec = self.spec
        if isinstance(spec, (list, tuple)):
            spec = [s.to_dict() if hasattr(s, "to_dict") else s for s in spec]
        elif hasattr(spec, "to_dict"):
            spec = spec.to_dict()
        region = self.region.describe() if hasattr(self.region, "describe") else self.region
        return {"value": self.value, "family_size": self.family_size, "spec": spec, "region": region,
                "metadata": self.metadata}


@dataclass
class ProbeReport:
    probe_id: str
    parameters: dict[str, Any]
    outcomes: dict[str, Any]
    passed: bool
    label: str = "consistent-with"

    def to_dict(self) -> dict[str, Any]:
        return {"probe_id": self.probe_id, "parameters": self.parameters, "outcomes": self.outcomes,
                "passed": self.passed, "label": self.label}
