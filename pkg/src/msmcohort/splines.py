"""Covariate transforms: identity and natural cubic regression splines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CovariateTransform:
    """How a covariate enters the linear predictor.

    For ``kind="natural-cubic-spline"`` the basis is linear beyond the
    boundary knots. ``knots`` are the interior knots. When both are left
    empty they are resolved from the data by :meth:`resolve`.
    """

    kind: str = "identity"
    knots: tuple = ()
    boundary: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "natural-cubic-spline"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        k = np.asarray(self.knots, dtype=float)
        if k.size and np.any(np.diff(k) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        if self.boundary is not None:
            lo, hi = self.boundary
            if not lo < hi:
                raise ValueError("boundary knots must satisfy lo < hi")
            if k.size and (k[0] <= lo or k[-1] >= hi):
                raise ValueError("interior knots must lie strictly inside the boundary knots")

    @property
    def resolved(self) -> bool:
        return self.kind == "identity" or self.boundary is not None

    @property
    def n_columns(self) -> int:
        return 1 if self.kind == "identity" else len(self.knots) + 1

    def resolve(self, values, quantiles=(0.25, 0.5, 0.75)) -> "CovariateTransform":
        """Fill in default knots: interior at quantiles, boundary at min/max."""
        if self.resolved:
            return self
        v = np.asarray(values, dtype=float)
        uniq = np.unique(v)
        if uniq.size < len(quantiles) + 2:
            raise ValueError(
                f"{uniq.size} distinct values cannot support {len(quantiles) + 2} knots"
            )
        if self.knots:
            return CovariateTransform(self.kind, self.knots, (float(uniq[0]), float(uniq[-1])))
        lo, hi = float(uniq[0]), float(uniq[-1])
        knots = np.unique(np.quantile(v, quantiles))
        if knots.size < len(quantiles) or knots[0] <= lo or knots[-1] >= hi:
            # values piled up at a boundary (e.g. many entries at time 0):
            # place the knots among the interior values instead
            inner = v[(v > lo) & (v < hi)]
            knots = np.unique(np.quantile(inner, quantiles)) if inner.size else np.array([])
        if knots.size < len(quantiles):
            raise ValueError("quantile knots are not distinct")
        return CovariateTransform(self.kind, tuple(float(k) for k in knots), (lo, hi))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "identity":
            d["knots"] = [float(k) for k in self.knots]
            if self.boundary is not None:
                d["boundary"] = [float(b) for b in self.boundary]
        return d

    @classmethod
    def from_dict(cls, d) -> "CovariateTransform":
        if d is None or isinstance(d, str):
            return cls(d or "identity")
        b = d.get("boundary")
        return cls(d.get("kind", "identity"), tuple(d.get("knots", ())), tuple(b) if b else None)


def natural_spline_basis(x, knots) -> np.ndarray:
    """Truncated-power natural cubic spline basis without intercept.

    ``knots`` holds all knots, boundary knots first and last. The first
    column is ``x`` itself; the remaining ``len(knots) - 2`` columns are the
    natural-restricted cubic terms. Every linear combination is linear outside
    ``[knots[0], knots[-1]]``.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    K = k.size
    if K < 3:
        raise ValueError("need at least three knots (two boundary, one interior)")
    scale = (k[-1] - k[0]) ** 2

    def d(j):
        num = np.maximum(x - k[j], 0.0) ** 3 - np.maximum(x - k[-1], 0.0) ** 3
        return num / (k[-1] - k[j])

    d_last = d(K - 2)
    cols = [x] + [(d(j) - d_last) / scale for j in range(K - 2)]
    return np.column_stack(cols)


def spline_basis(values, transform: CovariateTransform, check: bool = True) -> np.ndarray:
    """Evaluate the basis of `transform` at `values` (one column per function).

    With ``check`` set, data carrying fewer distinct values than knots are
    rejected; turn it off to evaluate a fitted basis at a few new points.
    """
    v = np.asarray(values, dtype=float)
    if transform.kind == "identity":
        return v.reshape(-1, 1)
    if not transform.resolved:
        transform = transform.resolve(v)
    n_knots = len(transform.knots) + 2
    if check and np.unique(v).size < n_knots:
        raise ValueError(f"fewer distinct values ({np.unique(v).size}) than knots ({n_knots})")
    knots = (transform.boundary[0], *transform.knots, transform.boundary[1])
    return natural_spline_basis(v, knots)
