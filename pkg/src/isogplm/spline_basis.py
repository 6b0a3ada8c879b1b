"""B-spline bases on [0, 1] with open (clamped) knot vectors.

The ``order`` of a basis is the number of repeated boundary knots on each
side, so a cubic basis has ``order=4`` and ``k = m + order`` functions for
``m`` interior knots.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class KnotError(ValueError):
    """Raised when a knot sequence cannot be built from the inputs."""


@dataclass(frozen=True)
class KnotSet:
    interior_knots: np.ndarray
    order: int
    full_sequence: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        interior = np.asarray(self.interior_knots, dtype=float).ravel()
        if self.order < 2:
            raise ValueError(f"order must be >= 2, got {self.order}")
        if interior.size:
            if interior[0] <= 0.0 or interior[-1] >= 1.0:
                raise KnotError("interior knots must lie strictly inside (0, 1)")
            if np.any(np.diff(interior) <= 0.0):
                raise KnotError("interior knots must be strictly increasing")
        interior.setflags(write=False)
        full = np.concatenate(
            [np.zeros(self.order), interior, np.ones(self.order)])
        full.setflags(write=False)
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "full_sequence", full)

    @property
    def m(self) -> int:
        return int(self.interior_knots.size)

    @property
    def spacing_ratio(self) -> float:
        """Ratio of the largest to the smallest knot spacing."""
        gaps = np.diff(np.concatenate([[0.0], self.interior_knots, [1.0]]))
        return float(gaps.max() / gaps.min())


def build_knots(t_values, m: int, order: int = 4,
                placement: str = "uniform") -> KnotSet:
    """Place ``m`` interior knots on (0, 1).

    ``uniform`` puts them at ``i / (m + 1)``; ``quantile`` uses the empirical
    quantiles of ``t_values`` at the same percentile ranks. Coincident
    quantiles raise rather than being merged, since merging would silently
    change the basis dimension.
    """
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    ranks = np.arange(1, m + 1) / (m + 1)
    if placement == "uniform" or m == 0:
        return KnotSet(ranks, order)
    if placement != "quantile":
        raise ValueError(f"unknown knot placement {placement!r}")

    t = np.asarray(t_values, dtype=float).ravel()
    if t.size == 0:
        raise KnotError("quantile placement needs at least one t value")
    if np.unique(t).size < m:
        raise KnotError(
            f"quantile placement needs {m} distinct t values, got {np.unique(t).size}")
    knots = np.quantile(t, ranks)
    for i in range(m):
        lo = 0.0 if i == 0 else knots[i - 1]
        if knots[i] <= lo or knots[i] >= 1.0:
            raise KnotError(
                f"quantile knot at percentile {100 * ranks[i]:.4g} coincides "
                f"with a neighbouring knot or boundary ({knots[i]:.6g})")
    return KnotSet(knots, order)


@dataclass(frozen=True)
class SplineBasis:
    knots: KnotSet

    @property
    def order(self) -> int:
        return self.knots.order

    @property
    def k(self) -> int:
        return self.knots.m + self.knots.order

    @classmethod
    def uniform(cls, k: int, order: int = 4) -> "SplineBasis":
        """Basis of dimension ``k`` with equispaced interior knots."""
        if k < order:
            raise ValueError(f"k={k} is smaller than the order {order}")
        return cls(build_knots(None, k - order, order))

    def design(self, t) -> np.ndarray:
        """Evaluate all basis functions; returns an ``(len(t), k)`` matrix.

        Uses the Cox-de Boor triangular recursion with 0/0 = 0 at repeated
        knots. The last interval is closed, so ``t = 1`` is handled.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.ndim != 1:
            t = t.ravel()
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("spline arguments must lie in [0, 1]")
        tk = self.knots.full_sequence
        ell = self.order
        m = self.knots.m
        # knot span index mu with tk[mu] <= t < tk[mu+1], mu in [ell-1, ell-1+m]
        mu = np.searchsorted(tk, t, side="right") - 1
        mu = np.clip(mu, ell - 1, ell - 1 + m)

        n = t.size
        # vals[:, j] holds B_{mu-d+j, d+1}(t) after processing degree d
        vals = np.zeros((n, ell))
        vals[:, 0] = 1.0
        for d in range(1, ell):
            new = np.zeros((n, ell))
            for j in range(d + 1):
                idx = mu - d + j
                if j > 0:
                    left = tk[idx + d] - tk[idx]
                    with np.errstate(invalid="ignore", divide="ignore"):
                        wl = np.where(left > 0, (t - tk[idx]) / left, 0.0)
                    new[:, j] += wl * vals[:, j - 1]
                if j < d:
                    right = tk[idx + d + 1] - tk[idx + 1]
                    with np.errstate(invalid="ignore", divide="ignore"):
                        wr = np.where(right > 0, (tk[idx + d + 1] - t) / right, 0.0)
                    new[:, j] += wr * vals[:, j]
            vals = new

        out = np.zeros((n, self.k))
        cols = (mu - (ell - 1))[:, None] + np.arange(ell)[None, :]
        np.put_along_axis(out, cols, vals, axis=1)
        return out


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    """Vector ``B(t)`` of all ``k`` basis functions at a scalar ``t``."""
    return basis.design([t])[0]


@dataclass(frozen=True)
class MonotoneSpline:
    basis: SplineBasis
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float).ravel()
        if coef.size != self.basis.k:
            raise ValueError(
                f"expected {self.basis.k} coefficients, got {coef.size}")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    def __call__(self, t):
        return self.basis.design(t) @ self.coefficients

    @property
    def is_monotone(self) -> bool:
        return is_feasible(self.coefficients)


def eval_spline(spline: MonotoneSpline, t: float) -> float:
    return float(spline([t])[0])


def is_feasible(lam, tol: float = 0.0) -> bool:
    """True iff the coefficients are nondecreasing (up to ``tol``)."""
    lam = np.asarray(lam, dtype=float).ravel()
    return bool(np.all(np.diff(lam) >= -tol))
