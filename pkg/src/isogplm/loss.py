"""Loss families for the partly linear model.

Every deviance-type loss is written as ``rho = phi(sqrt(D) / a)`` where ``D``
is a squared-residual-like quantity: ``d(z - s)`` on the log scale for the
log-Gamma model and ``(y - s)**2`` for the identity link. Because Tukey's
``phi`` is a polynomial in ``y**2``, everything is evaluated through
``h(q) = phi(sqrt(q))`` with ``q = D / a**2``. This keeps ``psi`` and ``chi``
free of the ``sqrt(D)`` in the denominator that the direct chain rule has.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import median_abs_deviation as _mad

TUKEY_CW = 4.685

_SERIES_CUTOFF = 1e-4


def deviance_d(u):
    """``exp(u) - u - 1``, accurate near zero; overflows to ``inf``."""
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.expm1(u) - u
    small = np.abs(u) < _SERIES_CUTOFF
    if np.any(small):
        us = u[small] if u.ndim else u
        series = us * us * (0.5 + us * (1.0 / 6.0 + us / 24.0))
        if u.ndim:
            out[small] = series
        else:
            out = series
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class ScoreFunction:
    """Even score ``phi`` and its representation ``h(q) = phi(sqrt(q))``.

    ``tukey_biweight`` is ``min(3y^2 - 3y^4 + y^6, 1)``, ``classical_square``
    is ``y^2`` and ``step`` is the indicator of ``|y| > 1`` (only usable for
    scale estimation).
    """

    kind: str = "tukey_biweight"

    def __post_init__(self):
        if self.kind not in ("tukey_biweight", "classical_square", "step"):
            raise ValueError(f"unknown score kind {self.kind!r}")

    @property
    def sup(self) -> float:
        return np.inf if self.kind == "classical_square" else 1.0

    @property
    def bounded(self) -> bool:
        return self.kind != "classical_square"

    # -- q-parametrisation ------------------------------------------------
    def h(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "classical_square":
            return q
        if self.kind == "step":
            return (q > 1.0).astype(float)
        inside = q < 1.0
        one_minus = np.where(inside, 1.0 - q, 0.0)
        return 1.0 - one_minus ** 3

    def dh(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "classical_square":
            return np.ones_like(q)
        self._require_smooth()
        one_minus = np.where(q < 1.0, 1.0 - q, 0.0)
        return 3.0 * one_minus ** 2

    def ddh(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "classical_square":
            return np.zeros_like(q)
        self._require_smooth()
        one_minus = np.where(q < 1.0, 1.0 - q, 0.0)
        return -6.0 * one_minus

    # -- residual parametrisation -----------------------------------------
    def phi(self, y):
        y = np.asarray(y, dtype=float)
        return self.h(y * y)

    def dphi(self, y):
        y = np.asarray(y, dtype=float)
        return 2.0 * y * self.dh(y * y)

    def ddphi(self, y):
        y = np.asarray(y, dtype=float)
        q = y * y
        return 2.0 * self.dh(q) + 4.0 * q * self.ddh(q)

    def _require_smooth(self):
        if self.kind == "step":
            raise ValueError("the step score has no usable derivative")


TUKEY = ScoreFunction("tukey_biweight")
CLASSICAL = ScoreFunction("classical_square")


class _GaussLegendre:
    nodes, weights = np.polynomial.legendre.leggauss(48)


@dataclass(frozen=True)
class ModelFamily:
    """Link/loss bundle.

    ``logistic_tuning`` is the constant ``c`` of the Bianco-Yohai loss
    ``phi(sqrt(deviance) / c)``; the logistic family has no nuisance parameter
    so the ``a`` argument of :meth:`rho` is ignored for it.
    """

    kind: str = "log_gamma"
    score: ScoreFunction = TUKEY
    logistic_tuning: float = 1.0

    def __post_init__(self):
        if self.kind not in ("log_gamma", "identity", "logistic"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.score.kind == "step":
            raise ValueError("the step score cannot define a loss")
        if self.kind == "logistic" and self.logistic_tuning ** 2 < np.log(2.0):
            # the deviance score must be increasing on (0, log 2)
            raise ValueError("logistic_tuning must satisfy c**2 >= log(2)")

    @property
    def nuisance_semantics(self) -> str:
        return {"log_gamma": "shape_alpha", "identity": "scale_sigma",
                "logistic": "none"}[self.kind]

    # -- internal pieces ---------------------------------------------------
    def _check(self, y, a):
        if self.kind == "logistic":
            if np.any((y != 0.0) & (y != 1.0)):
                raise ValueError("logistic responses must be 0 or 1")
        elif np.any(np.asarray(a) <= 0.0):
            raise ValueError("tuning constant a must be positive")

    def _deviance(self, y, s):
        """D, dD/ds and d2D/ds2 for the log-Gamma and identity families."""
        r = y - s
        if self.kind == "log_gamma":
            with np.errstate(over="ignore"):
                er = np.exp(r)
                dr = -np.expm1(r)
            return deviance_d(r), dr, er
        return r * r, -2.0 * r, np.full_like(r, 2.0)

    def _by_phi(self, t, order=0):
        """Derivatives of the deviance score ``t -> phi(sqrt(t)) / c`` form."""
        c2 = self.logistic_tuning ** 2
        f = (self.score.h, self.score.dh, self.score.ddh)[order]
        return f(t / c2) / c2 ** order

    def _g1(self, t):
        # integral of phi'(-log u) on [0, t]; integrand vanishes below exp(-c^2)
        # for bounded scores, and is smooth above it
        t = np.asarray(t, dtype=float)
        lo = np.exp(-self.logistic_tuning ** 2) if self.score.bounded else 0.0
        upper = np.maximum(t, lo)
        half = 0.5 * (upper - lo)
        mid = 0.5 * (upper + lo)
        u = mid[..., None] + half[..., None] * _GaussLegendre.nodes
        with np.errstate(divide="ignore"):
            vals = self._by_phi(-np.log(u), 1)
        return half * (vals @ _GaussLegendre.weights)

    def correction(self, p):
        """Consistency correction ``G(p) = G1(p) + G1(1 - p)`` (logistic)."""
        return self._g1(p) + self._g1(1.0 - np.asarray(p, dtype=float))

    # -- public evaluation -------------------------------------------------
    def rho(self, y, s, a=1.0):
        y, s = np.broadcast_arrays(np.asarray(y, float), np.asarray(s, float))
        self._check(y, a)
        if self.kind == "logistic":
            p = expit(s)
            A = np.logaddexp(0.0, -s)
            B = np.logaddexp(0.0, s)
            return (y * self._by_phi(A) + (1.0 - y) * self._by_phi(B)
                    + self.correction(p))
        D, _, _ = self._deviance(y, s)
        with np.errstate(over="ignore"):
            q = D / np.square(a)
        return self.score.h(q)

    def psi(self, y, s, a=1.0):
        return self.derivatives(y, s, a)[1]

    def chi(self, y, s, a=1.0):
        return self.derivatives(y, s, a)[2]

    def derivatives(self, y, s, a=1.0, with_rho=True):
        """Return ``(rho, psi, chi)`` with derivatives taken in ``s``."""
        y, s = np.broadcast_arrays(np.asarray(y, float), np.asarray(s, float))
        self._check(y, a)
        if self.kind == "logistic":
            return self._logistic_derivatives(y, s, with_rho)
        a2 = np.square(a)
        D, Ds, Dss = self._deviance(y, s)
        q = D / a2
        dh = self.score.dh(q)
        ddh = self.score.ddh(q)
        with np.errstate(invalid="ignore", over="ignore"):
            psi = np.where(dh != 0.0, dh * Ds / a2, 0.0)
            chi = np.where(dh != 0.0, ddh * Ds * Ds / (a2 * a2) + dh * Dss / a2,
                           0.0)
        rho = self.score.h(q) if with_rho else None
        return rho, psi, chi

    def _logistic_derivatives(self, y, s, with_rho):
        p = expit(s)
        A = np.logaddexp(0.0, -s)
        B = np.logaddexp(0.0, s)
        d1A, d1B = self._by_phi(A, 1), self._by_phi(B, 1)
        d2A, d2B = self._by_phi(A, 2), self._by_phi(B, 2)
        W = (1.0 - p) * d1A + p * d1B
        with np.errstate(over="ignore", invalid="ignore"):
            termA = np.where(d2A != 0.0, np.exp(-s) * d2A, 0.0)
            termB = np.where(d2B != 0.0, np.exp(s) * d2B, 0.0)
        dW = -d1A + d1B - termA + termB
        psi = (p - y) * W
        chi = p * (1.0 - p) * (W + (p - y) * dW)
        rho = None
        if with_rho:
            rho = (y * self._by_phi(A) + (1.0 - y) * self._by_phi(B)
                   + self.correction(p))
        return rho, psi, chi


def rho(family: ModelFamily, y, s, a=1.0):
    return family.rho(y, s, a)


def psi(family: ModelFamily, y, s, a=1.0):
    return family.psi(y, s, a)


def chi(family: ModelFamily, y, s, a=1.0):
    return family.chi(y, s, a)


@dataclass(frozen=True)
class LeverageWeight:
    """Tukey biweight of the standardised carrier ``(x - center) / spread``.

    For several carriers ``center`` and ``spread`` are vectors and the weight
    is the product of the per-coordinate weights.
    """

    center: np.ndarray
    spread: np.ndarray
    c_w: float = TUKEY_CW

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        spread = np.atleast_1d(np.asarray(self.spread, dtype=float))
        if np.any(spread <= 0.0):
            raise ValueError("carrier spread is zero; leverage weights are undefined")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "spread", spread)

    @classmethod
    def from_carriers(cls, X, c_w: float = TUKEY_CW) -> "LeverageWeight":
        """Median / normalised MAD of each carrier column.

        Columns with zero MAD (binary or mostly constant carriers) get an
        infinite spread, so they do not enter the weight.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        center = np.median(X, axis=0)
        spread = _mad(X, axis=0, scale="normal")
        return cls(center, np.where(spread > 0.0, spread, np.inf), c_w)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.center.size > 1:
            X = X[None, :]
        elif X.ndim == 1:
            X = X[:, None]
        u = (X - self.center) / (self.c_w * self.spread)
        w = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
        return np.prod(w, axis=1)


def leverage_weight(x, lw: LeverageWeight):
    """Weight of a single carrier value (or row of carriers)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(lw(x[None, :])[0])
