"""M-scales and calibration of the log-Gamma robust loss.

Population quantities are expectations over ``u ~ log Gamma(alpha, 1)``
(unit mean Gamma), whose density is ``alpha^alpha / Gamma(alpha) *
exp(alpha * (u - e^u))``. They are computed by composite Gauss-Legendre
quadrature on the region where the Tukey loss is not saturated; the
saturated tails are handled exactly through the regularised incomplete gamma
function.
"""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, gammaincc, gammaln, polygamma

from .loss import TUKEY, ScoreFunction, deviance_d


class CalibrationError(RuntimeError):
    pass


class ExactFitError(RuntimeError):
    """Too many zero residuals: the M-scale collapses to zero."""


@dataclass(frozen=True)
class MScaleConfig:
    score: ScoreFunction = TUKEY
    b: float = 0.5
    c: float = 1.0
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not 0.0 < self.b < self.score.sup:
            raise ValueError("b must lie strictly between 0 and sup(phi)")
        if self.tol <= 0 or self.c <= 0:
            raise ValueError("tol and c must be positive")


def m_scale(values, cfg: MScaleConfig = MScaleConfig()) -> float:
    """Solve ``mean(phi(v_i / (c * sigma))) = b`` for ``sigma``."""
    v = np.abs(np.asarray(values, dtype=float).ravel())
    n = v.size
    if n == 0:
        raise ValueError("m_scale needs at least one value")
    if cfg.score.kind == "step":
        # fraction of |v| above c*sigma equals b: the (1 - b) quantile
        return float(np.quantile(v, 1.0 - cfg.b)) / cfg.c
    nonzero = v[v > 0]
    if nonzero.size <= n * cfg.b:
        raise ExactFitError(
            f"{n - nonzero.size} of {n} values are zero; scale estimate is 0")
    return float(m_scale_batch(v[None, :], cfg)[0])


def m_scale_batch(V, cfg: MScaleConfig = MScaleConfig()) -> np.ndarray:
    """Row-wise M-scales of a 2-d array of nonnegative values.

    Bisection in ``log(sigma)`` bracketed by ``[min nonzero / 10, 10 max]``.
    Rows with too many zeros get ``0``.
    """
    V = np.abs(np.asarray(V, dtype=float))
    n = V.shape[1]
    pos = np.where(V > 0, V, np.inf)
    lo = np.log(np.min(pos, axis=1) / 10.0 / cfg.c)
    hi = np.log(np.max(V, axis=1) * 10.0 / cfg.c)
    degenerate = (V > 0).sum(axis=1) <= n * cfg.b
    lo = np.where(degenerate, 0.0, lo)
    hi = np.where(degenerate, 0.0, hi)
    h = cfg.score.h
    for _ in range(cfg.max_iter):
        mid = 0.5 * (lo + hi)
        s = np.exp(mid) * cfg.c
        with np.errstate(over="ignore", invalid="ignore"):
            f = np.mean(h((V / s[:, None]) ** 2), axis=1) - cfg.b
        above = f > 0  # scale too small
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo < cfg.tol):
            break
    out = np.exp(0.5 * (lo + hi))
    return np.where(degenerate, 0.0, out)


# ---------------------------------------------------------------------------
# log-Gamma quadrature

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def loggamma_logpdf(u, alpha):
    return (alpha * math.log(alpha) - gammaln(alpha)
            + alpha * (u - np.exp(u)))


def _support(alpha, floor=1e-16):
    """Interval outside which the log-Gamma density is below ``floor``."""
    target = math.log(floor)
    mode_val = loggamma_logpdf(0.0, alpha)
    f = lambda u: loggamma_logpdf(u, alpha) - target  # noqa: E731
    sd = math.sqrt(float(polygamma(1, alpha)))
    if mode_val <= target:
        return -sd, sd
    step = sd
    lo = -step
    while f(lo) > 0:
        step *= 2
        lo = -step
    step = sd
    hi = step
    while f(hi) > 0:
        step *= 2
        hi = step
    return brentq(f, lo, 0.0), brentq(f, 0.0, hi)


def _saturation_points(c):
    """Roots ``u- < 0 < u+`` of ``d(u) = c^2``."""
    c2 = c * c
    g = lambda u: deviance_d(u) - c2  # noqa: E731
    lo = brentq(g, -c2 - 2.0, 0.0)
    hi = brentq(g, 0.0, 2.0 * math.log(c2 + 2.0) + 1.0)
    return lo, hi


def _edges(a, b, alpha, sd):
    # the density varies on an O(1) scale near the mode (through e^u), on a
    # 1/alpha scale in the left tail, and is super-exponentially thin on the right
    parts = []
    sections = [(-np.inf, -3.0, max(0.5, min(5.0 / alpha, 50.0))),
                (-3.0, 2.0, min(0.25, 0.5 * sd)),
                (2.0, np.inf, 0.1)]
    for s_lo, s_hi, width in sections:
        lo, hi = max(a, s_lo), min(b, s_hi)
        if hi > lo:
            pieces = int(min(2000, max(1, math.ceil((hi - lo) / width))))
            parts.append(np.linspace(lo, hi, pieces + 1))
    return np.unique(np.concatenate(parts)) if parts else np.array([a, b])


def _integrate(func, alpha, a, b, sd):
    """Composite Gauss-Legendre integral of ``func(u) g(u, alpha)`` on [a, b]."""
    if b <= a:
        return 0.0
    edges = _edges(a, b, alpha, sd)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * _GL_X).ravel()
    w = (half[:, None] * _GL_W).ravel()
    dens = np.exp(loggamma_logpdf(u, alpha))
    return float(np.sum(w * dens * func(u)))


def loggamma_expectation(func, alpha, c=None):
    """``E func(u)`` restricted to the unsaturated window ``d(u) < c^2``.

    With ``c=None`` the whole (numerically relevant) support is used.
    """
    lo, hi = _support(alpha)
    if c is not None:
        s_lo, s_hi = _saturation_points(c)
        lo, hi = max(lo, s_lo), min(hi, s_hi)
    sd = math.sqrt(float(polygamma(1, alpha)))
    return _integrate(func, alpha, lo, hi, sd)


def tail_probability(alpha, c):
    """``P(d(u) >= c^2)`` for ``u ~ log Gamma(alpha, 1)``."""
    s_lo, s_hi = _saturation_points(c)
    return float(gammainc(alpha, alpha * math.exp(s_lo))
                 + gammaincc(alpha, alpha * math.exp(s_hi)))


def expected_score(alpha, sigma, score: ScoreFunction = TUKEY):
    """``E phi(sqrt(d(u)) / sigma)`` under the log-Gamma(alpha) law."""
    if score.kind != "tukey_biweight":
        raise ValueError("expected_score is implemented for Tukey's score")
    inner = loggamma_expectation(
        lambda u: score.h(deviance_d(u) / sigma ** 2), alpha, c=sigma)
    return inner + tail_probability(alpha, sigma)


def efficiency(alpha, c, score: ScoreFunction = TUKEY):
    """Asymptotic efficiency ``A^2 / (alpha B)`` of the tuning constant ``c``.

    ``A = E chi_c(u, 0)`` and ``B = E psi_c(u, 0)^2`` for the location
    problem ``u -> phi(sqrt(d(u)) / c)``; the classical deviance estimator has
    ``A = 1`` and ``B = 1 / alpha``.
    """
    c2 = c * c

    def psi(u):
        return score.dh(deviance_d(u) / c2) * (-np.expm1(u)) / c2

    def chi(u):
        q = deviance_d(u) / c2
        du = -np.expm1(u)
        return score.ddh(q) * du * du / (c2 * c2) + score.dh(q) * np.exp(u) / c2

    A = loggamma_expectation(chi, alpha, c=c)
    B = loggamma_expectation(lambda u: psi(u) ** 2, alpha, c=c)
    return A * A / (alpha * B)


# ---------------------------------------------------------------------------

@dataclass
class ShapeCalibration:
    """Maps between the Gamma shape and the S-scale of sqrt-deviances.

    Keeps a cache of ``(alpha, sigma*(alpha))`` pairs used to bracket the
    inversion; the cache is guarded by a lock so instances can be shared.
    """

    b: float = 0.5
    score: ScoreFunction = TUKEY
    alpha_range: tuple = (0.01, 1000.0)
    _table: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if not 0.0 < self.b < self.score.sup:
            raise ValueError("b must lie strictly between 0 and sup(phi)")

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_lock")
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def sigma_star(self, alpha: float) -> float:
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        alpha = float(alpha)
        cached = self._table.get(alpha)
        if cached is not None:
            return cached
        f = lambda s: expected_score(alpha, s, self.score) - self.b  # noqa: E731
        sd = math.sqrt(float(polygamma(1, alpha)))
        lo, hi = 0.05 * sd, 5.0 * sd
        while f(lo) < 0:
            lo /= 4.0
        while f(hi) > 0:
            hi *= 4.0
        val = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                     maxiter=200)
        with self._lock:
            self._table[alpha] = val
        return val

    def table(self):
        with self._lock:
            return sorted(self._table.items())

    def alpha_from_sigma(self, sigma_hat: float, clip: bool = False) -> float:
        """Invert the strictly decreasing map ``alpha -> sigma*(alpha)``.

        ``sigma*(alpha) = s`` exactly when ``E_alpha phi(sqrt(d(u)) / s) = b``,
        and that expectation decreases in ``alpha`` for fixed ``s``, so the
        inversion is a single bracketed root search in ``log(alpha)``. With
        ``clip`` a scale outside the attainable range maps to the nearer end
        of ``alpha_range`` instead of raising.
        """
        if not sigma_hat > 0:
            raise ValueError(f"sigma_hat must be positive, got {sigma_hat}")
        lo_a, hi_a = self.alpha_range
        g = lambda la: expected_score(math.exp(la), sigma_hat, self.score) - self.b  # noqa: E731
        g_lo, g_hi = g(math.log(lo_a)), g(math.log(hi_a))
        slack = 1e-12
        if abs(g_lo) < slack:
            return lo_a
        if abs(g_hi) < slack:
            return hi_a
        if clip and g_lo <= 0.0:
            return lo_a
        if clip and g_hi >= 0.0:
            return hi_a
        if not (g_lo > 0.0 > g_hi):
            raise CalibrationError(
                f"sigma_hat={sigma_hat:.6g} outside the attainable range "
                f"for alpha in [{lo_a}, {hi_a}]")
        la = brentq(g, math.log(lo_a), math.log(hi_a), xtol=1e-13,
                    rtol=4 * np.finfo(float).eps)
        return math.exp(la)

    def tuning_for_efficiency(self, alpha: float, e: float,
                              window=(0.05, 20.0)) -> float:
        """Tuning constant ``C_e(alpha)`` giving efficiency ``e``."""
        if not 0.0 < e < 1.0:
            raise ValueError(f"efficiency must lie in (0, 1), got {e}")
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        lo, hi = window
        f = lambda c: efficiency(alpha, c, self.score) - e  # noqa: E731
        f_lo, f_hi = f(lo), f(hi)
        if f_lo < 0 < f_hi:
            return brentq(f, lo, hi, xtol=1e-12)
        # grid fallback for a non-bracketing window
        grid = np.geomspace(lo, hi, 200)
        curve = np.array([f(c) + e for c in grid])
        cross = np.nonzero(np.diff(np.sign(curve - e)))[0]
        if cross.size == 0:
            err = CalibrationError(
                f"no tuning constant in {window} reaches efficiency {e}")
            err.curve = (grid, curve)
            raise err
        i = cross[0]
        return brentq(f, grid[i], grid[i + 1], xtol=1e-12)

    def adaptive_tuning(self, sigma_hat: float, e: float) -> float:
        """``max(sigma_hat, C_e(alpha_hat))`` with ``alpha_hat`` from the scale."""
        alpha_hat = self.alpha_from_sigma(sigma_hat)
        return max(sigma_hat, self.tuning_for_efficiency(alpha_hat, e))

    # -- persistence ------------------------------------------------------
    def export_csv(self, path, alphas, efficiencies=(0.90, 0.95)):
        """Write ``alpha, sigma_star, c_e_090, c_e_095`` rows."""
        cols = ["alpha", "sigma_star"] + [f"c_e_{round(100 * e):03d}"
                                          for e in efficiencies]
        rows = []
        for a in alphas:
            a = float(a)
            rows.append([a, self.sigma_star(a)]
                        + [self.tuning_for_efficiency(a, e) for e in efficiencies])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in rows:
                writer.writerow([repr(float(x)) for x in row])
        return rows

    def load_csv(self, path):
        """Read a table written by :meth:`export_csv` and seed the cache."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [{k: float(v) for k, v in row.items()} for row in reader]
        with self._lock:
            for row in rows:
                self._table[row["alpha"]] = row["sigma_star"]
        return rows


_DEFAULT = ShapeCalibration()


def sigma_star(alpha, cal: ShapeCalibration = _DEFAULT):
    return cal.sigma_star(alpha)


def alpha_from_sigma(sigma_hat, cal: ShapeCalibration = _DEFAULT):
    return cal.alpha_from_sigma(sigma_hat)


def tuning_for_efficiency(alpha, e, cal: ShapeCalibration = _DEFAULT):
    return cal.tuning_for_efficiency(alpha, e)


def adaptive_tuning(sigma_hat, e, cal: ShapeCalibration = _DEFAULT):
    return cal.adaptive_tuning(sigma_hat, e)
