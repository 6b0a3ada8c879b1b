"""Estimation pipelines for isotonic partly linear models."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DataError, Dataset
from .loss import CLASSICAL, TUKEY, LeverageWeight, ModelFamily, deviance_d
from .optimizer import (Objective, SolverReport, active_set_minimize,
                        newton_minimize)
from .scale_calibration import (CalibrationError, MScaleConfig,
                                ShapeCalibration, m_scale, m_scale_batch)
from .spline_basis import MonotoneSpline, SplineBasis, build_knots, is_feasible

logger = logging.getLogger(__name__)

GAUSSIAN_SCALE_C = 1.54764
GAUSSIAN_MAD_CONST = 0.6744897501960817

_CALIBRATION = ShapeCalibration()


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    family: str = "log_gamma"
    robust: bool = True
    order: int = 4
    placement: str = "uniform"
    k: int | None = None
    efficiency: float = 0.9
    n_subsamples: int = 50
    n_refine: int = 3
    seed: int = 0
    tol: float = 1e-9
    max_iter: int = 100
    c_w: float | None = 4.685
    log_scale: bool = False
    initial_lambda: str = "isotonic"
    identity_scale: str = "mscale"
    identity_tuning: float = 4.685
    logistic_tuning: float = 1.0
    full_bic_curve: bool = True

    def __post_init__(self):
        if self.family not in ("log_gamma", "identity", "logistic"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.k is not None and self.k < self.order:
            raise ValueError(f"k={self.k} must be at least the order {self.order}")
        if not 0.0 < self.efficiency < 1.0:
            raise ValueError("efficiency must lie in (0, 1)")
        if self.initial_lambda not in ("isotonic", "paper"):
            raise ValueError("initial_lambda must be 'isotonic' or 'paper'")
        if self.identity_scale not in ("mscale", "mad"):
            raise ValueError("identity_scale must be 'mscale' or 'mad'")


@dataclass
class FitResult:
    beta: np.ndarray
    lam: np.ndarray
    basis: SplineBasis
    family: str
    robust: bool
    nuisance: dict
    tuning: float
    bic: float
    k: int
    report: SolverReport
    objective: float = math.nan
    s_scale: float | None = None
    s_theta: np.ndarray | None = None
    bic_curve: dict | None = None
    jackknife_sd: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def eta(self) -> MonotoneSpline:
        return MonotoneSpline(self.basis, self.lam)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta, self.lam])

    @property
    def converged(self) -> bool:
        return self.report.converged and not self.flags

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "estimator": "robust" if self.robust else "classical",
            "beta": self.beta.tolist(),
            "lambda": self.lam.tolist(),
            "k": self.k,
            "order": self.basis.order,
            "interior_knots": self.basis.knots.interior_knots.tolist(),
            "nuisance": self.nuisance,
            "tuning": self.tuning,
            "bic": self.bic,
            "objective": self.objective,
            "converged": self.converged,
            "flags": list(self.flags),
            "solver": {
                "iterations": self.report.iterations,
                "termination": self.report.termination,
                "gradient_norm": self.report.gradient_norm,
                "active_set": list(self.report.active_set),
                "multipliers": np.asarray(self.report.multipliers).tolist(),
            },
        }
        if self.s_scale is not None:
            out["s_scale"] = self.s_scale
        if self.bic_curve is not None:
            out["bic_curve"] = {str(k): v for k, v in self.bic_curve.items()}
        if self.jackknife_sd is not None:
            out["jackknife_sd"] = self.jackknife_sd.tolist()
        return out


# ---------------------------------------------------------------------------
# helpers

def make_basis(data: Dataset, cfg: FitConfig, k: int) -> SplineBasis:
    return SplineBasis(build_knots(data.t, k - cfg.order, cfg.order,
                                   cfg.placement))


def _response(data: Dataset, cfg: FitConfig) -> np.ndarray:
    if cfg.family == "log_gamma":
        return data.y.copy() if cfg.log_scale else data.log_response()
    if cfg.family == "logistic":
        if np.any((data.y != 0.0) & (data.y != 1.0)):
            raise DataError("logistic responses must be 0 or 1")
    return data.y.copy()


def _weights(data: Dataset, cfg: FitConfig, robust: bool) -> np.ndarray:
    if not robust or cfg.c_w is None:
        return np.ones(data.n)
    return LeverageWeight.from_carriers(data.X, cfg.c_w)(data.X)


def _family(cfg: FitConfig, robust: bool) -> ModelFamily:
    return ModelFamily(cfg.family, TUKEY if robust else CLASSICAL,
                       cfg.logistic_tuning)


def isotonic_projection(lam) -> np.ndarray:
    """Least-squares projection onto nondecreasing vectors (pool adjacent violators)."""
    lam = np.asarray(lam, dtype=float)
    vals, sizes = [], []
    for v in lam:
        vals.append(v)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            s = sizes[-2] + sizes[-1]
            v = (vals[-2] * sizes[-2] + vals[-1] * sizes[-1]) / s
            vals[-2:] = [v]
            sizes[-2:] = [s]
    return np.repeat(vals, sizes)


def paper_start(k: int) -> np.ndarray:
    """Feasible start ``(0, 0, 1, 2, ..., k - 2)``."""
    lam = np.arange(k, dtype=float) - 1.0
    lam[0] = 0.0
    return lam


def constrained_step(obj: Objective, theta0, cfg: FitConfig):
    """Return ``theta0`` if already monotone, else run the active-set method."""
    p = obj.p
    if is_feasible(theta0[p:]):
        report = SolverReport(objective=obj.value(theta0),
                              gradient_norm=float(np.linalg.norm(obj.gradient(theta0))),
                              termination="converged")
        return theta0, report
    if cfg.initial_lambda == "paper":
        lam0 = paper_start(obj.k)
    else:
        lam0 = isotonic_projection(theta0[p:])
    start = np.concatenate([theta0[:p], lam0])
    return active_set_minimize(obj, start, tol=1e-10, max_iter=50 * obj.dim)


def _sqrt_deviance(kind, R):
    if kind == "log_gamma":
        return np.sqrt(deviance_d(R))
    return np.abs(R)


def s_estimate(X, B, y, kind: str, *, scale_c: float = 1.0,
               n_subsamples: int = 50, n_refine: int = 3, rng=None,
               starts=(), tol: float = 1e-9):
    """S-estimate minimising the M-scale of the square-root deviances.

    Candidates are exact fits to random elemental subsamples (plus any
    ``starts``); the best ``n_refine`` are improved by concentration steps that
    alternate a Newton step on the fixed-scale M-objective with a scale update.
    Each such step can only lower the M-scale.
    """
    rng = np.random.default_rng(rng)
    fam = ModelFamily(kind, TUKEY)
    scfg = MScaleConfig(TUKEY, b=0.5, c=scale_c)
    obj = Objective(X, B, y, fam)
    Z = obj.Z
    n, d = Z.shape
    cands = [np.asarray(s, dtype=float) for s in starts]
    cands.append(np.linalg.lstsq(Z, y, rcond=None)[0])
    for _ in range(n_subsamples):
        idx = rng.choice(n, size=d, replace=False)
        Zs = Z[idx]
        try:
            if np.linalg.cond(Zs) > 1e10:
                continue
            cands.append(np.linalg.solve(Zs, y[idx]))
        except np.linalg.LinAlgError:
            continue
    Theta = np.array(cands)
    with np.errstate(over="ignore", invalid="ignore"):
        V = _sqrt_deviance(kind, y[None, :] - Theta @ Z.T)
    finite = np.all(np.isfinite(V), axis=1)
    if not np.any(finite):
        raise FitError("S-step: every candidate fit is degenerate")
    Theta, V = Theta[finite], V[finite]
    scales = m_scale_batch(V, scfg)
    # zero means more than half the residuals vanish: skip such candidates
    scales = np.where(scales > 0, scales, np.inf)
    spread = float(np.median(np.abs(y - np.median(y)))) or 1.0
    if not np.min(scales) > 1e-10 * spread:
        raise FitError("residual scale is zero: the data are fitted exactly")
    order = np.argsort(scales, kind="stable")[:n_refine]

    def scale_of(theta):
        return m_scale(_sqrt_deviance(kind, y - Z @ theta), scfg)

    best_theta, best_sigma = None, math.inf
    for j in order:
        theta, sigma = Theta[j], scales[j]
        for _ in range(100):
            new, _ = newton_minimize(obj.with_tuning(scale_c * sigma), theta,
                                     tol=tol, max_iter=1)
            new_sigma = scale_of(new)
            if not new_sigma < sigma:
                break
            gain = sigma - new_sigma
            theta, sigma = new, new_sigma
            if gain <= 1e-10 * sigma:
                break
        if sigma < best_sigma:
            best_theta, best_sigma = theta, sigma
    if best_theta is None:
        raise FitError("S-step: no candidate produced a positive scale")
    return best_theta, best_sigma


# ---------------------------------------------------------------------------
# fixed-k pipelines

def _fit_fixed_k(data: Dataset, cfg: FitConfig, basis: SplineBasis,
                 robust: bool, warm=None) -> FitResult:
    y = _response(data, cfg)
    B = basis.design(data.t)
    n, p, k = data.n, data.p, basis.k
    if n <= p + k:
        raise FitError(f"need more than p + k = {p + k} observations, got {n}")
    fam = _family(cfg, robust)
    w = _weights(data, cfg, robust)
    flags = []
    nuisance, s_scale, theta_s = {}, None, None
    starts = () if warm is None else (np.asarray(warm, dtype=float),)

    if not robust:
        obj = Objective(data.X, B, y, fam, 1.0, w)
        theta0 = starts[0] if starts else np.zeros(p + k)
        if cfg.family == "log_gamma" and not starts:
            # intercept-like start: every basis coefficient at mean(z)
            theta0[p:] = np.mean(y)
        theta0, rep0 = newton_minimize(obj, theta0, cfg.tol, cfg.max_iter)
        tuning = 1.0
        if cfg.family == "identity":
            r = y - obj.Z @ theta0
            nuisance["sigma"] = float(np.sqrt(np.sum(r * r) / (n - p - k)))
        elif cfg.family == "log_gamma":
            # moment estimate of the shape from the mean deviance
            dev = float(np.mean(deviance_d(y - obj.Z @ theta0)))
            nuisance["alpha"] = _alpha_from_mean_deviance(dev)
    elif cfg.family == "logistic":
        obj = Objective(data.X, B, y, fam, 1.0, w)
        theta0 = starts[0] if starts else np.zeros(p + k)
        theta0, rep0 = newton_minimize(obj, theta0, cfg.tol, cfg.max_iter)
        tuning = 1.0
    else:
        rng = np.random.default_rng([cfg.seed, k])
        scale_c = 1.0 if cfg.family == "log_gamma" else GAUSSIAN_SCALE_C
        theta_s, sigma = s_estimate(
            data.X, B, y, cfg.family, scale_c=scale_c,
            n_subsamples=cfg.n_subsamples, n_refine=cfg.n_refine, rng=rng,
            starts=starts, tol=cfg.tol)
        s_scale = float(sigma)
        if cfg.family == "log_gamma":
            alpha_hat = _CALIBRATION.alpha_from_sigma(sigma, clip=True)
            if alpha_hat in _CALIBRATION.alpha_range:
                flags.append("alpha_at_range_limit")
            tuning = max(sigma, _CALIBRATION.tuning_for_efficiency(
                alpha_hat, cfg.efficiency))
            nuisance["alpha"] = alpha_hat
        else:
            if cfg.identity_scale == "mad":
                kappa = float(np.median(np.abs(y - np.hstack([data.X, B]) @ theta_s)))
                unit = kappa / GAUSSIAN_MAD_CONST
            else:
                kappa = sigma
                unit = sigma
            if not kappa > 0:
                raise FitError("residual scale is zero")
            nuisance["sigma"] = float(kappa)
            tuning = cfg.identity_tuning * unit
        obj = Objective(data.X, B, y, fam, tuning, w)
        theta0, rep0 = newton_minimize(obj, theta_s, cfg.tol, cfg.max_iter)

    theta, report = constrained_step(obj, theta0, cfg)
    if rep0.termination == "max_iter" and report.iterations == 0:
        report.termination = rep0.termination
    if cfg.family == "logistic":
        if np.linalg.norm(theta[:p]) > 1e3:
            flags.append("diverging_beta")
        s_hat = obj.Z @ theta
        if np.all((s_hat > 0) == (y == 1.0)):
            # perfect classification: the likelihood has no finite maximiser
            flags.append("complete_separation")
    value = obj.value(theta)
    bic = value + math.log(n) / (2 * n) * (k + p)
    return FitResult(theta[:p].copy(), theta[p:].copy(), basis, cfg.family,
                     robust, nuisance, float(tuning), float(bic), k, report,
                     objective=value, s_scale=s_scale, s_theta=theta_s,
                     flags=flags)


def _alpha_from_mean_deviance(dev):
    # E d(u) = log(alpha) - digamma(alpha) for u ~ log Gamma(alpha, 1)
    from scipy.optimize import brentq
    from scipy.special import digamma
    if not dev > 0:
        return math.inf
    def f(la):
        return la - digamma(math.exp(la)) - dev

    try:
        return math.exp(brentq(f, math.log(1e-4), math.log(1e8)))
    except ValueError:
        return math.nan


# ---------------------------------------------------------------------------
# BIC selection

def bic_range(n: int) -> tuple[int, int]:
    """Integer search range ``ceil(max(n^.2 / 2, 4)) .. floor(8 + 2 n^.2)``."""
    lo = math.ceil(max(n ** 0.2 / 2.0, 4.0))
    hi = math.floor(8.0 + 2.0 * n ** 0.2)
    return lo, hi


def first_local_minimum(ks, values):
    """First ``k`` whose BIC does not exceed either neighbour's."""
    ks = list(ks)
    vals = list(values)
    for j in range(len(ks)):
        left_ok = j == 0 or vals[j] <= vals[j - 1]
        right_ok = j == len(ks) - 1 or vals[j] <= vals[j + 1]
        if left_ok and right_ok:
            return ks[j]
    return ks[int(np.argmin(vals))]


def _pad(theta, p):
    # new basis function gets the last coefficient repeated: stays monotone
    return np.concatenate([theta, theta[-1:]]) if theta.size > p else theta


def bic_select(data: Dataset, cfg: FitConfig, k_range=None, robust=None):
    """Fit each ``k`` in range and pick the first local minimum of BIC.

    Returns ``(k_star, fit, curve)``; ``curve`` maps ``k`` to BIC (``nan`` for
    failed fits). With ``cfg.full_bic_curve`` off the scan stops as soon as
    the first local minimum is certain, which selects the same ``k``.
    """
    robust = cfg.robust if robust is None else robust
    _response(data, cfg)  # input errors surface once, not per k
    if k_range is None:
        lo, hi = bic_range(data.n)
        lo = max(lo, cfg.order)
        hi = min(hi, data.n - data.p - 1)
        k_range = range(lo, hi + 1)
    ks = list(k_range)
    if not ks:
        raise FitError("empty range for the number of basis functions")
    fits, curve, errors = {}, {}, {}
    warm = None
    for k in ks:
        try:
            basis = make_basis(data, cfg, k)
            fit = _fit_fixed_k(data, cfg, basis, robust,
                               warm=None if warm is None else _pad(warm, data.p))
        except (FitError, CalibrationError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("fit with k=%d failed: %s", k, exc)
            errors[k] = str(exc)
            curve[k] = math.nan
            continue
        fits[k], curve[k] = fit, fit.bic
        warm = fit.theta
        if not cfg.full_bic_curve:
            ok = [kk for kk in ks if kk in fits]
            if len(ok) >= 2 and curve[ok[-1]] >= curve[ok[-2]]:
                break
    if not fits:
        raise FitError(f"every candidate k failed: {errors}")
    ok = [k for k in ks if k in fits]
    k_star = first_local_minimum(ok, [curve[k] for k in ok])
    result = fits[k_star]
    result.bic_curve = dict(curve)
    return k_star, result, curve


# ---------------------------------------------------------------------------
# public entry points

def _run(data: Dataset, cfg: FitConfig, robust: bool) -> FitResult:
    _response(data, cfg)
    if cfg.k is None:
        return bic_select(data, cfg, robust=robust)[1]
    return _fit_fixed_k(data, cfg, make_basis(data, cfg, cfg.k), robust)


def fit_robust_loggamma(data: Dataset, cfg: FitConfig = FitConfig()) -> FitResult:
    """Robust MM fit of the isotonic log-Gamma model.

    S-estimate of the log responses, shape and tuning calibration from the
    S-scale, Tukey MM step with leverage weights, then monotone constraints.
    """
    return _run(data, replace(cfg, family="log_gamma", robust=True), True)


def fit_classical(data: Dataset, cfg: FitConfig = FitConfig()) -> FitResult:
    """Deviance (maximum likelihood type) fit with monotone constraints."""
    return _run(data, replace(cfg, robust=False), False)


def fit_identity(data: Dataset, cfg: FitConfig = FitConfig(family="identity")) -> FitResult:
    """Robust fit of the isotonic partly linear regression model."""
    return _run(data, replace(cfg, family="identity", robust=True), True)


def fit_logistic(data: Dataset, cfg: FitConfig = FitConfig(family="logistic")) -> FitResult:
    """Bianco-Yohai type fit of the isotonic logistic partly linear model."""
    return _run(data, replace(cfg, family="logistic"), cfg.robust)


def fit(data: Dataset, cfg: FitConfig = FitConfig()) -> FitResult:
    return _run(data, cfg, cfg.robust)


def jackknife_se(data: Dataset, cfg: FitConfig = FitConfig(),
                 result: FitResult | None = None, warm: bool = True,
                 max_fail_frac: float = 0.10) -> np.ndarray:
    """Leave-one-out jackknife standard deviations of ``beta``.

    The number of basis functions is held at the full-data choice; refits
    start from the full-data solution unless ``warm`` is False.
    """
    if data.n < 20:
        raise ValueError("jackknife needs at least 20 observations")
    if result is None:
        result = fit(data, cfg)
    fixed = replace(cfg, k=result.k)
    basis = result.basis
    betas, failures = [], 0
    for i in range(data.n):
        sub = data.drop(i)
        try:
            res = _fit_fixed_k(sub, fixed, basis, result.robust,
                               warm=result.theta if warm else None)
        except (FitError, CalibrationError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("jackknife refit %d failed: %s", i, exc)
            failures += 1
            continue
        betas.append(res.beta)
    if failures > max_fail_frac * data.n:
        raise FitError(f"{failures} of {data.n} jackknife refits failed")
    betas = np.array(betas)
    m = betas.shape[0]
    dev = betas - betas.mean(axis=0)
    return np.sqrt((m - 1) / m * np.sum(dev * dev, axis=0))


def ise(eta_hat, eta0, t_values) -> float:
    """Average squared error of ``eta_hat`` against ``eta0`` at ``t_values``."""
    t = np.asarray(t_values, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("ise needs at least one t value")
    diff = np.asarray(eta_hat(t), float) - np.asarray(eta0(t), float)
    return float(np.mean(diff * diff))
