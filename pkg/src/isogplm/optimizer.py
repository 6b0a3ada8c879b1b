"""Sample objective and its minimisers.

Parameters are stacked as ``theta = (beta, lambda)`` with ``beta`` of length
``p`` and ``lambda`` the ``k`` spline coefficients. The ordering constraints
``lambda_i <= lambda_{i+1}`` are handled by a primal active-set method with
Newton-type directions projected onto the working face.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .loss import ModelFamily

TIGHT_TOL = 1e-12
STATIONARY_TOL = 1e-7


class Objective:
    """``L(theta) = mean(rho(y_i, x_i' beta + B_i' lambda, a) * w_i)``."""

    def __init__(self, X, B, y, family: ModelFamily, tuning: float = 1.0,
                 weights=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        B = np.asarray(B, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        n = y.size
        if X.shape[0] != n or B.shape[0] != n:
            raise ValueError("X, B and y must have the same number of rows")
        if weights is None:
            weights = np.ones(n)
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size != n or np.any(weights < 0):
            raise ValueError("weights must be a nonnegative vector of length n")
        self.X, self.B, self.y = X, B, y
        self.Z = np.hstack([X, B])
        self.family = family
        self.tuning = float(tuning)
        self.weights = weights
        self.n, self.p = X.shape
        self.k = B.shape[1]

    @property
    def dim(self) -> int:
        return self.p + self.k

    def with_tuning(self, tuning: float) -> "Objective":
        other = object.__new__(Objective)
        other.__dict__.update(self.__dict__)
        other.tuning = float(tuning)
        return other

    def stack(self, beta, lam) -> np.ndarray:
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if beta.size != self.p or lam.size != self.k:
            raise ValueError(
                f"expected beta of length {self.p} and lambda of length "
                f"{self.k}, got {beta.size} and {lam.size}")
        return np.concatenate([beta, lam])

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.dim:
            raise ValueError(f"theta has length {theta.size}, expected {self.dim}")
        return theta

    def value(self, theta) -> float:
        theta = self._check(theta)
        s = self.Z @ theta
        r = self.family.rho(self.y, s, self.tuning)
        return float(np.sum(r * self.weights) / self.n)

    def gradient(self, theta) -> np.ndarray:
        theta = self._check(theta)
        _, psi, _ = self.family.derivatives(self.y, self.Z @ theta,
                                            self.tuning, with_rho=False)
        return self.Z.T @ (psi * self.weights) / self.n

    def hessian(self, theta) -> np.ndarray:
        theta = self._check(theta)
        _, _, chi = self.family.derivatives(self.y, self.Z @ theta,
                                            self.tuning, with_rho=False)
        Zw = self.Z * (chi * self.weights)[:, None]
        H = self.Z.T @ Zw / self.n
        return 0.5 * (H + H.T)

    def evaluate(self, theta):
        """Value, gradient and Hessian in one pass."""
        theta = self._check(theta)
        rho, psi, chi = self.family.derivatives(self.y, self.Z @ theta,
                                                self.tuning)
        w = self.weights
        f = float(np.sum(rho * w) / self.n)
        g = self.Z.T @ (psi * w) / self.n
        H = self.Z.T @ (self.Z * (chi * w)[:, None]) / self.n
        return f, g, 0.5 * (H + H.T)


def objective_value(obj: Objective, beta, lam) -> float:
    return obj.value(obj.stack(beta, lam))


def gradient(obj: Objective, beta, lam) -> np.ndarray:
    return obj.gradient(obj.stack(beta, lam))


def hessian(obj: Objective, beta, lam) -> np.ndarray:
    return obj.hessian(obj.stack(beta, lam))


def regularized_factor(H):
    """Cholesky factor of ``H + tau I`` for the smallest workable ``tau``.

    ``tau`` runs over powers of ten starting at 1e-8.
    """
    d = H.shape[0]
    eye = np.eye(d)
    for e in range(-8, 13):
        tau = 10.0 ** e
        try:
            return cho_factor(H + tau * eye), tau
        except LinAlgError:
            continue
    raise LinAlgError("Hessian could not be regularised to positive definite")


@dataclass
class SolverReport:
    iterations: int = 0
    objective: float = math.nan
    gradient_norm: float = math.nan
    active_set: list = field(default_factory=list)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    termination: str = "max_iter"
    trace: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    def write_trace(self, fh):
        """Line-delimited iteration trace: ``iter objective grad_norm n_active``."""
        for rec in self.trace:
            fh.write("{} {:.10g} {:.6g} {}\n".format(*rec))


def newton_minimize(obj: Objective, theta0, tol: float = 1e-9,
                    max_iter: int = 100, max_halvings: int = 30):
    """Damped Newton with halving line search; returns ``(theta, report)``."""
    theta = np.array(obj._check(theta0), dtype=float)
    f, g, H = obj.evaluate(theta)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    report = SolverReport()
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        report.trace.append((it, f, gnorm, 0))
        if gnorm < tol:
            report.termination = "converged"
            break
        factor, _ = regularized_factor(H)
        step = -cho_solve(factor, g)
        t = 1.0
        for _ in range(max_halvings):
            cand = theta + t * step
            f_new = obj.value(cand)
            if f_new < f:
                break
            t *= 0.5
        else:
            report.termination = "line_search_failed"
            break
        theta = cand
        f, g, H = obj.evaluate(theta)
        report.iterations = it + 1
    else:
        report.termination = "max_iter"
    report.objective = f
    report.gradient_norm = float(np.linalg.norm(g))
    return theta, report


def _working_matrix(active, p, k):
    A = np.zeros((len(active), p + k))
    for row, i in enumerate(active):
        A[row, p + i] = 1.0
        A[row, p + i + 1] = -1.0
    return A


def working_matrix(active, p, k) -> np.ndarray:
    """Rows ``e_i - e_{i+1}`` on the coefficient block for each active ``i``."""
    return _working_matrix(sorted(active), p, k)


def _tight(lam, tol=TIGHT_TOL):
    return set(np.nonzero(np.diff(lam) <= tol)[0].tolist())


def _snap(theta, p, active):
    # keep active pairs exactly equal despite rounding in the projected step
    lam = theta[p:]
    for i in sorted(active):
        lam[i + 1] = lam[i]
    # rounding can leave a microscopic violation on an inactive pair
    for i in range(lam.size - 1):
        if lam[i + 1] < lam[i]:
            lam[i + 1] = lam[i]
    return theta


def active_set_minimize(obj: Objective, theta0, tol: float = 1e-10,
                        max_iter: int = 500, max_halvings: int = 30,
                        mu_tol: float = 1e-10, callback=None):
    """Minimise ``obj`` subject to nondecreasing spline coefficients.

    The working set holds the indices ``i`` with ``lambda_i = lambda_{i+1}``
    enforced as equalities. Each iteration computes the projected Newton
    direction, releases the constraint with the most negative multiplier when
    the direction vanishes, and otherwise takes the largest feasible step that
    decreases the objective, adding constraints that become tight.
    """
    p, k = obj.p, obj.k
    theta = np.array(obj._check(theta0), dtype=float)
    if np.any(np.diff(theta[p:]) < -TIGHT_TOL):
        raise ValueError("starting coefficients are not nondecreasing")
    active = _tight(theta[p:])
    theta = _snap(theta, p, active)
    report = SolverReport()
    f, g, H = obj.evaluate(theta)
    mu = np.zeros(0)
    best = (f, theta.copy(), sorted(active))
    if callback is not None:
        callback(theta)

    for it in range(max_iter):
        factor, _ = regularized_factor(H)
        Hg = cho_solve(factor, g)
        act = sorted(active)
        if act:
            A = _working_matrix(act, p, k)
            HiAt = cho_solve(factor, A.T)
            M = A @ HiAt
            try:
                mu = -np.linalg.solve(M, A @ Hg)
            except np.linalg.LinAlgError:
                mu = -np.linalg.lstsq(M, A @ Hg, rcond=None)[0]
            eta = -(Hg + HiAt @ mu)
            proj_grad = g + A.T @ mu
        else:
            mu = np.zeros(0)
            eta = -Hg
            proj_grad = g
        report.trace.append((it, f, float(np.linalg.norm(proj_grad)), len(act)))

        if np.linalg.norm(eta) < tol:
            if not act or mu.min() >= -mu_tol:
                report.termination = "converged"
                break
            active.discard(act[int(np.argmin(mu))])
            continue

        lam, dl = theta[p:], eta[p:]
        nu1, blocking = math.inf, None
        for i in range(k - 1):
            if i in active or not dl[i] > dl[i + 1]:
                continue
            nu = -(lam[i + 1] - lam[i]) / (dl[i + 1] - dl[i])
            if nu < nu1:
                nu1, blocking = nu, i
        t = min(1.0, nu1)
        accepted = False
        for r in range(max_halvings):
            cand = theta + t * eta
            new_active = set(active)
            if r == 0 and blocking is not None and nu1 <= 1.0:
                cand[p + blocking + 1] = cand[p + blocking]
                new_active.add(blocking)
            new_active |= _tight(cand[p:])
            # snap before testing descent so the accepted point is the kept one
            cand = _snap(cand, p, new_active)
            f_new = obj.value(cand)
            if f_new < f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable descent along eta: treat the point as
            # stationary on the current face
            if act and mu.min() < -mu_tol:
                active.discard(act[int(np.argmin(mu))])
                continue
            pg = float(np.linalg.norm(proj_grad))
            report.termination = ("converged" if pg < STATIONARY_TOL
                                  else "line_search_failed")
            break
        active = new_active
        theta = cand
        f, g, H = obj.evaluate(theta)
        report.iterations = it + 1
        if f < best[0]:
            best = (f, theta.copy(), sorted(active))
        if callback is not None:
            callback(theta)
    else:
        report.termination = "max_iter"

    if report.termination != "converged" and best[0] < f:
        f, theta, active = best[0], best[1], set(best[2])
        g = obj.gradient(theta)
        mu = np.zeros(0)
    act = sorted(active)
    if act and mu.size != len(act):
        A = _working_matrix(act, p, k)
        mu = -np.linalg.lstsq(A @ A.T, A @ g, rcond=None)[0]
    proj = g + (_working_matrix(act, p, k).T @ mu if act else 0.0)
    report.objective = f
    report.gradient_norm = float(np.linalg.norm(proj))
    report.active_set = act
    report.multipliers = mu
    return theta, report
