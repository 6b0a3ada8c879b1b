import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import expit, gammaln

from isogplm.loss import (CLASSICAL, TUKEY, LeverageWeight, ModelFamily,
                          ScoreFunction, chi, deviance_d, leverage_weight, psi,
                          rho)

LG_T = ModelFamily("log_gamma", TUKEY)
LG_C = ModelFamily("log_gamma", CLASSICAL)
ID_T = ModelFamily("identity", TUKEY)
LOGIT_T = ModelFamily("logistic", TUKEY, logistic_tuning=1.5)
LOGIT_C = ModelFamily("logistic", CLASSICAL)


def loggamma_density(u, alpha):
    return math.exp(alpha * math.log(alpha) - gammaln(alpha) + alpha * (u - math.exp(u)))


def test_deviance_values():
    assert deviance_d(0.0) == 0.0
    assert deviance_d(1.0) == pytest.approx(math.e - 2.0, rel=1e-15)
    assert deviance_d(-1.0) == pytest.approx(1.0 / math.e, rel=1e-15)


def test_deviance_small_arguments_continuous():
    u = np.array([-1.0001e-4, -0.9999e-4, 0.9999e-4, 1.0001e-4, 1e-9])
    npt.assert_allclose(deviance_d(u), u * u / 2 + u ** 3 / 6 + u ** 4 / 24,
                        rtol=1e-9)


def test_tukey_closed_form():
    y = np.linspace(-2, 2, 401)
    npt.assert_allclose(TUKEY.phi(y), np.minimum(3 * y**2 - 3 * y**4 + y**6, 1.0),
                        atol=1e-15)
    assert TUKEY.phi(0.0) == 0.0
    assert np.all(np.diff(TUKEY.phi(np.linspace(0, 3, 300))) >= 0)


def test_step_score_has_no_derivative():
    with pytest.raises(ValueError):
        ScoreFunction("step").dh(0.5)
    with pytest.raises(ValueError):
        ModelFamily("log_gamma", ScoreFunction("step"))


def test_nuisance_semantics():
    assert LG_T.nuisance_semantics == "shape_alpha"
    assert ID_T.nuisance_semantics == "scale_sigma"
    assert LOGIT_T.nuisance_semantics == "none"


def test_rho_simple_values():
    assert rho(LG_T, 1.3, 1.3, 0.7) == 0.0
    assert rho(ID_T, 2.0, 1.5, 0.5) == pytest.approx(1.0)
    assert psi(LG_T, 0.4, 0.4, 0.5) == 0.0
    assert chi(LG_C, 0.4, 0.4) == pytest.approx(1.0)


def test_saturated_tukey_derivatives_vanish():
    z, s, a = 3.0, 0.0, 0.5  # sqrt(d(3)) / 0.5 >> 1
    assert psi(LG_T, z, s, a) == 0.0
    assert chi(LG_T, z, s, a) == 0.0
    assert rho(LG_T, z, s, a) == 1.0


def _g1_oracle(t, fam):
    c2 = fam.logistic_tuning ** 2
    f = lambda u: fam.score.dh(-math.log(u) / c2) / c2  # noqa: E731
    return quad(f, 0.0, t, points=[math.exp(-c2)] if math.exp(-c2) < t else None,
                epsabs=1e-13, limit=200)[0]


def test_logistic_classical_is_binomial_deviance_plus_constant():
    # classical score: G(p) = p + (1 - p) = 1
    got = rho(LOGIT_C, 1.0, 0.0)
    assert got == pytest.approx(math.log(2.0) + _g1_oracle(0.5, LOGIT_C) * 2, rel=1e-12)
    s = np.linspace(-4, 4, 17)
    for y in (0.0, 1.0):
        dev = -y * np.log(expit(s)) - (1 - y) * np.log1p(-expit(s))
        npt.assert_allclose(rho(LOGIT_C, y, s), dev + 1.0, rtol=1e-12)


@pytest.mark.parametrize("p", [0.01, 0.2, 0.5, 0.9, 0.999])
def test_logistic_correction_against_quadrature(p):
    want = _g1_oracle(p, LOGIT_T) + _g1_oracle(1 - p, LOGIT_T)
    assert LOGIT_T.correction(p) == pytest.approx(want, rel=1e-10, abs=1e-13)


def test_logistic_requires_binary_response():
    with pytest.raises(ValueError):
        rho(LOGIT_T, 0.5, 0.0)
    with pytest.raises(ValueError):
        ModelFamily("logistic", TUKEY, logistic_tuning=0.5)


def _fd_check(fam, y, s, a, h=1e-6):
    r_p, r_m = fam.rho(y, s + h, a), fam.rho(y, s - h, a)
    ps = fam.psi(y, s, a)
    fd1 = (r_p - r_m) / (2 * h)
    p_p, p_m = fam.psi(y, s + h, a), fam.psi(y, s - h, a)
    fd2 = (p_p - p_m) / (2 * h)
    return ps, fd1, fam.chi(y, s, a), fd2


@pytest.mark.parametrize("fam", [LG_T, LG_C, ID_T], ids=["lg-tukey", "lg-cl", "id"])
def test_derivatives_finite_differences(fam):
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(400):
        y, s, a = rng.normal(), rng.normal(), rng.uniform(0.3, 2.0)
        if abs(y - s) < 0.1:
            continue
        if fam.score.bounded:
            D = deviance_d(y - s) if fam.kind == "log_gamma" else (y - s) ** 2
            if abs(D / a**2 - 1.0) < 1e-3:
                continue
        ps, fd1, ch, fd2 = _fd_check(fam, y, s, a)
        assert ps == pytest.approx(fd1, rel=1e-5, abs=1e-8)
        assert ch == pytest.approx(fd2, rel=1e-4, abs=1e-7)
        checked += 1
    assert checked > 200


@pytest.mark.parametrize("fam", [LOGIT_T, LOGIT_C], ids=["tukey", "classical"])
def test_logistic_derivatives_finite_differences(fam):
    rng = np.random.default_rng(5)
    for _ in range(200):
        y, s = float(rng.integers(0, 2)), rng.uniform(-5, 5)
        ps, fd1, ch, fd2 = _fd_check(fam, y, s, 1.0)
        assert ps == pytest.approx(fd1, rel=1e-5, abs=1e-8)
        assert ch == pytest.approx(fd2, rel=1e-4, abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(st.floats(-8, 8), st.floats(-8, 8), st.floats(0.05, 5))
def test_rho_nonnegative_and_bounded(y, s, a):
    for fam in (LG_T, ID_T):
        r = fam.rho(y, s, a)
        assert 0.0 <= r <= 1.0
    assert LG_C.rho(y, s, a) >= 0.0
    for yb in (0.0, 1.0):
        r = LOGIT_T.rho(yb, s)
        # bounded scores plus a correction of at most 2 G1(1)
        assert 0.0 <= r <= 1.0 + 2 * _g1_oracle(1.0, LOGIT_T) + 1e-12


def test_near_zero_residual_is_finite():
    s = np.array([0.0, 1e-12, 1e-8, -1e-8])
    _, p, c = LG_T.derivatives(0.0, s, 0.5)
    assert np.all(np.isfinite(p)) and np.all(np.isfinite(c))
    assert abs(p[0]) == 0.0


# -- Fisher-consistency -----------------------------------------------------

@pytest.mark.parametrize("alpha", [2.0, 3.0, 5.0])
@pytest.mark.parametrize("a", [0.3, 0.5, 1.0])
@pytest.mark.parametrize("fam", [LG_C, LG_T], ids=["classical", "tukey"])
def test_conditional_fisher_consistency(alpha, a, fam):
    # E psi(u, 0, a) under the log-Gamma density; exact zero for any score
    # of d(u) because d'(u) times the density integrates against k(d(u)) to 0
    f = lambda u: float(fam.psi(u, 0.0, a)) * loggamma_density(u, alpha)  # noqa: E731
    val = quad(f, -40.0, 6.0, points=_kinks(a, 0.0), limit=400, epsabs=1e-11)[0]
    assert abs(val) < 1e-8


def _kinks(a, b):
    # u where d(u + b) = a^2, i.e. where Tukey's score saturates
    g = lambda u: deviance_d(u + b) - a * a  # noqa: E731
    return [brentq(g, -b - a * a - 2, -b), -b, brentq(g, -b, -b + 5.0), 0.0]


def population_objective(alpha, a, b):
    f = lambda u: TUKEY.phi(math.sqrt(deviance_d(u + b)) / a) * loggamma_density(u, alpha)  # noqa: E731
    return quad(f, -40.0, 6.0, points=_kinks(a, b), limit=400, epsabs=1e-14)[0]


@pytest.mark.parametrize("a", [0.3515, 0.5])
def test_population_minimum_at_truth(a):
    base = population_objective(3.0, a, 0.0)
    for b in (-1.0, -0.5, -0.25, 0.25, 0.5, 1.0):
        assert population_objective(3.0, a, b) > base


def logistic_population(fam, pi0, pi):
    s = np.log(pi) - np.log1p(-pi)
    return pi0 * fam.rho(1.0, s) + (1 - pi0) * fam.rho(0.0, s)


@pytest.mark.parametrize("fam", [LOGIT_T, LOGIT_C, ModelFamily("logistic", TUKEY, 1.0)])
@pytest.mark.parametrize("pi0", [0.2, 0.5, 0.8])
def test_logistic_pointwise_minimum(fam, pi0):
    grid = np.linspace(0.01, 0.99, 401)
    vals = logistic_population(fam, pi0, grid)
    assert grid[np.argmin(vals)] == grid[np.argmin(np.abs(grid - pi0))]


# -- leverage weights -------------------------------------------------------

def test_leverage_weight_values():
    lw = LeverageWeight(np.array([1.0]), np.array([2.0]), c_w=4.685)
    assert leverage_weight(1.0, lw) == 1.0
    assert leverage_weight(1.0 + 4.685 * 2.0, lw) == 0.0
    assert leverage_weight(1.0 - 4.685 * 2.0, lw) == 0.0
    assert leverage_weight(1.0 + 4.685, lw) == pytest.approx(0.5625)


def test_leverage_from_carriers():
    X = np.random.default_rng(2).normal(3.0, 2.0, size=(2001, 2))
    lw = LeverageWeight.from_carriers(X)
    npt.assert_allclose(lw.center, np.median(X, axis=0))
    mad = np.median(np.abs(X - np.median(X, axis=0)), axis=0) * 1.482602218505602
    npt.assert_allclose(lw.spread, mad)
    w = lw(X)
    assert np.all((0 <= w) & (w <= 1))
    single = LeverageWeight(lw.center[:1], lw.spread[:1])(X[:, 0])
    other = LeverageWeight(lw.center[1:], lw.spread[1:])(X[:, 1])
    npt.assert_allclose(w, single * other)


def test_zero_spread_rejected():
    with pytest.raises(ValueError):
        LeverageWeight(np.zeros(1), np.zeros(1))


def test_binary_carrier_unweighted():
    rng = np.random.default_rng(5)
    x = rng.normal(size=200)
    X = np.column_stack([x, (rng.uniform(size=200) < 0.2).astype(float)])
    w = LeverageWeight.from_carriers(X)(X)
    npt.assert_allclose(w, LeverageWeight.from_carriers(x)(x), rtol=1e-15)
