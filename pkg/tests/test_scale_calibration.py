import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import gammaln

from isogplm.loss import TUKEY, ScoreFunction, deviance_d
from isogplm.scale_calibration import (CalibrationError, ExactFitError,
                                       MScaleConfig, ShapeCalibration,
                                       adaptive_tuning, alpha_from_sigma,
                                       efficiency, m_scale, m_scale_batch,
                                       sigma_star, tuning_for_efficiency)

# frozen from the quadrature oracles below (b = 1/2, Tukey score)
SIGMA_STAR_3 = 0.6494196985069781
C_090_3 = 1.5994599968035537
C_095_3 = 1.9299379803347165


def density(u, alpha):
    return math.exp(alpha * math.log(alpha) - gammaln(alpha) + alpha * (u - math.exp(u)))


def _sat(c):
    g = lambda u: deviance_d(u) - c * c  # noqa: E731
    return brentq(g, -c * c - 2, 0.0), brentq(g, 0.0, 10.0)


def oracle_expected_score(alpha, sigma):
    lo, hi = _sat(sigma)
    inner = quad(lambda u: TUKEY.phi(math.sqrt(deviance_d(u)) / sigma) * density(u, alpha),
                 lo, hi, epsabs=1e-13, limit=200)[0]
    # density is below 1e-25 outside [-120, 6] for the shapes used here
    tails = (quad(lambda u: density(u, alpha), -120.0, lo, epsabs=1e-14, limit=200)[0]
             + quad(lambda u: density(u, alpha), hi, 6.0, epsabs=1e-14)[0])
    return inner + tails


def oracle_efficiency(alpha, c):
    # psi and chi of u -> phi(sqrt(d(u)) / c) written out directly
    def dphi(v):
        return 6 * v * (1 - v * v) ** 2 if abs(v) < 1 else 0.0

    def ddphi(v):
        return 6 * (1 - v * v) * (1 - 5 * v * v) if abs(v) < 1 else 0.0

    def parts(u):
        # v(u) = sign(u) sqrt(d(u)) / c and its first two derivatives
        if abs(u) < 1e-4:
            v, dv, ddv = u / math.sqrt(2), 1 / math.sqrt(2), 1 / (3 * math.sqrt(2))
        else:
            r = math.sqrt(deviance_d(u))
            v = math.copysign(r, u)
            dv = math.copysign(1.0, u) * math.expm1(u) / (2 * r)
            ddv = (math.copysign(1.0, u)
                   * (2 * math.exp(u) * r * r - math.expm1(u) ** 2) / (4 * r ** 3))
        v, dv, ddv = v / c, dv / c, ddv / c
        return dphi(v) * dv, ddphi(v) * dv * dv + dphi(v) * ddv

    lo, hi = _sat(c)
    A = quad(lambda u: parts(u)[1] * density(u, alpha), lo, hi, points=[0.0],
             epsabs=1e-12, limit=400)[0]
    B = quad(lambda u: parts(u)[0] ** 2 * density(u, alpha), lo, hi, points=[0.0],
             epsabs=1e-12, limit=400)[0]
    return A * A / (alpha * B)


# -- M-scale ---------------------------------------------------------------

def test_constant_values():
    u_star = brentq(lambda u: 3 * u**2 - 3 * u**4 + u**6 - 0.5, 0.0, 1.0)
    assert m_scale(np.full(25, 2.0)) == pytest.approx(2.0 / u_star, rel=1e-9)


@pytest.mark.parametrize("n", [11, 40])
def test_step_score_gives_median(n):
    v = np.abs(np.random.default_rng(n).standard_cauchy(n))
    cfg = MScaleConfig(ScoreFunction("step"), b=0.5, c=1.0)
    assert m_scale(v, cfg) == pytest.approx(np.median(v), rel=1e-12)


def test_equivariance():
    v = np.random.default_rng(0).exponential(size=60)
    base = m_scale(v)
    for k in (0.1, 1.0, 10.0):
        assert m_scale(k * v) == pytest.approx(k * base, rel=1e-9)


def test_breakdown_sanity():
    v = np.abs(np.random.default_rng(1).normal(size=100))
    bad = v.copy()
    bad[:40] = 1e6
    assert m_scale(bad) / m_scale(v) < 10.0


def test_batch_matches_scalar():
    V = np.random.default_rng(4).exponential(size=(7, 30))
    npt.assert_allclose(m_scale_batch(V), [m_scale(r) for r in V], rtol=1e-12)


def test_exact_fit_raises():
    v = np.zeros(10)
    v[:3] = 1.0
    with pytest.raises(ExactFitError):
        m_scale(v)


def test_config_validation():
    with pytest.raises(ValueError):
        MScaleConfig(b=1.5)
    with pytest.raises(ValueError):
        MScaleConfig(c=0.0)


# -- shape calibration -----------------------------------------------------

def test_expected_score_matches_quadrature_oracle():
    from isogplm.scale_calibration import expected_score
    for alpha, sigma in [(0.5, 1.2), (3.0, 0.6), (20.0, 0.3)]:
        assert expected_score(alpha, sigma) == pytest.approx(
            oracle_expected_score(alpha, sigma), abs=1e-9)


def test_sigma_star_golden_value():
    assert sigma_star(3.0) == pytest.approx(SIGMA_STAR_3, rel=1e-10)
    assert oracle_expected_score(3.0, SIGMA_STAR_3) == pytest.approx(0.5, abs=1e-10)


def test_sigma_star_monotone():
    grid = [0.5, 1, 2, 3, 5, 10, 20]
    vals = [sigma_star(a) for a in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("alpha", [1.0, 2.0, 3.0, 5.0, 10.0])
def test_round_trip(alpha):
    assert alpha_from_sigma(sigma_star(alpha)) == pytest.approx(alpha, abs=1e-6)


def test_alpha_from_sigma_monotone():
    sig = np.linspace(1.5, 0.3, 10)
    alphas = [alpha_from_sigma(s) for s in sig]
    assert all(a < b for a, b in zip(alphas, alphas[1:]))


def test_alpha_from_sigma_out_of_range():
    cal = ShapeCalibration()
    with pytest.raises(CalibrationError):
        cal.alpha_from_sigma(1e-4)
    assert cal.alpha_from_sigma(1e-4, clip=True) == cal.alpha_range[1]
    assert cal.alpha_from_sigma(1e3, clip=True) == cal.alpha_range[0]


def test_alpha_from_large_sample():
    rng = np.random.default_rng(2024)
    u = np.log(rng.gamma(3.0, 1.0 / 3.0, 100_000))
    sigma = m_scale(np.sqrt(deviance_d(u)))
    assert 2.8 <= alpha_from_sigma(sigma) <= 3.2
    c = adaptive_tuning(sigma, 0.9)
    assert c == pytest.approx(max(SIGMA_STAR_3, C_090_3), rel=0.02)


def test_tuning_golden_and_oracle():
    c = tuning_for_efficiency(3.0, 0.9)
    assert c == pytest.approx(C_090_3, rel=1e-8)
    assert tuning_for_efficiency(3.0, 0.95) == pytest.approx(C_095_3, rel=1e-8)
    assert oracle_efficiency(3.0, c) == pytest.approx(0.9, abs=1e-3)


def test_efficiency_matches_oracle_on_grid():
    for c in (0.3, 0.8, 2.0):
        assert efficiency(3.0, c) == pytest.approx(oracle_efficiency(3.0, c), abs=1e-6)


def test_tuning_monotone_in_efficiency():
    assert tuning_for_efficiency(3.0, 0.99) > tuning_for_efficiency(3.0, 0.9)
    assert tuning_for_efficiency(3.0, 0.95) > tuning_for_efficiency(3.0, 0.85)
    assert tuning_for_efficiency(3.0, 0.995) > 3.0


def test_efficiency_curve_increasing():
    cs = np.linspace(0.1, 5.0, 50)
    e = np.array([efficiency(3.0, c) for c in cs])
    assert np.all(np.diff(e) > 0)
    assert np.all((e > 0) & (e < 1))


def test_adaptive_tuning_branches():
    # C_e above the scale
    s = sigma_star(3.0)
    assert adaptive_tuning(s, 0.9) == pytest.approx(tuning_for_efficiency(3.0, 0.9), rel=1e-6)
    # C_e below the scale: low efficiency at small shape
    s = sigma_star(0.5)
    assert adaptive_tuning(s, 0.2) == s


def test_unreachable_efficiency_reports_curve():
    cal = ShapeCalibration()
    with pytest.raises(CalibrationError) as info:
        cal.tuning_for_efficiency(3.0, 0.9, window=(0.05, 0.2))
    grid, curve = info.value.curve
    assert grid.size == curve.size


def test_invalid_arguments():
    with pytest.raises(ValueError):
        tuning_for_efficiency(3.0, 1.5)
    with pytest.raises(ValueError):
        sigma_star(-1.0)
    with pytest.raises(ValueError):
        ShapeCalibration(b=1.0)


def test_csv_round_trip(tmp_path):
    cal = ShapeCalibration()
    path = tmp_path / "cal.csv"
    rows = cal.export_csv(path, [1.0, 2.0, 3.0])
    fresh = ShapeCalibration()
    loaded = fresh.load_csv(path)
    assert len(loaded) == 3
    for row, rec in zip(rows, loaded):
        assert list(rec.values()) == row
    assert fresh.sigma_star(3.0) == cal.sigma_star(3.0)
