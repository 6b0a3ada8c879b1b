"""Robust estimation for isotonic generalized partly linear models."""
from .data import Dataset, DataError, read_csv, write_csv
from .fit import (FitConfig, FitError, FitResult, bic_select, fit,
                  fit_classical, fit_identity, fit_logistic,
                  fit_robust_loggamma, ise, jackknife_se)
from .loss import CLASSICAL, TUKEY, LeverageWeight, ModelFamily, ScoreFunction
from .scale_calibration import (CalibrationError, MScaleConfig,
                                ShapeCalibration, alpha_from_sigma, m_scale,
                                sigma_star, tuning_for_efficiency)
from .spline_basis import (KnotError, KnotSet, MonotoneSpline, SplineBasis,
                           build_knots, eval_basis, eval_spline)

__version__ = "0.1.0"
