import numpy as np
import pytest

from isogplm.loss import CLASSICAL, TUKEY, ModelFamily
from isogplm.optimizer import Objective
from isogplm.spline_basis import SplineBasis


def make_objective(n=50, p=2, k=6, family="log_gamma", score=TUKEY, seed=0,
                   eta=lambda t: -np.cos(2 * t), tuning=1.0, weights=None):
    """Random log-scale data ``z = X beta + eta(t) + noise`` and its objective."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = rng.uniform(size=n)
    B = SplineBasis.uniform(k).design(t)
    noise = np.log(rng.gamma(3.0, 1 / 3.0, n)) if family == "log_gamma" else rng.normal(0, 0.3, n)
    y = X @ np.linspace(1.0, -1.0, p) + eta(t) + noise
    return Objective(X, B, y, ModelFamily(family, score), tuning, weights)


@pytest.fixture
def classical_objective():
    return make_objective(family="log_gamma", score=CLASSICAL)
