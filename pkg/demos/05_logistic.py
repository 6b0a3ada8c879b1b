"""Robust logistic partly linear fit with a few flipped labels."""
import numpy as np
from scipy.special import expit

from isogplm import Dataset, FitConfig, fit

rng = np.random.default_rng(5)
n = 400
x = rng.normal(size=n)
t = rng.uniform(size=n)
y = (rng.uniform(size=n) < expit(1.0 * x + 2.0 * t - 1.0)).astype(float)
flip = np.argsort(-np.abs(x))[:12]
y[flip] = 1.0 - (x[flip] > 0)  # mislabel the most extreme carriers
data = Dataset(y, x, t)

for robust in (False, True):
    res = fit(data, FitConfig(family="logistic", robust=robust, k=5))
    name = "robust" if robust else "classical"
    print(f"{name:9s} beta = {res.beta[0]:.3f}  eta(0) = {res.eta(0.0)[0]:.3f}  "
          f"eta(1) = {res.eta(1.0)[0]:.3f}  flags = {res.flags}")
print("true      beta = 1.000  eta(0) = -1.000  eta(1) = 1.000")
