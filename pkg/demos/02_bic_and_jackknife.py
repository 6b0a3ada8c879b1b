"""Choose the spline dimension by BIC and attach jackknife standard errors."""
from isogplm import FitConfig, bic_select, jackknife_se
from isogplm.simulate import ScenarioConfig, generate

data = generate(ScenarioConfig(seed=2), 0)
cfg = FitConfig(robust=True)

k_star, res, curve = bic_select(data, cfg)
print("k    BIC")
for k, v in curve.items():
    print(f"{k:<4d} {v:.5f}{'  <- selected' if k == k_star else ''}")

sd = jackknife_se(data, cfg, res)
print(f"\nbeta = {res.beta[0]:.4f}, jackknife sd = {sd[0]:.4f}")
