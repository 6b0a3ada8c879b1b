"""Population M-scale sigma*(alpha) and efficiency tuning constants C_e(alpha).

sigma* is strictly decreasing in the shape, which is what lets the S-scale of
a fit be inverted into an estimate of alpha.
"""
from isogplm.scale_calibration import (alpha_from_sigma, efficiency, sigma_star,
                                       tuning_for_efficiency)

print("alpha  sigma*    C_0.90    C_0.95")
for a in (0.5, 1, 2, 3, 5, 10, 20):
    print(f"{a:<5g}  {sigma_star(a):.5f}  {tuning_for_efficiency(a, 0.90):.5f}"
          f"  {tuning_for_efficiency(a, 0.95):.5f}")

s = sigma_star(3.0)
print(f"\ninverting sigma*(3) = {s:.6f} gives alpha = {alpha_from_sigma(s):.6f}")
c = tuning_for_efficiency(3.0, 0.9)
print(f"efficiency at alpha = 3 with c = {c:.5f}: {efficiency(3.0, c):.6f}")
