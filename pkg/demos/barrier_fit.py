"""From a solved mode field to smooth threshold surfaces.

The solver's policy is a mode per grid node; scanning each price column
gives the raw buy/sell levels, which are then fitted with a smooth
tensor basis (polynomial in fill and belief, two-scale in time to track
the terminal dive).  The admissibility checks below are what justify
simulating with a bang-bang policy read off these surfaces.
"""

import numpy as np

import storagecontrol as sc
from storagecontrol.barriers import (
    check_mixed_derivative,
    check_nonparallelity,
    classification_agreement,
)

params = sc.preset("paper2016")
grid = sc.Grid4D.make(params, s_min=-55.0, s_max=135.0, n_s=77, n_q=9, n_nu=11, n_t=25)
value, policy = sc.backward_solve(params, grid)

raw = sc.extract_barriers(policy)
n_censored = (~np.isfinite(raw.buy_level)).sum() + (~np.isfinite(raw.sell_level)).sum()
print(f"raw levels on {raw.buy_level.size} nodes per surface; "
      f"{n_censored} censored (threshold left the scanned price range)")

smoothed = sc.smooth_barriers(raw, params, degrees=(4, 4, 5, 4))
print(f"fit degrees {smoothed.degrees}, max deviation from raw levels "
      f"{smoothed.max_fit_deviation:.2f} price units")

print("\nthresholds at q=50, t=0 as the belief sweeps the simplex:")
print("  nu1    buy below   sell above")
for nu in np.linspace(0.0, 1.0, 6):
    print(f"  {nu:4.2f} {float(smoothed.buy(50.0, nu, 0.0)):10.2f} "
          f"{float(smoothed.sell(50.0, nu, 0.0)):12.2f}")

print("\nnear the horizon both levels dive (scrap value caps what holding can earn):")
for t in (0.80, 0.90, 0.95, 0.99):
    print(f"  t={t:4.2f}  buy {float(smoothed.buy(50.0, 0.5, t)):8.2f}  "
          f"sell {float(smoothed.sell(50.0, 0.5, t)):8.2f}")

print("\nadmissibility checks:")
md = check_mixed_derivative(value)
print(f"  mixed derivative: min |V_sq - 1| = {md['min_margin']:.4f}  (> 0 required)")
npar = check_nonparallelity(smoothed)
print(f"  non-parallelity:  min margin = {npar['min_margin']:.4f}  (> 0 required; "
      f"belief-slope limit at nu1=0.5 is {npar['forbidden_slope_at_half']:.2f})")
agree = classification_agreement(policy, smoothed)
print(f"  smoothed surfaces reproduce the grid policy on {agree:.2%} of nodes")
