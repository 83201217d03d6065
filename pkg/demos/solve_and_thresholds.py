"""Solve the control problem on a reduced grid and read off the policy.

Backward induction fills the value function and the optimal mode
(wait / buy / sell) at every grid node; the threshold structure means
the whole policy compresses to two price levels per (fill, belief,
time).  A couple of seconds on the reduced grid used here.
"""

import time

import numpy as np

import storagecontrol as sc
from storagecontrol.grid import Mode

params = sc.preset("paper2016")
grid = sc.Grid4D.make(params, s_min=-55.0, s_max=135.0, n_s=77, n_q=9, n_nu=11, n_t=25)

tic = time.time()
value, policy = sc.backward_solve(params, grid)
print(f"solved {grid.s.size}x{grid.q.size}x{grid.nu.size}x{grid.t.size} grid "
      f"in {time.time() - tic:.2f}s")

j = int(np.argmin(np.abs(grid.q - 50.0)))   # half full
k = int(np.argmin(np.abs(grid.nu - 0.5)))   # even beliefs

print("\nmode map at t=0, q=50, nu1=0.5 (price ascending):")
modes = policy.mode[:, j, k, 0]
line = "".join({Mode.BUY: "B", Mode.WAIT: ".", Mode.SELL: "S"}[m] for m in modes)
print("  " + line)
lo = grid.s[np.max(np.where(modes == Mode.BUY))] if (modes == Mode.BUY).any() else None
hi = grid.s[np.min(np.where(modes == Mode.SELL))] if (modes == Mode.SELL).any() else None
print(f"  last buy node {lo}, first sell node {hi}")

print("\nvalue increases with the belief in the high-price regime:")
for nu in (0.0, 0.25, 0.5, 0.75, 1.0):
    v = value.at(40.0, 100.0, nu, 0.0)
    print(f"  V(s=40, q=100, nu1={nu:.2f}, t=0) = {v:10.1f}")

print("\nand (at prices above the scrap break-even) with the fill level:")
for q in (0.0, 25.0, 50.0, 75.0, 100.0):
    v = value.at(40.0, q, 0.5, 0.0)
    print(f"  V(s=40, q={q:5.1f}, nu1=0.5, t=0) = {v:10.1f}")

# the facility is worth more than its liquidation value: holding the
# option to trade has value
q0 = 50.0
liq = q0 * (params.c_S * 40.0 - params.d_minus)
print(f"\nimmediate liquidation of q=50 at s=40 nets {liq:.1f}; "
      f"operating value is {value.at(40.0, q0, 0.5, 0.0):.1f}")
