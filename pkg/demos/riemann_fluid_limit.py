"""Riemann problem in the fluid limit.

Hot dense gas on the left, cold light gas on the right. At eps = 1e-6 the
kinetic solution follows the Euler solution: a rarefaction, a contact and a
shock separated by flat plateaus. Discontinuous data is run with the
Shu-Osher stage form and the ``sa_dirk3_so`` tableau, which keep the stage
operands nonnegative next to the jump.

Run: python demos/riemann_fluid_limit.py   (a few minutes)
"""

import numpy as np

from kinetic_ar.bench import run_problem

ranks = []
res = run_problem("riemann", {"knudsen": 1e-6, "tableau": "sa_dirk3_so",
                              "stage_form": "shu_osher"},
                  observers=[lambda r: ranks.append(r.svd_rank)])
g = res.grid
m = res.state.moments(g)

# %% solution summary
print(f"{res.steps} steps to t = {res.t:g}, SVD rank {min(ranks)}..{max(ranks)}")
print(f"density range [{m.rho.min():.4f}, {m.rho.max():.4f}]")

# %% coarse profile: the plateaus show up as repeated values
for i in range(0, g.nx, g.nx // 16):
    print(f"x={g.x_centers[i]:.3f}  rho={m.rho[i]:.4f}  u={m.u[i]:+.4f}  T={m.temperature[i]:.4f}")

# %% the same run at eps = 1e-2 keeps visible kinetic smoothing; the default
# tolerances are too coarse for the cold right state there (see README)
