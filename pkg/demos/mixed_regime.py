"""Mixed kinetic/fluid regime with a spatially varying Knudsen number.

eps(x) = eps0 + (tanh(1 - a0 x) + tanh(1 + a0 x)) / 2 is order one in the
middle of the domain and eps0 = 1e-6 near the edges. The initial state is two
counter-drifting Maxwellians. The solution should not depend on the time step,
so runs at two CFL numbers are compared.

Run: python demos/mixed_regime.py [N]   (N = 128 by default, a few minutes;
256 matches the benchmark and takes much longer)
"""

import sys

import numpy as np

from kinetic_ar.bench import knudsen_profile, run_problem

n = int(sys.argv[1]) if len(sys.argv) > 1 else 128
a0 = 11.0
rho = {}
for cfl in (1.0, 2.0):
    res = run_problem("mixed_regime", {"n": n, "a0": a0, "cfl": cfl})
    rho[cfl] = res.state.moments(res.grid).rho
    print(f"CFL {cfl}: {res.steps} steps, mean SVD rank {res.mean_ranks()[1]:.1f}, "
          f"drift {res.conservation_drift().max():.1e}")

# %% time-step independence
print("max |rho(CFL 1) - rho(CFL 2)|:", np.abs(rho[1.0] - rho[2.0]).max())

# %% where the gas is kinetic
x = res.grid.x_centers
eps = knudsen_profile(x, 1e-6, a0)
print("cells with eps > 0.1:", int(np.count_nonzero(eps > 0.1)), "of", len(x))
