"""Locally macroscopic conservative (LoMaC) correction.

The provisional low-rank solution ``f*`` closes the implicit moment system;
the converged moments ``U`` then replace the Maxwellian part of ``f*``:
``f = f* - M[U(f*)] + M[U]``.
"""

from __future__ import annotations

from typing import Optional

from .grid import PhaseGrid
from .kinetic import DistributionView, MomentField, moments_from_lowrank
from .lowrank import SvdMatrix
from .macro import FluxClosure, half_sums_dense, half_sums_lowrank, maxwellian_split_flux


def boundary_ghost_fluxes(boundary, grid: PhaseGrid):
    """Split fluxes of the (left, right) inflow Maxwellians, as WENO ghost values.

    The ghost cells hold the sampled inflow distribution, so their fluxes use
    the same midpoint half sums as interior cells. The analytic half moments
    differ from these by O(dv^2) (kink of v^+ at v = 0), which would show up
    as a spurious boundary flux jump.
    """
    if boundary is None:
        return None, None
    v = grid.v_centers
    prof = [mf.maxwellian_dense(v)[0] for mf in boundary]
    gp = tuple(half_sums_dense(p, grid, "+") for p in prof)
    gm = tuple(half_sums_dense(p, grid, "-") for p in prof)
    return gp, gm


def build_closure(f_star: SvdMatrix, grid: PhaseGrid, bc: str = "periodic",
                  boundary=None, star_moments: Optional[MomentField] = None):
    """Fixed part of the split fluxes and ``U(f*)`` (the Newton initial guess)."""
    mf = star_moments if star_moments is not None else moments_from_lowrank(f_star, grid)
    fixed_plus = half_sums_lowrank(f_star, grid, "+") - maxwellian_split_flux(mf, "+")
    fixed_minus = half_sums_lowrank(f_star, grid, "-") - maxwellian_split_flux(mf, "-")
    gp, gm = boundary_ghost_fluxes(boundary, grid) if bc == "fixed" else (None, None)
    closure = FluxClosure(fixed_plus, fixed_minus, grid, bc, gp, gm, provisional=f_star)
    return closure, mf


def correct(f_star: SvdMatrix, U_converged, grid: PhaseGrid,
            star_moments: Optional[MomentField] = None, ghost=None) -> DistributionView:
    """Corrected distribution ``f* - M[U(f*)] + M[U]`` as a lazy view."""
    if not isinstance(U_converged, MomentField):
        U_converged = MomentField.from_packed(U_converged)
    mf = star_moments if star_moments is not None else moments_from_lowrank(f_star, grid)
    return DistributionView(grid, base=f_star,
                            maxwellian_terms=((-1.0, mf), (1.0, U_converged)),
                            ghost=ghost)
