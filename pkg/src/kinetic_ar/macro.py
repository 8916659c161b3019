"""Implicit conservative solver for the moment system.

Kinetic flux vector splitting with analytic half-range Maxwellian moments,
fifth-order WENO-JS interface reconstruction, residual assembly for one
DIRK stage and a Jacobian-free Newton-Krylov driver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.special import erfc

from .grid import PhaseGrid
from .kinetic import MomentField, PositivityError, _check_positive
from .lowrank import SvdMatrix

WENO_JS_EPS = 1e-6


class NewtonError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _sign(side) -> float:
    if side in ("+", 1, "plus"):
        return 1.0
    if side in ("-", -1, "minus"):
        return -1.0
    raise ValueError(f"side must be '+' or '-', got {side!r}")


def half_moments_maxwellian(rho, u, T, side) -> np.ndarray:
    """Integrals of M, M v, M v^2, M v^3 over v > 0 (side '+') or v < 0 (side '-').

    Uses the recursion I_{n+1} = u I_n + n T I_{n-1} (+/- T M(0) for n = 0),
    obtained by integrating (v - u) v^n M by parts on the half line.
    Returns an array of shape ``broadcast(rho, u, T).shape + (4,)``.
    """
    s = _sign(side)
    rho, u, T = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho, u, T)))
    if np.any(~(rho > 0)) or np.any(~(T > 0)):
        raise PositivityError("half moments need rho > 0 and T > 0")
    i0 = 0.5 * rho * erfc(-s * u / np.sqrt(2.0 * T))
    m0 = rho / np.sqrt(2.0 * np.pi * T) * np.exp(-u * u / (2.0 * T))
    i1 = u * i0 + s * T * m0
    i2 = u * i1 + T * i0
    i3 = u * i2 + 2.0 * T * i1
    return np.stack([i0, i1, i2, i3], axis=-1)


def maxwellian_split_flux(mf: MomentField, side) -> np.ndarray:
    """Split flux triplet (<v M>, <v^2 M>, <v^3 M / 2>) on one half line, nx x 3."""
    h = half_moments_maxwellian(mf.rho, mf.u, mf.temperature, side)
    return np.stack([h[:, 1], h[:, 2], 0.5 * h[:, 3]], axis=-1)


def _flux_weights(grid: PhaseGrid, side) -> np.ndarray:
    v = grid.v_centers
    vs = np.maximum(v, 0.0) if _sign(side) > 0 else np.minimum(v, 0.0)
    return np.vstack([vs, vs**2, 0.5 * vs**3])


def half_sums_dense(f, grid: PhaseGrid, side) -> np.ndarray:
    """Midpoint half-range flux sums of velocity profiles ``f[..., nv]``, shape (..., 3)."""
    return grid.dv * np.asarray(f, dtype=float) @ _flux_weights(grid, side).T


def half_sums_lowrank(f: SvdMatrix, grid: PhaseGrid, side) -> np.ndarray:
    """Midpoint half-range flux sums ``dv * U S V^T w`` for w = (v, v^2, v^3/2), nx x 3.

    A cell centred exactly at v = 0 carries zero weight in every component,
    so the two sides always add up to the full-range sums.
    """
    if f.shape != grid.shape:
        raise ValueError("distribution shape does not match grid")
    if f.r == 0:
        return np.zeros((grid.nx, 3))
    w = _flux_weights(grid, side)
    return grid.dv * (f.u * f.sigma) @ (f.v.T @ w.T)


# --- WENO-JS reconstruction ---------------------------------------------

def _weno_js_left(fm2, fm1, f0, fp1, fp2):
    """Left-biased fifth-order value at the right face of the centre cell."""
    q0 = (2 * fm2 - 7 * fm1 + 11 * f0) / 6.0
    q1 = (-fm1 + 5 * f0 + 2 * fp1) / 6.0
    q2 = (2 * f0 + 5 * fp1 - fp2) / 6.0
    b0 = 13 / 12 * (fm2 - 2 * fm1 + f0) ** 2 + 0.25 * (fm2 - 4 * fm1 + 3 * f0) ** 2
    b1 = 13 / 12 * (fm1 - 2 * f0 + fp1) ** 2 + 0.25 * (fm1 - fp1) ** 2
    b2 = 13 / 12 * (f0 - 2 * fp1 + fp2) ** 2 + 0.25 * (3 * f0 - 4 * fp1 + fp2) ** 2
    a0 = 0.1 / (WENO_JS_EPS + b0) ** 2
    a1 = 0.6 / (WENO_JS_EPS + b1) ** 2
    a2 = 0.3 / (WENO_JS_EPS + b2) ** 2
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)


def _pad(cells, bc, ghost_left, ghost_right, n=3):
    if bc == "periodic":
        return np.concatenate([cells[-n:], cells, cells[:n]], axis=0)
    gl = np.broadcast_to(np.asarray(ghost_left, dtype=float), (n,) + cells.shape[1:])
    gr = np.broadcast_to(np.asarray(ghost_right, dtype=float), (n,) + cells.shape[1:])
    return np.concatenate([gl, cells, gr], axis=0)


def weno_flux_reconstruct(flux_plus, flux_minus, bc="periodic", ghost_plus=None,
                          ghost_minus=None) -> np.ndarray:
    """Interface fluxes at x_{i+1/2}, i = -1..nx-1, shape (nx+1) x ncomp.

    The positive part is reconstructed from cells i-2..i+2, the negative part
    from cells i-1..i+3 (mirrored stencil). For ``bc="fixed"``, ``ghost_plus``
    and ``ghost_minus`` are ``(left, right)`` pairs of per-component values
    held in the three ghost cells on each side.
    """
    fp = np.asarray(flux_plus, dtype=float)
    fm = np.asarray(flux_minus, dtype=float)
    nx = fp.shape[0]
    if bc == "periodic":
        P = _pad(fp, bc, None, None)
        M = _pad(fm, bc, None, None)
    else:
        if ghost_plus is None:
            ghost_plus = (fp[0], fp[-1])
        if ghost_minus is None:
            ghost_minus = (fm[0], fm[-1])
        P = _pad(fp, bc, *ghost_plus)
        M = _pad(fm, bc, *ghost_minus)
    # padded index of cell i is i + 3; interface i+1/2 for i = -1..nx-1
    i = np.arange(-1, nx) + 3
    plus = _weno_js_left(P[i - 2], P[i - 1], P[i], P[i + 1], P[i + 2])
    minus = _weno_js_left(M[i + 3], M[i + 2], M[i + 1], M[i], M[i - 1])
    return plus + minus


# --- closure, residual and Newton-Krylov ---------------------------------

@dataclass
class FluxClosure:
    """Fixed non-Maxwellian part of the split fluxes for one stage solve.

    ``fixed_plus``/``fixed_minus`` hold the half-range sums of the provisional
    distribution minus the analytic half moments of its own Maxwellian
    (nx x 3 each). ``ghost_plus``/``ghost_minus`` carry inflow states for
    fixed boundaries.
    """

    fixed_plus: np.ndarray
    fixed_minus: np.ndarray
    grid: PhaseGrid
    bc: str = "periodic"
    ghost_plus: Optional[tuple] = None
    ghost_minus: Optional[tuple] = None
    provisional: object = field(default=None, repr=False)

    def full_correction(self) -> np.ndarray:
        """Sum of both sides of the fixed part (nx x 3)."""
        return self.fixed_plus + self.fixed_minus


def split_fluxes(U: MomentField, closure: FluxClosure):
    fp = closure.fixed_plus + maxwellian_split_flux(U, "+")
    fm = closure.fixed_minus + maxwellian_split_flux(U, "-")
    return fp, fm


def flux_divergence(U: MomentField, closure: FluxClosure) -> np.ndarray:
    """``(F_{i+1/2} - F_{i-1/2}) / dx`` for the closed flux, shape 3 x nx."""
    fp, fm = split_fluxes(U, closure)
    fhat = weno_flux_reconstruct(fp, fm, closure.bc, closure.ghost_plus, closure.ghost_minus)
    return ((fhat[1:] - fhat[:-1]) / closure.grid.dx).T


@dataclass
class StageContext:
    """Data fixed during one stage solve.

    ``prior`` is ``sum_{l<k} a_{k,l} * divergence_l`` (packed, length 3 nx).
    """

    U_old: np.ndarray
    prior: np.ndarray
    dt: float
    a_kk: float


def assemble_residual(U_trial, U_old, stage_context: StageContext, closure: FluxClosure,
                      dt_coeffs=None) -> np.ndarray:
    """Stage residual ``U - U_old + dt (a_kk div F(U) + sum_{l<k} a_kl div_l)``.

    ``dt_coeffs`` = (dt, a_kk) overrides the values stored in the context.
    Raises PositivityError when U_trial has nonpositive density or temperature.
    """
    dt, a_kk = dt_coeffs if dt_coeffs is not None else (stage_context.dt, stage_context.a_kk)
    U_trial = np.asarray(U_trial, dtype=float)
    res = U_trial - np.asarray(U_old, dtype=float)
    if dt == 0:
        return res
    mf = MomentField.from_packed(U_trial)
    div = flux_divergence(mf, closure).ravel()
    return res + dt * (a_kk * div + stage_context.prior)


@dataclass
class JfnkReport:
    newton_iters: int = 0
    krylov_iters_per_newton: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    final_residual_norm: float = math.inf
    converged: bool = False
    stagnated: bool = False
    backtracks: int = 0

    @property
    def total_krylov(self) -> int:
        return int(sum(self.krylov_iters_per_newton))


def jfnk_solve(G: Callable, U_init, newton_tol=1e-14, krylov_tol=1e-6, max_newton=30,
               max_krylov=200, perturbation=None, restart=30, roundoff_floor=0.0,
               max_halvings=8):
    """Newton's method with finite-difference Jacobian-vector products and GMRES.

    ``J v ~ (G(U + h v) - G(U)) / h`` with ``h = perturbation (1 + |U|) / |v|``.
    Trial states violating positivity are pulled back by step halving. The
    iteration stops when ``|G| <= newton_tol``; if it stalls (less than a
    halving of the residual) below ``roundoff_floor`` it stops with
    ``stagnated`` set instead of failing.
    """
    if perturbation is None:
        perturbation = math.sqrt(np.finfo(float).eps)
    U = np.array(U_init, dtype=float)
    n = U.size
    g = G(U)
    norm = float(np.linalg.norm(g))
    report = JfnkReport(residual_history=[norm])
    while norm > newton_tol:
        if report.newton_iters >= max_newton:
            report.final_residual_norm = norm
            raise NewtonError(f"Newton did not converge in {max_newton} iterations "
                              f"(|G| = {norm:.3e})", report)
        unorm = float(np.linalg.norm(U))
        U_base, g_base = U, g

        def matvec(vec, U_base=U_base, g_base=g_base, unorm=unorm):
            vec = np.ravel(vec)
            vn = float(np.linalg.norm(vec))
            if vn == 0.0:
                return np.zeros(n)
            h = perturbation * (1.0 + unorm) / vn
            return (G(U_base + h * vec) - g_base) / h

        count = [0]

        def cb(_):
            count[0] += 1

        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        cycles = max(1, -(-max_krylov // restart))
        dU, _info = gmres(op, -g, rtol=krylov_tol, atol=0.0, restart=restart,
                          maxiter=cycles, callback=cb, callback_type="pr_norm")
        report.krylov_iters_per_newton.append(count[0])
        report.newton_iters += 1

        lam = 1.0
        for _ in range(max_halvings + 1):
            try:
                g_new = G(U + lam * dU)
                break
            except PositivityError:
                lam *= 0.5
                report.backtracks += 1
        else:
            report.final_residual_norm = norm
            raise NewtonError("Newton step violates positivity after step halving", report)
        U = U + lam * dU
        new_norm = float(np.linalg.norm(g_new))
        report.residual_history.append(new_norm)
        stalled = new_norm > 0.5 * norm
        g, norm = g_new, new_norm
        if stalled and norm <= roundoff_floor:
            report.stagnated = True
            break
    report.final_residual_norm = norm
    report.converged = norm <= newton_tol
    return U, report
