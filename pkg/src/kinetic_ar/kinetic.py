"""Pointwise kinetic physics on low-rank data.

Maxwellians, velocity moments of factored distributions, WENO interpolation
at characteristic feet and the entry oracles for the semi-Lagrangian
transport and BGK relaxation updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .grid import PhaseGrid
from .lowrank import EntryOracle, SvdMatrix

SQRT_2PI = np.sqrt(2.0 * np.pi)
WENO_EPS = 1e-6


class PositivityError(ArithmeticError):
    """Density or temperature became nonpositive."""

    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = cells


def _check_positive(rho, temperature, what="moments"):
    bad = np.flatnonzero(~(rho > 0) | ~(temperature > 0))
    if bad.size:
        raise PositivityError(
            f"nonpositive density/temperature in {what} at {bad.size} cell(s), first {bad[:5].tolist()}",
            cells=bad)


@dataclass(frozen=True)
class MomentField:
    """Per-cell conserved variables (rho, rho*u, E) and primitives (u, T)."""

    rho: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray
    u: np.ndarray
    temperature: np.ndarray

    @classmethod
    def from_conserved(cls, rho, momentum, energy, check=True):
        rho = np.asarray(rho, dtype=float)
        momentum = np.asarray(momentum, dtype=float)
        energy = np.asarray(energy, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = momentum / rho
            temperature = (2.0 * energy - momentum * u) / rho
        if check:
            _check_positive(rho, temperature)
        return cls(rho, momentum, energy, u, temperature)

    @classmethod
    def from_primitive(cls, rho, u, temperature, check=True):
        rho = np.asarray(rho, dtype=float)
        u = np.broadcast_to(np.asarray(u, dtype=float), rho.shape).copy()
        temperature = np.broadcast_to(np.asarray(temperature, dtype=float), rho.shape).copy()
        if check:
            _check_positive(rho, temperature)
        momentum = rho * u
        energy = 0.5 * (rho * u**2 + rho * temperature)
        return cls(rho, momentum, energy, u, temperature)

    @classmethod
    def from_packed(cls, packed, check=True):
        """Unpack a component-major vector ``[rho..., rho*u..., E...]``."""
        rho, momentum, energy = np.asarray(packed, dtype=float).reshape(3, -1)
        return cls.from_conserved(rho, momentum, energy, check=check)

    def packed(self) -> np.ndarray:
        return np.concatenate([self.rho, self.momentum, self.energy])

    def conserved(self) -> np.ndarray:
        """3 x nx array of (rho, rho*u, E)."""
        return np.vstack([self.rho, self.momentum, self.energy])

    @property
    def nx(self) -> int:
        return len(self.rho)

    @cached_property
    def _norm(self):
        return self.rho / np.sqrt(2.0 * np.pi * self.temperature)

    def maxwellian_block(self, rows, v) -> np.ndarray:
        """Maxwellian of cells ``rows`` at velocities ``v`` (broadcasting)."""
        T = self.temperature[rows]
        return self._norm[rows] * np.exp(-(v - self.u[rows]) ** 2 / (2.0 * T))

    def maxwellian_column(self, vj: float) -> np.ndarray:
        return self._norm * np.exp(-(vj - self.u) ** 2 / (2.0 * self.temperature))

    def maxwellian_dense(self, v) -> np.ndarray:
        v = np.asarray(v)[None, :]
        T = self.temperature[:, None]
        return self._norm[:, None] * np.exp(-(v - self.u[:, None]) ** 2 / (2.0 * T))


def maxwellian(rho, u, T, v):
    """``rho / sqrt(2 pi T) * exp(-(v - u)^2 / (2 T))``."""
    rho = np.asarray(rho, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(~(rho > 0)) or np.any(~(T > 0)):
        raise PositivityError("maxwellian needs rho > 0 and T > 0")
    out = rho / np.sqrt(2.0 * np.pi * T) * np.exp(-(np.asarray(v) - u) ** 2 / (2.0 * T))
    return out[()] if np.ndim(out) == 0 else out


def _raw_moments_lowrank(f: SvdMatrix, grid: PhaseGrid) -> np.ndarray:
    v = grid.v_centers
    w = np.vstack([np.ones_like(v), v, 0.5 * v * v])     # 3 x nv
    if f.r == 0:
        return np.zeros((3, grid.nx))
    return grid.dv * ((w @ f.v) * f.sigma) @ f.u.T     # 3 x nx


def moments_from_lowrank(f: SvdMatrix, grid: PhaseGrid, check=True) -> MomentField:
    """Midpoint-rule moments (rho, rho*u, E) of a factored distribution."""
    if f.shape != grid.shape:
        raise ValueError(f"distribution shape {f.shape} does not match grid {grid.shape}")
    rho, mom, en = _raw_moments_lowrank(f, grid)
    return MomentField.from_conserved(rho, mom, en, check=check)


def maxwellian_discrete_moments(mf: MomentField, grid: PhaseGrid) -> np.ndarray:
    """Midpoint-rule moments of a sampled Maxwellian (3 x nx)."""
    v = grid.v_centers
    m = mf.maxwellian_dense(v)
    w = np.vstack([np.ones_like(v), v, 0.5 * v * v])
    return grid.dv * (w @ m.T)


# --- WENO interpolation -------------------------------------------------

_SUB_NODES = [np.arange(r - 2, r + 2) for r in range(3)]   # offsets of the 3 cubic substencils


def _smoothness_matrices():
    """Quadratic forms for sum_{l=1..3} int_0^1 (d^l p / dxi^l)^2 dxi of each cubic."""
    P = np.polynomial.Polynomial
    mats = []
    for nodes in _SUB_NODES:
        basis = []
        for m, xm in enumerate(nodes):
            p = P([1.0])
            for n, xn in enumerate(nodes):
                if n != m:
                    p = p * P([-xn, 1.0]) / (xm - xn)
            basis.append(p)
        B = np.zeros((4, 4))
        for l in (1, 2, 3):
            d = [b.deriv(l) for b in basis]
            for a in range(4):
                for b in range(4):
                    q = (d[a] * d[b]).integ()
                    B[a, b] += q(1.0) - q(0.0)
        mats.append(B)
    return np.array(mats)


_BETA = _smoothness_matrices()


def linear_weights(alpha):
    """Optimal weights of the three cubics reproducing the 6-point interpolant."""
    alpha = np.asarray(alpha, dtype=float)
    d0 = (2.0 - alpha) * (3.0 - alpha) / 20.0
    d2 = (alpha + 1.0) * (alpha + 2.0) / 20.0
    d1 = (alpha + 2.0) * (3.0 - alpha) / 10.0
    return np.stack([d0, d1, d2], axis=-1)


def _lagrange_coefficients():
    """Power-basis coefficients of the cubic Lagrange basis, shape (3, 4, 4)."""
    out = np.zeros((3, 4, 4))
    for r, nodes in enumerate(_SUB_NODES):
        V = np.vander(nodes.astype(float), 4, increasing=True)
        out[r] = np.linalg.inv(V).T      # row m: coefficients of basis m in 1, a, a^2, a^3
    return out


_LAG = _lagrange_coefficients()


def weno_point_values(stencil, alpha, nonlinear=True):
    """Interpolate at ``k + alpha`` from values at k-2..k+3 (``stencil[..., 6]``).

    ``alpha`` in [0, 1) broadcasts against ``stencil.shape[:-1]``.
    """
    stencil = np.asarray(stencil, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    d = linear_weights(alpha)
    pw = np.stack([np.ones_like(alpha), alpha, alpha * alpha, alpha ** 3], axis=-1)
    L = np.einsum("...p,rmp->...rm", pw, _LAG)
    subs = np.lib.stride_tricks.sliding_window_view(stencil, 4, axis=-1)
    p = np.sum(subs * L, axis=-1)
    if not nonlinear:
        return np.sum(d * p, axis=-1)
    beta = np.einsum("...ra,rab,...rb->...r", subs, _BETA, subs)
    w = d / (WENO_EPS + beta) ** 2
    return np.sum(w * p, axis=-1) / np.sum(w, axis=-1)


def _split_shift(shift):
    """Foot at i - shift: integer offset m = floor(-shift) and fraction alpha."""
    shift = np.asarray(shift, dtype=float)
    m = np.floor(-shift)
    alpha = -shift - m
    return m.astype(np.int64), alpha


def weno5_interpolate(values, shift, bc="periodic", ghost=None, nonlinear=True):
    """Values of the grid function at ``x_i - shift * dx`` for every cell i.

    Periodic data wrap around; for ``bc="fixed"`` points beyond the ends take
    the ghost values ``(left, right)`` (default: the end values).
    """
    values = np.asarray(values, dtype=float)
    nx = len(values)
    m, alpha = _split_shift(shift)
    m = int(m)
    if alpha == 0.0:
        idx = np.arange(nx) + m
        return _gather_1d(values, idx, bc, ghost)
    idx = (np.arange(nx) + m)[:, None] + np.arange(-2, 4)[None, :]
    return weno_point_values(_gather_1d(values, idx, bc, ghost), alpha, nonlinear)


def _gather_1d(values, idx, bc, ghost):
    nx = len(values)
    if bc == "periodic":
        return values[idx % nx]
    left, right = (values[0], values[-1]) if ghost is None else ghost
    out = values[np.clip(idx, 0, nx - 1)]
    out = np.where(idx < 0, left, out)
    return np.where(idx >= nx, right, out)


# --- Distribution views -------------------------------------------------

@dataclass(frozen=True)
class DistributionView:
    """Lazily evaluated ``scale_i * (base_coef * base + sum_m sign_m * M_m)``.

    ``ghost`` holds the (left, right) velocity profiles used for characteristic
    feet outside a non-periodic domain.
    """

    grid: PhaseGrid
    base: Optional[SvdMatrix] = None
    maxwellian_terms: tuple = ()
    base_coef: float = 1.0
    row_scale: Optional[np.ndarray] = None
    ghost: Optional[tuple] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.grid.shape

    def entries(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        out = np.zeros(np.broadcast(rows, cols).shape)
        if self.base is not None and self.base.r:
            b = self.base
            out += self.base_coef * np.sum(b.u[rows] * b.sigma * b.v[cols], axis=-1)
        if self.maxwellian_terms:
            v = self.grid.v_centers[cols]
            for sign, mf in self.maxwellian_terms:
                out += sign * mf.maxwellian_block(rows, v)
        if self.row_scale is not None:
            out *= self.row_scale[rows]
        return out

    def column(self, j: int) -> np.ndarray:
        out = np.zeros(self.grid.nx)
        if self.base is not None and self.base.r:
            out += self.base_coef * self.base.col(j)
        vj = self.grid.v_centers[j]
        for sign, mf in self.maxwellian_terms:
            out += sign * mf.maxwellian_column(vj)
        if self.row_scale is not None:
            out *= self.row_scale
        return out

    def row(self, i: int) -> np.ndarray:
        return self.entries(np.full(self.grid.nv, i), np.arange(self.grid.nv))

    def to_dense(self) -> np.ndarray:
        g = self.grid
        out = np.zeros(g.shape)
        if self.base is not None and self.base.r:
            out += self.base_coef * self.base.to_dense()
        for sign, mf in self.maxwellian_terms:
            out += sign * mf.maxwellian_dense(g.v_centers)
        if self.row_scale is not None:
            out *= self.row_scale[:, None]
        return out

    def ghost_values(self, j):
        if self.ghost is None:
            return None
        left, right = self.ghost
        return left[j], right[j]

    def raw_moments(self) -> np.ndarray:
        """Midpoint moments (3 x nx); Maxwellian terms use the sampled values."""
        g = self.grid
        out = np.zeros((3, g.nx))
        if self.base is not None and self.base.r:
            out += self.base_coef * _raw_moments_lowrank(self.base, g)
        for sign, mf in self.maxwellian_terms:
            out += sign * maxwellian_discrete_moments(mf, g)
        if self.row_scale is not None:
            out *= self.row_scale
        return out

    def moments(self, check=True) -> MomentField:
        rho, mom, en = self.raw_moments()
        return MomentField.from_conserved(rho, mom, en, check=check)


def view_of(f: SvdMatrix, grid: PhaseGrid, ghost=None) -> DistributionView:
    return DistributionView(grid, base=f, ghost=ghost)


class TransportOracle(EntryOracle):
    """Entries ``sum_t w_t * view_t(x_i - v_j * tau_t, v_j)``.

    Columns are interpolated from the materialized column of each view and
    memoized; rows and scattered entries gather the 6-point stencils of
    every requested foot directly from the views.
    """

    def __init__(self, terms: Sequence, grid: PhaseGrid, bc: str = "periodic"):
        self.terms = [(float(w), view, float(tau)) for w, view, tau in terms]
        self.grid = grid
        self.bc = bc
        self.shape = grid.shape
        self._cols = {}
        self._shifts = [grid.v_centers * tau / grid.dx for _, _, tau in self.terms]

    def col(self, j):
        j = int(j)
        hit = self._cols.get(j)
        if hit is None:
            hit = np.zeros(self.grid.nx)
            for (w, view, _), s in zip(self.terms, self._shifts):
                hit += w * weno5_interpolate(view.column(j), s[j], self.bc, view.ghost_values(j))
            self._cols[j] = hit
        return hit.copy()

    def entries(self, rows, cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        nx = self.grid.nx
        out = np.zeros(rows.shape)
        for (w, view, _), s in zip(self.terms, self._shifts):
            m, alpha = _split_shift(s[cols])
            idx = (rows + m)[:, None] + np.arange(-2, 4)[None, :]
            cc = np.broadcast_to(cols[:, None], idx.shape)
            if self.bc == "periodic":
                vals = view.entries(idx % nx, cc)
            else:
                vals = view.entries(np.clip(idx, 0, nx - 1), cc)
                if view.ghost is not None:
                    left, right = view.ghost
                    vals = np.where(idx < 0, left[cc], vals)
                    vals = np.where(idx >= nx, right[cc], vals)
            exact = alpha == 0.0
            res = np.where(exact, vals[:, 2], 0.0)
            if not exact.all():
                interp = weno_point_values(vals[~exact], alpha[~exact])
                res[~exact] = interp
            out += w * res
        return out

    def row(self, i):
        nv = self.grid.nv
        return self.entries(np.full(nv, int(i)), np.arange(nv))


def sl_oracle(state: DistributionView, grid: PhaseGrid, dt_eff: float,
              bc: str = "periodic") -> TransportOracle:
    """Oracle of ``state`` traced back along characteristics for ``dt_eff``."""
    if dt_eff < 0:
        raise ValueError("dt_eff must be nonnegative")
    return TransportOracle([(1.0, state, dt_eff)], grid, bc)


class CollisionOracle(EntryOracle):
    """Entries ``(eps_i * tilde + a_kk_dt * M[tilde]) / (eps_i + a_kk_dt)``."""

    def __init__(self, tilde: SvdMatrix, tilde_moments: MomentField, grid: PhaseGrid,
                 a_kk_dt: float, knudsen):
        if not a_kk_dt > 0:
            raise ValueError("a_kk_dt must be positive")
        eps = np.broadcast_to(np.asarray(knudsen, dtype=float), (grid.nx,))
        self.tilde = tilde
        self.mf = tilde_moments
        self.grid = grid
        self.shape = grid.shape
        self.w_kin = eps / (eps + a_kk_dt)
        self.w_eq = a_kk_dt / (eps + a_kk_dt)

    def entries(self, rows, cols):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        t = self.tilde
        kin = np.sum(t.u[rows] * t.sigma * t.v[cols], axis=-1) if t.r else 0.0
        eq = self.mf.maxwellian_block(rows, self.grid.v_centers[cols])
        return self.w_kin[rows] * kin + self.w_eq[rows] * eq

    def col(self, j):
        kin = self.tilde.col(j) if self.tilde.r else 0.0
        return self.w_kin * kin + self.w_eq * self.mf.maxwellian_column(self.grid.v_centers[j])

    def row(self, i):
        kin = self.tilde.row(i) if self.tilde.r else 0.0
        eq = self.mf.maxwellian_block(i, self.grid.v_centers)
        return self.w_kin[i] * kin + self.w_eq[i] * eq


def collision_oracle(tilde, tilde_moments, grid, a_kk_dt, knudsen) -> CollisionOracle:
    return CollisionOracle(tilde, tilde_moments, grid, a_kk_dt, knudsen)
