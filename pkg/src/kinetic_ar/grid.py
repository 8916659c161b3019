"""Phase-space mesh, time-step rule, DIRK tableaux and solver configuration."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Union

import numpy as np


class GridError(ValueError):
    """Invalid mesh bounds or cell counts."""


class ConfigError(ValueError):
    """Invalid solver configuration."""


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform cell-centered tensor mesh on [x_min, x_max] x [v_min, v_max]."""

    x_min: float
    x_max: float
    v_min: float
    v_max: float
    nx: int
    nv: int
    dx: float
    dv: float
    x_centers: np.ndarray = field(repr=False)
    v_centers: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nv)

    @property
    def v_abs_max(self) -> float:
        return max(abs(self.v_min), abs(self.v_max))


def make_grid(x_min, x_max, v_min, v_max, nx, nv) -> PhaseGrid:
    if not (x_max > x_min and v_max > v_min):
        raise GridError(f"invalid bounds: x=[{x_min}, {x_max}], v=[{v_min}, {v_max}]")
    if int(nx) != nx or int(nv) != nv or nx < 8 or nv < 8:
        raise GridError(f"need integer nx, nv >= 8, got nx={nx}, nv={nv}")
    nx, nv = int(nx), int(nv)
    dx = (x_max - x_min) / nx
    dv = (v_max - v_min) / nv
    xc = x_min + (np.arange(nx) + 0.5) * dx
    vc = v_min + (np.arange(nv) + 0.5) * dv
    xc.flags.writeable = False
    vc.flags.writeable = False
    return PhaseGrid(float(x_min), float(x_max), float(v_min), float(v_max),
                     nx, nv, dx, dv, xc, vc)


def compute_dt(grid: PhaseGrid, cfl: float) -> float:
    """Time step ``cfl * dx / max|v|``."""
    if not cfl > 0:
        raise ConfigError(f"cfl must be positive, got {cfl}")
    return cfl * grid.dx / grid.v_abs_max


@dataclass(frozen=True)
class DirkTableau:
    """Butcher coefficients of a diagonally implicit Runge-Kutta method.

    Only stiffly accurate tableaux are accepted: the last row of ``a``
    equals ``b`` and ``c[-1] == 1``, so the step output is the last stage.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        c = np.array(self.c, dtype=float)
        s = len(b)
        if a.shape != (s, s) or c.shape != (s,):
            raise ConfigError("tableau shapes inconsistent")
        if np.any(np.triu(a, 1) != 0):
            raise ConfigError("DIRK matrix must be lower triangular")
        if np.any(np.diag(a) <= 0):
            raise ConfigError("DIRK diagonal entries must be positive")
        if not np.allclose(a[-1], b, atol=1e-14, rtol=0) or abs(c[-1] - 1) > 1e-14:
            raise ConfigError("tableau is not stiffly accurate")
        if not np.allclose(a.sum(axis=1), c, atol=1e-14, rtol=0):
            raise ConfigError("row sums of a must equal c")
        for name, arr in (("a", a), ("b", b), ("c", c)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def s(self) -> int:
        return len(self.b)

    def shu_osher_alpha(self) -> np.ndarray:
        """Weights ``alpha[k, l]`` (l < k) with ``sum_{l<k} a_kl Q_l = sum_l alpha_kl (Y_l - y_n) / dt``.

        Substituting the earlier stage equations removes every explicit
        right-hand-side evaluation, so stage k reads
        ``Y_k = y_n + sum_{l<k} alpha_kl (Y_l - y_n) + dt a_kk Q(Y_k)``.
        """
        s = self.s
        alpha = np.zeros((s, s))
        for k in range(1, s):
            alpha[k, :k] = np.linalg.solve(self.a[:k, :k].T, self.a[k, :k])
        return alpha


def backward_euler() -> DirkTableau:
    return DirkTableau([[1.0]], [1.0], [1.0], name="backward_euler")


def sa_dirk3() -> DirkTableau:
    """Four-stage, third-order, L-stable, stiffly accurate DIRK.

    Tableau from Hairer & Wanner, Solving ODEs II, Sec. IV.6 (also used as
    ``DIRK3`` in several stiff integrator libraries).
    """
    a = [[1 / 2, 0, 0, 0],
         [1 / 6, 1 / 2, 0, 0],
         [-1 / 2, 1 / 2, 1 / 2, 0],
         [3 / 2, -3 / 2, 1 / 2, 1 / 2]]
    return DirkTableau(a, a[-1], [1 / 2, 2 / 3, 1 / 2, 1.0], name="sa_dirk3")


def sa_dirk3_so() -> DirkTableau:
    """Four-stage, third-order, L-stable, stiffly accurate DIRK with diagonal
    0.325 and small negative Shu-Osher weights (largest magnitude 0.57).

    a21 and a31 are fixed, a32 is the root of the last third-order condition
    and the final row solves the remaining linear order conditions. Meant for
    ``stage_form="shu_osher"`` on discontinuous data at small Knudsen number.
    """
    g = 0.325
    a32 = -0.18394546975783269
    c = np.array([g, 0.5 + g, 0.25 + a32 + g])
    lhs = np.vstack([np.ones(3), c, c**2])
    b = np.linalg.solve(lhs, [1 - g, 1 / 2 - g, 1 / 3 - g])
    a = [[g, 0, 0, 0],
         [0.5, g, 0, 0],
         [0.25, a32, g, 0],
         [b[0], b[1], b[2], g]]
    return DirkTableau(a, a[-1], [*c, 1.0], name="sa_dirk3_so")


TABLEAUX = {"backward_euler": backward_euler, "sa_dirk3": sa_dirk3, "sa_dirk3_so": sa_dirk3_so}


def get_tableau(name: str) -> DirkTableau:
    try:
        return TABLEAUX[name]()
    except KeyError:
        raise ConfigError(f"unknown tableau {name!r}; known: {sorted(TABLEAUX)}") from None


Knudsen = Union[float, np.ndarray]


@dataclass(frozen=True)
class SolverConfig:
    knudsen: Knudsen = 1e-2
    cfl: float = 4.0
    eps_c: float = 1e-9
    eps_s: float = 1e-8
    max_rank: int = 256
    newton_tol: float = 1e-14
    krylov_tol: float = 1e-6
    max_newton: int = 30
    max_krylov: int = 200
    bc: str = "periodic"
    tableau: DirkTableau = field(default_factory=sa_dirk3)
    jfnk_perturbation: float = float(np.sqrt(np.finfo(float).eps))
    seed: int = 42
    n_candidates: int = 12
    stage_form: str = "butcher"      # or "shu_osher"

    def __post_init__(self):
        k = np.asarray(self.knudsen, dtype=float)
        if np.any(~np.isfinite(k)) or np.any(k <= 0):
            raise ConfigError("knudsen number must be strictly positive")
        if not self.cfl > 0:
            raise ConfigError("cfl must be positive")
        for name in ("eps_c", "eps_s"):
            val = getattr(self, name)
            if not 0 < val < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {val}")
        if self.max_rank < 1:
            raise ConfigError("max_rank must be >= 1")
        if self.bc not in ("periodic", "fixed"):
            raise ConfigError(f"bc must be 'periodic' or 'fixed', got {self.bc!r}")
        if self.stage_form not in ("butcher", "shu_osher"):
            raise ConfigError(f"stage_form must be 'butcher' or 'shu_osher', got {self.stage_form!r}")
        if isinstance(self.tableau, str):
            object.__setattr__(self, "tableau", get_tableau(self.tableau))

    def knudsen_field(self, grid: PhaseGrid) -> np.ndarray:
        k = np.asarray(self.knudsen, dtype=float)
        if k.ndim == 0:
            return np.full(grid.nx, float(k))
        if k.shape != (grid.nx,):
            raise ConfigError(f"knudsen field has shape {k.shape}, grid has nx={grid.nx}")
        return k

    def check_grid(self, grid: PhaseGrid) -> None:
        if self.max_rank > min(grid.nx, grid.nv):
            raise ConfigError(f"max_rank={self.max_rank} exceeds min(nx, nv)")
        self.knudsen_field(grid)

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


_FLOAT_KEYS = {"cfl", "eps_c", "eps_s", "newton_tol", "krylov_tol", "jfnk_perturbation"}
_INT_KEYS = {"max_rank", "max_newton", "max_krylov", "seed", "n_candidates"}


def parse_config_file(path) -> dict:
    """Read an INI-style key = value file.

    Recognized sections are ``[solver]`` (any SolverConfig field; ``knudsen``
    must be a scalar, ``tableau`` a registered name) and ``[problem]``
    (problem tag, mesh sizes, ``t_final``, ``a0``, output settings).
    Returns ``{"solver": {...}, "problem": {...}}`` with typed values.
    """
    parser = configparser.ConfigParser()
    path = Path(path)
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    out = {"solver": {}, "problem": {}}
    known = {f.name for f in fields(SolverConfig)}
    if parser.has_section("solver"):
        for key, raw in parser.items("solver"):
            if key not in known:
                raise ConfigError(f"unknown solver key {key!r} in {path}")
            if key in _FLOAT_KEYS or key == "knudsen":
                out["solver"][key] = float(raw)
            elif key in _INT_KEYS:
                out["solver"][key] = int(raw)
            else:
                out["solver"][key] = raw.strip()
    if parser.has_section("problem"):
        for key, raw in parser.items("problem"):
            raw = raw.strip()
            if key in ("nx", "nv"):
                out["problem"][key] = int(raw)
            elif key in ("t_final", "a0"):
                out["problem"][key] = float(raw)
            else:
                out["problem"][key] = raw
    return out
