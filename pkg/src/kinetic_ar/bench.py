"""Benchmark problems, refinement and scaling studies, and output writers.

Three problems are defined:

``consistent_ic``
    Maxwellian with rho = T = 1 and a two-bump velocity profile on [-1, 1],
    periodic, t = 0.04.
``riemann``
    Sod-type two-state data on [0, 1] with fixed inflow boundaries, t = 0.16.
``mixed_regime``
    Bimodal data on [-0.5, 0.5] with a Knudsen number that drops from O(1)
    at the centre to 1e-6 at the edges, periodic, t = 0.45.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import ConfigError, PhaseGrid, SolverConfig, compute_dt, make_grid
from .integrator import SimulationResult, run
from .kinetic import maxwellian
from .lowrank import FunctionOracle, SvdMatrix, compress

PROBLEMS = ("consistent_ic", "riemann", "mixed_regime")

RIEMANN_LEFT = (2.25, 0.0, 1.125)
RIEMANN_RIGHT = (3.0 / 7.0, 0.0, 1.0 / 6.0)


def knudsen_profile(x, eps0=1e-6, a0=11.0):
    """``eps0 + (tanh(1 - a0 x) + tanh(1 + a0 x)) / 2``."""
    x = np.asarray(x, dtype=float)
    return eps0 + 0.5 * (np.tanh(1.0 - a0 * x) + np.tanh(1.0 + a0 * x))


@dataclass(frozen=True)
class BenchmarkSpec:
    tag: str
    x_bounds: tuple
    v_bounds: tuple = (-10.0, 10.0)
    bc: str = "periodic"
    t_final: float = 0.04
    nx: int = 128
    nv: int = 128
    cfl: float = 4.0
    eps_c: float = 1e-9
    eps_s: float = 1e-8
    epsilon: float = 1e-2           # constant Knudsen number (unused for mixed_regime)
    eps0: float = 1e-6
    a0: Optional[float] = None
    extra: dict = field(default_factory=dict)   # further SolverConfig fields

    def grid(self) -> PhaseGrid:
        return make_grid(*self.x_bounds, *self.v_bounds, self.nx, self.nv)

    def knudsen(self, grid: PhaseGrid):
        if self.tag == "mixed_regime":
            return knudsen_profile(grid.x_centers, self.eps0, self.a0)
        return float(self.epsilon)

    def initial_entries(self, grid: PhaseGrid, rows, cols) -> np.ndarray:
        x = grid.x_centers[rows]
        v = grid.v_centers[cols]
        if self.tag == "consistent_ic":
            u0 = 0.1 * (np.exp(-(10 * x - 1) ** 2) - 2 * np.exp(-(10 * x + 3) ** 2))
            return maxwellian(1.0, u0, 1.0, v)
        if self.tag == "riemann":
            left = x < 0.5
            fl = maxwellian(*RIEMANN_LEFT, v)
            fr = maxwellian(*RIEMANN_RIGHT, v)
            return np.where(left, fl, fr)
        rho = 1.0 + 0.875 * np.sin(2 * np.pi * x)
        T = 0.5 + 0.4 * np.sin(2 * np.pi * x)
        return 0.5 * (maxwellian(rho, 0.75, T, v) + maxwellian(rho, -0.75, T, v))

    def config(self, grid: PhaseGrid) -> SolverConfig:
        extra = dict(self.extra)
        extra.setdefault("max_rank", min(256, grid.nx, grid.nv))
        return SolverConfig(knudsen=self.knudsen(grid), cfl=self.cfl, eps_c=self.eps_c,
                            eps_s=self.eps_s, bc=self.bc, **extra)

    def echo(self) -> dict:
        d = asdict(self)
        d["x_bounds"] = list(self.x_bounds)
        d["v_bounds"] = list(self.v_bounds)
        return d


_DEFAULTS = {
    "consistent_ic": dict(x_bounds=(-1.0, 1.0), t_final=0.04, nx=128, nv=128, cfl=4.0,
                          eps_c=1e-9, eps_s=1e-8, epsilon=1e-2),
    "riemann": dict(x_bounds=(0.0, 1.0), bc="fixed", t_final=0.16, nx=256, nv=256, cfl=4.0,
                    eps_c=1e-4, eps_s=1e-3, epsilon=1e-2),
    "mixed_regime": dict(x_bounds=(-0.5, 0.5), t_final=0.45, nx=256, nv=256, cfl=1.0,
                         eps_c=1e-8, eps_s=1e-7, eps0=1e-6, a0=11.0),
}

_SPEC_KEYS = {"nx", "nv", "cfl", "eps_c", "eps_s", "epsilon", "eps0", "a0", "t_final",
              "x_bounds", "v_bounds"}


def get_spec(tag: str, overrides: Optional[dict] = None) -> BenchmarkSpec:
    """Benchmark definition for ``tag``; ``overrides`` may set mesh, tolerances,
    Knudsen parameters, ``t_final`` or any other SolverConfig field."""
    if tag not in _DEFAULTS:
        raise ConfigError(f"unknown problem {tag!r}; known: {', '.join(PROBLEMS)}")
    kw = dict(_DEFAULTS[tag])
    extra = {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key == "n":
            kw["nx"] = kw["nv"] = int(val)
        elif key in _SPEC_KEYS:
            kw[key] = val
        elif key == "knudsen":
            kw["epsilon"] = val
        elif key == "bc":
            kw["bc"] = val
        else:
            extra[key] = val
    return BenchmarkSpec(tag=tag, extra=extra, **kw)


def build_problem(tag: str, overrides: Optional[dict] = None):
    """Mesh, compressed initial distribution and solver configuration for ``tag``."""
    spec = get_spec(tag, overrides)
    grid = spec.grid()
    cfg = spec.config(grid)
    oracle = FunctionOracle(lambda r, c: spec.initial_entries(grid, r, c), grid.shape)
    f0, _ = compress(oracle, cfg.eps_c, cfg.eps_s, cfg.max_rank,
                     np.random.SeedSequence([cfg.seed, 0xF0]), cfg.n_candidates)
    return grid, f0, cfg


def run_problem(tag: str, overrides: Optional[dict] = None, observers=(), output_times=()):
    spec = get_spec(tag, overrides)
    grid, f0, cfg = build_problem(tag, overrides)
    return run(f0, spec.t_final, cfg, grid, observers=observers, output_times=output_times)


# --- studies --------------------------------------------------------------

def l1_error(a, b, dx: float) -> float:
    return float(dx * np.sum(np.abs(np.asarray(a) - np.asarray(b))))


def trig_resample(values, x_from: np.ndarray, x_to: np.ndarray, period: float) -> np.ndarray:
    """Trigonometric interpolation of periodic samples onto other points."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    coef = np.fft.rfft(values) / n
    k = np.arange(len(coef))
    phase = 2 * np.pi * np.outer(np.asarray(x_to) - x_from[0], k) / period
    w = np.full(len(coef), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return (np.cos(phase) * coef.real - np.sin(phase) * coef.imag) @ w


@dataclass
class StudyRow:
    level: float                 # CFL (temporal) or N (spatial)
    error: float
    order: Optional[float]
    svd_rank: float
    cur_rank: float
    newton: float
    krylov: float
    steps: int
    conservation: list


def _orders(rows, ratio_of):
    for prev, cur in zip(rows, rows[1:]):
        if prev.error > 0 and cur.error > 0:
            cur.order = math.log(prev.error / cur.error) / math.log(ratio_of(prev, cur))
    return rows


def _row(level, err, res: SimulationResult) -> StudyRow:
    cur, svd = res.mean_ranks()
    nw, kr = res.mean_iterations()
    return StudyRow(level, err, None, svd, cur, nw, kr, res.steps,
                    [float(q) for q in res.conservation_drift()])


def convergence_study(problem: str = "consistent_ic", axis: str = "spatial",
                      levels: Optional[Sequence] = None, reference_policy: str = "refined",
                      overrides: Optional[dict] = None, reference_cfl: float = 0.001,
                      reference_factor: int = 4, progress=None):
    """Refinement study returning a list of StudyRow.

    ``axis="temporal"``: the mesh is fixed (default 128^2) and ``levels`` are
    CFL numbers (default 12.8 halved down to 0.1); the reference is the same
    mesh at ``reference_cfl``.

    ``axis="spatial"``: ``levels`` are cell counts N = nx = nv (default
    16..128) at fixed CFL. ``reference_policy="refined"`` computes the
    reference on ``reference_factor`` times the finest N with tolerances
    tightened tenfold; ``"finest"`` uses the finest level itself (which is
    then dropped from the table). Cell centres do not nest under refinement,
    so reference densities are moved to coarse centres by trigonometric
    interpolation (periodic problems only).

    The error is the L1 norm of the density difference at the final time and
    the order is ``log(e_coarse / e_fine) / log(refinement ratio)``.
    """
    overrides = dict(overrides or {})
    say = progress or (lambda *_: None)
    if axis == "temporal":
        levels = list(levels) if levels is not None else [12.8 / 2 ** k for k in range(8)]
        if len(levels) < 3:
            raise ValueError("need at least 3 levels")
        ref = run_problem(problem, {**overrides, "cfl": reference_cfl})
        say(f"reference CFL {reference_cfl}: {ref.steps} steps")
        rho_ref = ref.state.moments(ref.grid).rho
        rows = []
        for cfl in levels:
            res = run_problem(problem, {**overrides, "cfl": cfl})
            rows.append(_row(cfl, l1_error(res.state.moments(res.grid).rho, rho_ref,
                                           res.grid.dx), res))
            say(f"CFL {cfl}: error {rows[-1].error:.3e}")
        return _orders(rows, lambda p, c: p.level / c.level)

    if axis != "spatial":
        raise ValueError(f"unknown axis {axis!r}")
    levels = [int(n) for n in (levels if levels is not None else (16, 32, 64, 128))]
    if len(levels) < 3:
        raise ValueError("need at least 3 levels")
    spec = get_spec(problem, overrides)
    if spec.bc != "periodic":
        raise ValueError("spatial study needs a periodic problem")
    if reference_policy == "refined":
        n_ref = reference_factor * max(levels)
        ref = run_problem(problem, {**overrides, "n": n_ref, "eps_c": spec.eps_c / 10,
                                    "eps_s": spec.eps_s / 10})
    elif reference_policy == "finest":
        ref = None
    else:
        raise ValueError(f"unknown reference policy {reference_policy!r}")
    results = [(n, run_problem(problem, {**overrides, "n": n})) for n in levels]
    if ref is None:
        ref = results[-1][1]
        results = results[:-1]
    say(f"reference N = {ref.grid.nx}: {ref.steps} steps")
    rho_ref = ref.state.moments(ref.grid).rho
    period = ref.grid.x_max - ref.grid.x_min
    rows = []
    for n, res in results:
        target = trig_resample(rho_ref, ref.grid.x_centers, res.grid.x_centers, period)
        rows.append(_row(n, l1_error(res.state.moments(res.grid).rho, target, res.grid.dx), res))
        say(f"N {n}: error {rows[-1].error:.3e}")
    return _orders(rows, lambda p, c: c.level / p.level)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def scaling_study(problem: str = "mixed_regime", n_list: Sequence[int] = (64, 128, 256, 512, 1024),
                  t_final: float = 0.001, cfl: float = 1.0, overrides: Optional[dict] = None,
                  progress=None):
    """Wall time per step for N = nx = nv; returns (rows, slope or None)."""
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be ascending")
    say = progress or (lambda *_: None)
    rows = []
    for n in n_list:
        res = run_problem(problem, {**(overrides or {}), "n": n, "cfl": cfl, "t_final": t_final})
        wall = float(np.mean([r.wall_time for r in res.records]))
        rows.append((n, wall, res.mean_ranks()[1], res.steps))
        say(f"N {n}: {wall:.4f} s/step over {res.steps} steps")
    slope = loglog_slope([r[0] for r in rows], [r[1] for r in rows]) if len(rows) > 1 else None
    return rows, slope


# --- output ---------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def emit_outputs(result: SimulationResult, out_dir, spec: Optional[BenchmarkSpec] = None,
                 cfg: Optional[SolverConfig] = None, plots: bool = False) -> dict:
    """Write moments.csv, diagnostics.csv, summary.json (and SVG plots).

    Returns a mapping of output names to paths. CSV files contain no timing
    data, so identical runs produce identical files.
    """
    if not result.records:
        raise ValueError("empty simulation result")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {"moments": out / "moments.csv", "diagnostics": out / "diagnostics.csv",
             "summary": out / "summary.json"}
    grid = result.grid
    try:
        with open(paths["moments"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "rho", "u", "T"])
            for t, mf in result.snapshots:
                for i in range(grid.nx):
                    w.writerow([_fmt(t), _fmt(grid.x_centers[i]), _fmt(mf.rho[i]),
                                _fmt(mf.u[i]), _fmt(mf.temperature[i])])
        with open(paths["diagnostics"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "stage", "t", "newton_iters", "total_krylov_iters",
                        "final_residual", "cur_rank", "svd_rank", "mass", "momentum", "energy"])
            for rec in result.records:
                for k, st in enumerate(rec.stages, start=1):
                    w.writerow([rec.step, k, _fmt(rec.t), st.jfnk.newton_iters,
                                st.jfnk.total_krylov, _fmt(st.jfnk.final_residual_norm),
                                st.k2, st.r2, *(_fmt(q) for q in rec.totals)])
        cur, svd = result.mean_ranks()
        nw, kr = result.mean_iterations()
        drift = result.conservation_drift()
        summary = {
            "problem": spec.echo() if spec is not None else None,
            "config": _config_echo(cfg) if cfg is not None else None,
            "steps": result.steps,
            "t_final": result.t,
            "conservation": {"mass": float(drift[0]), "momentum": float(drift[1]),
                             "energy": float(drift[2])},
            "mean_cur_rank": cur, "mean_svd_rank": svd,
            "max_svd_rank": int(max(r.svd_rank for r in result.records)),
            "mean_newton_per_stage": nw, "mean_krylov_per_newton": kr,
            "mean_wall_time_per_step": float(np.mean([r.wall_time for r in result.records])),
        }
        with open(paths["summary"], "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"writing outputs in {out}: {exc}") from exc
    if plots:
        paths.update(_plots(result, out))
    return {k: str(v) for k, v in paths.items()}


def _config_echo(cfg: SolverConfig) -> dict:
    k = np.asarray(cfg.knudsen)
    return {
        "knudsen": float(k) if k.ndim == 0 else {"min": float(k.min()), "max": float(k.max())},
        "cfl": cfg.cfl, "eps_c": cfg.eps_c, "eps_s": cfg.eps_s, "max_rank": cfg.max_rank,
        "newton_tol": cfg.newton_tol, "krylov_tol": cfg.krylov_tol,
        "max_newton": cfg.max_newton, "max_krylov": cfg.max_krylov, "bc": cfg.bc,
        "tableau": cfg.tableau.name, "jfnk_perturbation": cfg.jfnk_perturbation,
        "seed": cfg.seed, "n_candidates": cfg.n_candidates, "stage_form": cfg.stage_form,
    }


def _plots(result: SimulationResult, out: Path) -> dict:
    os.environ.setdefault("MPLBACKEND", "Agg")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = result.grid.x_centers
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for t, mf in result.snapshots:
        for ax, q in zip(axes, (mf.rho, mf.u, mf.temperature)):
            ax.plot(x, q, label=f"t = {t:g}")
    for ax, name in zip(axes, ("rho", "u", "T")):
        ax.set_xlabel("x")
        ax.set_title(name)
    axes[0].legend()
    fig.tight_layout()
    p1 = out / "moments.svg"
    fig.savefig(p1)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    t = [r.t for r in result.records]
    ax.plot(t, [r.cur_rank for r in result.records], label="CUR")
    ax.plot(t, [r.svd_rank for r in result.records], label="SVD")
    ax.set_xlabel("t")
    ax.set_ylabel("rank")
    ax.legend()
    fig.tight_layout()
    p2 = out / "ranks.svg"
    fig.savefig(p2)
    plt.close(fig)
    return {"plot_moments": p1, "plot_ranks": p2}
