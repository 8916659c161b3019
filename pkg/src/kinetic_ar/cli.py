"""``kinetic-ar`` command line: single benchmark runs and refinement/scaling studies."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .bench import (PROBLEMS, build_problem, convergence_study, emit_outputs, get_spec,
                    scaling_study)
from .grid import ConfigError, parse_config_file
from .integrator import StepError, run
from .kinetic import PositivityError

# flag name -> (key in overrides, type)
_SOLVER_FLAGS = {
    "eps_c": float, "eps_s": float, "max_rank": int, "newton_tol": float,
    "krylov_tol": float, "max_newton": int, "max_krylov": int, "jfnk_perturbation": float,
    "seed": int, "n_candidates": int, "tableau": str, "stage_form": str,
}
_PROBLEM_FLAGS = {"nx": int, "nv": int, "cfl": float, "epsilon": float, "a0": float,
                  "t_final": float}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--problem", choices=PROBLEMS, help="benchmark problem (default consistent_ic)")
    p.add_argument("--config", type=Path, help="INI file with [solver] and [problem] sections")
    for name, typ in {**_PROBLEM_FLAGS, **_SOLVER_FLAGS}.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--out-dir", type=Path, default=None)
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinetic-ar",
        description="Adaptive-rank semi-Lagrangian BGK solver: benchmarks and studies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one benchmark and write CSV/JSON outputs")
    _add_common(run_p)
    run_p.add_argument("--output-times", type=float, nargs="*", default=(),
                       help="extra snapshot times written to moments.csv")
    run_p.add_argument("--plots", action="store_true", help="also write SVG plots (matplotlib)")

    st = sub.add_parser("study", help="temporal/spatial refinement or scaling study")
    _add_common(st)
    st.add_argument("--axis", choices=("temporal", "spatial", "scaling"), required=True)
    st.add_argument("--levels", type=float, nargs="*", default=None,
                    help="CFL numbers (temporal) or mesh sizes N (spatial, scaling)")
    st.add_argument("--reference-policy", choices=("refined", "finest"), default="refined")
    st.add_argument("--reference-cfl", type=float, default=0.001)
    return parser


def _overrides(args) -> tuple:
    """Merge config file values and flags (flags win); returns (problem, overrides)."""
    over, problem = {}, None
    if args.config is not None:
        conf = parse_config_file(args.config)
        prob = dict(conf["problem"])
        problem = prob.pop("problem", None) or prob.pop("tag", None)
        for key in ("out_dir", "output_times", "plots"):
            prob.pop(key, None)
        over.update(prob)
        over.update(conf["solver"])
        if "knudsen" in over:
            over["epsilon"] = over.pop("knudsen")
    for name in {**_PROBLEM_FLAGS, **_SOLVER_FLAGS}:
        val = getattr(args, name)
        if val is not None:
            over[name] = val
    problem = args.problem or problem or "consistent_ic"
    return problem, over


def _say(args):
    return (lambda *_: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))


def cmd_run(args) -> int:
    problem, over = _overrides(args)
    say = _say(args)
    spec = get_spec(problem, over)
    grid, f0, cfg = build_problem(problem, over)
    say(f"{problem}: {grid.nx}x{grid.nv}, CFL {cfg.cfl}, t_final {spec.t_final}, "
        f"rank of initial data {f0.r}")

    def observer(rec):
        say(f"step {rec.step:5d}  t={rec.t:.5f}  rank {rec.cur_rank}/{rec.svd_rank}  "
            f"newton {rec.newton_iters:.2f}  krylov {rec.krylov_iters:.2f}")

    res = run(f0, spec.t_final, cfg, grid, observers=[observer], output_times=args.output_times)
    out = args.out_dir or Path("out") / problem
    paths = emit_outputs(res, out, spec, cfg, plots=args.plots)
    drift = res.conservation_drift()
    say(f"done: {res.steps} steps, conservation drift {drift.max():.2e}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_study(args) -> int:
    problem, over = _overrides(args)
    say = _say(args)
    out = args.out_dir or Path("out") / f"study_{args.axis}"
    out.mkdir(parents=True, exist_ok=True)
    if args.axis == "scaling":
        n_list = [int(n) for n in args.levels] if args.levels else (64, 128, 256, 512, 1024)
        t_final = over.pop("t_final", 0.001)
        cfl = over.pop("cfl", 1.0)
        rows, slope = scaling_study(problem if args.problem or args.config else "mixed_regime",
                                    n_list, t_final, cfl, over, progress=say)
        header = ["N", "wall_time_per_step", "mean_svd_rank", "steps"]
        table = [list(r) for r in rows]
        summary = {"axis": "scaling", "slope": slope}
    else:
        levels = args.levels
        if levels is not None and args.axis == "spatial":
            levels = [int(n) for n in levels]
        rows = convergence_study(problem, args.axis, levels, args.reference_policy, over,
                                 reference_cfl=args.reference_cfl, progress=say)
        header = ["level", "l1_error", "order", "svd_rank", "cur_rank", "newton", "krylov",
                  "steps"]
        table = [[r.level, r.error, "" if r.order is None else r.order, r.svd_rank,
                  r.cur_rank, r.newton, r.krylov, r.steps] for r in rows]
        summary = {"axis": args.axis, "rows": [asdict(r) for r in rows]}
    with open(out / "study.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(table)
    with open(out / "study.json", "w") as fh:
        json.dump({"problem": problem, "overrides": over, **summary}, fh, indent=2)
        fh.write("\n")
    for row in table:
        print(",".join(str(x) for x in row))
    if args.axis == "scaling" and summary["slope"] is not None:
        print(f"slope: {summary['slope']:.3f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_study(args)
    except (ConfigError, ValueError) as exc:
        print(f"kinetic-ar: error: {exc}", file=sys.stderr)
        return 2
    except (StepError, PositivityError) as exc:
        print(f"kinetic-ar: solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
