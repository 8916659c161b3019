import csv
import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from kinetic_ar.bench import (PROBLEMS, RIEMANN_LEFT, RIEMANN_RIGHT, _config_echo,
                              build_problem, convergence_study, emit_outputs, get_spec,
                              knudsen_profile, run_problem, scaling_study, trig_resample)
from kinetic_ar.cli import main
from kinetic_ar.grid import ConfigError
from kinetic_ar.kinetic import moments_from_lowrank

GOLDEN = Path(__file__).parent / "golden"
SMALL = {"nx": 16, "nv": 32}


@pytest.mark.parametrize("tag", PROBLEMS)
def test_default_configs_match_golden(tag):
    want = json.loads((GOLDEN / f"{tag}.json").read_text())
    spec = get_spec(tag)
    grid, f0, cfg = build_problem(tag)
    echo = {"problem": json.loads(json.dumps(spec.echo())),
            "config": json.loads(json.dumps(_config_echo(cfg)))}
    for section, fields in want.items():
        for key, val in fields.items():
            assert echo[section][key] == val, (section, key)
    assert grid.shape == (spec.nx, spec.nv)
    assert f0.shape == grid.shape


def test_initial_conditions():
    grid, f0, _ = build_problem("consistent_ic")
    mf = moments_from_lowrank(f0, grid)
    x = grid.x_centers
    u0 = 0.1 * (np.exp(-(10 * x - 1) ** 2) - 2 * np.exp(-(10 * x + 3) ** 2))
    np.testing.assert_allclose(mf.rho, 1, atol=1e-8)
    np.testing.assert_allclose(mf.u, u0, atol=1e-8)
    np.testing.assert_allclose(mf.temperature, 1, atol=1e-8)

    grid, f0, _ = build_problem("riemann", {"n": 64})
    mf = moments_from_lowrank(f0, grid)
    left = grid.x_centers < 0.5
    for sel, (rho, u, T) in ((left, RIEMANN_LEFT), (~left, RIEMANN_RIGHT)):
        np.testing.assert_allclose(mf.rho[sel], rho, rtol=1e-3)
        np.testing.assert_allclose(mf.u[sel], u, atol=1e-3)
        np.testing.assert_allclose(mf.temperature[sel], T, rtol=1e-2)

    grid, f0, cfg = build_problem("mixed_regime", {"n": 64})
    mf = moments_from_lowrank(f0, grid)
    x = grid.x_centers
    np.testing.assert_allclose(mf.rho, 1 + 0.875 * np.sin(2 * np.pi * x), rtol=1e-6)
    np.testing.assert_allclose(mf.u, 0, atol=1e-6)
    # two drifting halves: T = T0 + u0^2
    np.testing.assert_allclose(mf.temperature, 0.5 + 0.4 * np.sin(2 * np.pi * x) + 0.5625,
                               rtol=1e-5)
    np.testing.assert_allclose(cfg.knudsen_field(grid), knudsen_profile(x, 1e-6, 11.0))


def test_knudsen_profile():
    assert knudsen_profile(0.0, 1e-6, 40.0) == pytest.approx(1e-6 + np.tanh(1.0), rel=1e-14)
    assert knudsen_profile(0.0, 1e-6, 11.0) == pytest.approx(0.7615952, abs=1e-6)
    # the slow transition is still kinetic-ish at the edge; the fast one reaches eps0
    assert knudsen_profile(0.5, 1e-6, 11.0) == pytest.approx(
        1e-6 + 0.5 * (np.tanh(-4.5) + np.tanh(6.5)), rel=1e-12)
    assert knudsen_profile(0.5, 1e-6, 40.0) == pytest.approx(1e-6, rel=1e-6)
    for a0 in (11.0, 40.0):
        x = np.linspace(-0.5, 0.5, 11)
        np.testing.assert_allclose(knudsen_profile(x, 1e-6, a0), knudsen_profile(-x, 1e-6, a0))
    spec = get_spec("mixed_regime", {"a0": 40.0})
    assert spec.a0 == 40.0


def test_unknown_problem_and_overrides():
    with pytest.raises(ConfigError):
        get_spec("sod")
    spec = get_spec("riemann", {"n": 32, "knudsen": 1e-6, "tableau": "backward_euler"})
    assert (spec.nx, spec.nv, spec.epsilon) == (32, 32, 1e-6)
    assert spec.config(spec.grid()).tableau.name == "backward_euler"


def _small_run(out, **kw):
    over = {**SMALL, "t_final": 0.02, **kw}
    spec = get_spec("consistent_ic", over)
    grid, f0, cfg = build_problem("consistent_ic", over)
    res = run_problem("consistent_ic", over, output_times=[0.005, 0.01])
    return emit_outputs(res, out, spec, cfg), res


def test_emit_outputs(tmp_path):
    paths, res = _small_run(tmp_path / "a")
    rows = list(csv.reader(open(paths["moments"])))
    assert rows[0] == ["t", "x", "rho", "u", "T"]
    assert len(rows) == 1 + 3 * SMALL["nx"]
    diag = list(csv.reader(open(paths["diagnostics"])))
    assert len(diag) == 1 + 4 * res.steps
    summary = json.loads(Path(paths["summary"]).read_text())
    assert summary["steps"] == res.steps
    assert max(summary["conservation"].values()) <= 1e-12
    assert summary["config"]["seed"] == 42
    raw = Path(paths["moments"]).read_bytes()
    assert b"\r\n" not in raw
    paths_b, _ = _small_run(tmp_path / "b")
    for name in ("moments", "diagnostics"):
        assert Path(paths[name]).read_bytes() == Path(paths_b[name]).read_bytes()


def test_emit_outputs_errors(tmp_path):
    _, res = _small_run(tmp_path / "a")
    res.records = []
    with pytest.raises(ValueError):
        emit_outputs(res, tmp_path / "b")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    _, res = _small_run(tmp_path / "c")
    with pytest.raises(OSError, match="file"):
        emit_outputs(res, blocker / "sub")


def test_plots(tmp_path):
    pytest.importorskip("matplotlib")
    res = run_problem("consistent_ic", {**SMALL, "t_final": 0.01})
    paths = emit_outputs(res, tmp_path, plots=True)
    for name in ("plot_moments", "plot_ranks"):
        text = Path(paths[name]).read_text()
        assert text.lstrip().startswith("<?xml") and "<svg" in text


def test_trig_resample_is_exact_for_trig_polynomials():
    x = (np.arange(32) + 0.5) / 32
    y = (np.arange(8) + 0.5) / 8
    f = lambda t: 1 + np.sin(2 * np.pi * t) - 0.3 * np.cos(6 * np.pi * t)
    np.testing.assert_allclose(trig_resample(f(x), x, y, 1.0), f(y), atol=1e-13)


def test_convergence_study_validation():
    with pytest.raises(ValueError):
        convergence_study("consistent_ic", "spatial", levels=[16, 32])
    with pytest.raises(ValueError):
        convergence_study("riemann", "spatial", levels=[16, 32, 64])
    with pytest.raises(ValueError):
        convergence_study("consistent_ic", "diagonal")


def test_temporal_study_small():
    rows = convergence_study("consistent_ic", "temporal", levels=[2.0, 1.0, 0.5],
                             overrides={**SMALL, "t_final": 0.05}, reference_cfl=0.0625)
    assert [r.level for r in rows] == [2.0, 1.0, 0.5]
    assert [r.steps for r in rows] == [2, 4, 8]
    assert rows[0].order is None and rows[1].order is not None
    assert rows[0].error > rows[1].error > rows[2].error > 0


def test_scaling_study_small():
    rows, slope = scaling_study("mixed_regime", [16, 32], t_final=0.0005)
    assert len(rows) == 2 and slope is not None
    assert all(r[1] > 0 for r in rows)
    rows, slope = scaling_study("mixed_regime", [16], t_final=0.0005)
    assert len(rows) == 1 and slope is None
    with pytest.raises(ValueError):
        scaling_study("mixed_regime", [32, 16])


def test_cli_run_and_config_precedence(tmp_path, capsys):
    conf = tmp_path / "run.ini"
    conf.write_text("[solver]\ncfl = 2.0\nknudsen = 0.001\n\n[problem]\nproblem = consistent_ic\n"
                    "nx = 16\nnv = 32\nt_final = 0.01\n")
    out = tmp_path / "out"
    code = main(["run", "--config", str(conf), "--cfl", "1.0", "--out-dir", str(out), "--quiet",
                 "--output-times", "0.005"])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["cfl"] == 1.0            # flag beats file
    assert summary["config"]["knudsen"] == 0.001      # file value kept
    assert summary["problem"]["nx"] == 16
    assert len((out / "moments.csv").read_text().splitlines()) == 1 + 2 * 16
    assert "summary:" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    base = ["run", "--nx", "16", "--nv", "32", "--t-final", "0.01", "--quiet",
            "--out-dir", str(tmp_path)]
    assert main(base + ["--tableau", "nope"]) == 2
    assert main(base + ["--eps-c", "2"]) == 2
    assert main(base + ["--newton-tol", "1e-30", "--max-newton", "1"]) == 3
    with pytest.raises(SystemExit):
        main(["run", "--problem", "sod"])


def test_cli_study(tmp_path, capsys):
    out = tmp_path / "t"
    code = main(["study", "--axis", "temporal", "--nx", "16", "--nv", "32", "--t-final", "0.02",
                 "--levels", "4", "2", "1", "--reference-cfl", "0.25", "--out-dir", str(out),
                 "--quiet"])
    assert code == 0
    rows = list(csv.reader(open(out / "study.csv")))
    assert rows[0][:3] == ["level", "l1_error", "order"] and len(rows) == 4
    data = json.loads((out / "study.json").read_text())
    assert data["axis"] == "temporal" and len(data["rows"]) == 3
    out = tmp_path / "s"
    code = main(["study", "--axis", "scaling", "--levels", "16", "32", "--t-final", "0.0005",
                 "--out-dir", str(out), "--quiet"])
    assert code == 0
    assert "slope:" in capsys.readouterr().out
    assert len((out / "study.csv").read_text().splitlines()) == 3


def test_console_script():
    exe = shutil.which("kinetic-ar")
    if exe is None:
        pytest.skip("package not installed")
    out = subprocess.run([exe, "--help"], capture_output=True, text=True, check=True)
    assert "run" in out.stdout and "study" in out.stdout
