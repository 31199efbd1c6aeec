import csv
import json

import numpy as np
import pytest

from cuspflow.cli import DEFAULTS, config_hash, main, resolve_config, run_command
from cuspflow.errors import ConfigError


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


DENSITY = {"seed": 1, "params": {"E_min": -1.0, "E_max": 1.0, "points": 21, "stability": False}}


def test_density_scan_value(tmp_path):
    run = run_command("density", DENSITY, tmp_path / "a", plots=False)
    rows = read_csv(tmp_path / "a" / "density.csv")
    mid = [r for r in rows if float(r["E"]) == 0.0][0]
    assert abs(float(mid["rho"]) - 1 / np.pi) <= 1e-6
    assert run.passed
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["config"]["params"]["grid_step"] == DEFAULTS["density"]["params"]["grid_step"]
    assert report["config_hash"] == config_hash(report["config"])


def test_density_rerun_is_byte_identical(tmp_path):
    run_command("density", DENSITY, tmp_path / "a")
    run_command("density", DENSITY, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "timing.json")
    assert "density.png" in files and "support.json" in files
    for name in files:
        if name.endswith(".png"):
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # RFC 4180 line endings
    assert b"\r\n" in (tmp_path / "a" / "density.csv").read_bytes()


@pytest.mark.parametrize("command, raw", [
    ("density", {"seed": 1, "params": {"E_min": 1.0, "E_max": 1.0}}),
    ("density", {"seed": 1, "colour": "red"}),
    ("density", {"seed": 1, "params": {"nonsense": 1}}),
    ("density", {"params": {}}),
    ("density", {"seed": -1}),
    ("locallaw", {"seed": 1, "trials": 0}),
    ("flow", {"seed": 1, "params": {"T": 0.2, "t_start": 0.3}}),
    ("density", {"seed": 1, "command": "flow"}),
])
def test_schema_errors(command, raw):
    with pytest.raises(ConfigError):
        resolve_config(raw, command)


def test_config_error_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, {"params": {}})
    assert main(["density", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_seed_override_and_cli_exit(tmp_path, capsys):
    path = write_config(tmp_path, {"params": DENSITY["params"]})
    assert main(["density", "--config", path, "--seed", "5", "--out", str(tmp_path / "o"),
                 "--no-plots"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "normalization" in out
    cfg = json.loads((tmp_path / "o" / "config.json").read_text())
    assert cfg["seed"] == 5
    assert not (tmp_path / "o" / "density.png").exists()


def test_flow_single_row_at_terminal_time(tmp_path):
    raw = {"seed": 0, "params": {"T": 0.1, "t_start": 0.1, "characteristics": 3, "gap": None}}
    run_command("flow", raw, tmp_path / "f", plots=False)
    rows = read_csv(tmp_path / "f" / "trajectories.csv")
    assert len({r["char"] for r in rows}) == 3
    assert len(rows) == 3


def test_flow_reference_run(tmp_path):
    raw = {"seed": 0, "model": {"N": 2, "class": "complex",
                                "A": {"kind": "two-level", "params": {"d": 1.3}},
                                "S": {"variant": "wigner-scalar"}},
           "params": {"T": 0.1, "characteristics": 5, "gap_steps": 6}}
    run = run_command("flow", raw, tmp_path / "f", plots=False)
    names = {c["name"]: c for c in run.checks}
    assert names["conservation"]["pass"] and names["domain nesting"]["pass"]
    assert names["gap comparison"]["pass"]
    rows = read_csv(tmp_path / "f" / "trajectories.csv")
    assert max(float(r["residual"]) for r in rows) <= 1e-5


def test_locallaw_report_fields_and_determinism(tmp_path):
    raw = {"seed": 3, "N": [64, 128], "trials": 10, "params": {"n_eta": 4}}
    a = run_command("locallaw", raw, tmp_path / "a", plots=False)
    b = run_command("locallaw", raw, tmp_path / "b", plots=False)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    names = [c["name"] for c in a.checks]
    assert "average N-slope" in names and "isotropic N-slope" in names
    assert any(n.startswith("average eta-slope") for n in names)
    assert a.report()["config_hash"] == b.report()["config_hash"]


def test_exclusion_and_band_counts(tmp_path):
    raw = {"seed": 2, "N": [128], "trials": 20}
    run = run_command("exclusion", raw, tmp_path / "e", plots=False)
    assert run.passed, run.checks


def test_deloc_runs_and_reports(tmp_path):
    raw = {"seed": 2, "N": [64], "trials": 5}
    run = run_command("deloc", raw, tmp_path / "d", plots=False)
    assert [c["name"] for c in run.checks] == ["delocalization N=64"]
    assert "N=64" in run.metrics


def test_rigidity_runs_and_reports(tmp_path):
    raw = {"seed": 2, "N": [128], "trials": 5}
    run = run_command("rigidity", raw, tmp_path / "r", plots=False)
    assert "N=128" in run.metrics
    assert (tmp_path / "r" / "rigidity.csv").exists()


def test_measure_mode_exits_zero(tmp_path):
    # tiny N and trials: the gated checks may fail, the measurement mode still exits 0
    path = write_config(tmp_path, {"seed": 2, "N": [64], "trials": 5})
    assert main(["deloc", "--config", path, "--out", str(tmp_path / "m"), "--measure",
                 "--no-plots"]) == 0


def test_zigzag_passes(tmp_path):
    raw = {"seed": 4, "N": [8], "model": {"N": 8, "class": "complex"}, "trials": 400}
    run = run_command("zigzag", raw, tmp_path / "z", plots=False)
    assert run.passed, run.checks
    names = [c["name"] for c in run.checks]
    assert "s_1(t) = t" in names and "covariance identity" in names


CUSP = {"N": [128], "trials": 10, "model": {**DEFAULTS["cusp"]["model"], "N": 128},
        "params": {"min_points": 1, "kernel_step": 0.5}}


def test_cusp_is_seed_independent(tmp_path):
    a = run_command("cusp", {**CUSP, "seed": 1}, tmp_path / "a", plots=False)
    b = run_command("cusp", {**CUSP, "seed": 2}, tmp_path / "b", plots=False)
    assert a.metrics["d_cusp"] == b.metrics["d_cusp"]
    assert abs(a.metrics["d_cusp"] - 1) < 1e-4
    checks = {c["name"]: c for c in a.checks}
    assert checks["kernel self-convergence"]["pass"]
    assert checks["cusp exponent"]["pass"]
    assert "pearcey sup distance" in checks
    assert (tmp_path / "a" / "kernel.csv").read_bytes() == (tmp_path / "b" / "kernel.csv").read_bytes()


def test_cusp_rejects_real_class(tmp_path):
    raw = {**CUSP, "seed": 1, "model": {**CUSP["model"], "class": "real"}}
    with pytest.raises(ConfigError):
        run_command("cusp", raw, tmp_path / "c", plots=False)
