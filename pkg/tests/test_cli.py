import json
import math
import struct
from pathlib import Path

import numpy as np
import pytest

from lcdflow.cli import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    ConfigError,
    RunConfig,
    load_checkpoint,
    main,
    parse_config,
    run_command,
    save_checkpoint,
    serialize_config,
)
from lcdflow.fields import Grid
from lcdflow.model import Params
from lcdflow.scenarios import build_initial_state


def test_parse_minimal_config():
    cfg = parse_config("scenario = rest\n")
    assert cfg.scenario == "rest"
    assert cfg.n == 32 and cfg.dim == 2
    assert cfg.dt == pytest.approx(1e-3)
    assert cfg.backend == "spectral"
    assert cfg.diag_interval == 1


def test_parse_scenario_defaults_then_overrides():
    cfg = parse_config("scenario = variable-density-2d\nn = 16\n")
    assert cfg.n == 16  # explicit wins
    assert cfg.m1 == pytest.approx(0.75)  # scenario default
    assert cfg.t_end == pytest.approx(1.0)


def test_parse_comments_and_blank_lines():
    text = "# full-line comment\n\nscenario = rest  # trailing\n"
    assert parse_config(text).scenario == "rest"


def test_parse_negative_dt_names_key_and_line():
    with pytest.raises(ConfigError) as err:
        parse_config("scenario = rest\ndt = -0.1\n")
    msg = str(err.value)
    assert "dt" in msg and "line 2" in msg


def test_parse_unknown_key():
    with pytest.raises(ConfigError) as err:
        parse_config("scenario = rest\nwhatever = 3\n")
    assert "line 2" in str(err.value) and "whatever" in str(err.value)


def test_parse_malformed_value():
    with pytest.raises(ConfigError) as err:
        parse_config("scenario = rest\nn = many\n")
    assert "line 2" in str(err.value)


def test_parse_duplicate_key():
    with pytest.raises(ConfigError) as err:
        parse_config("scenario = rest\nscenario = twin\n")
    assert "duplicate" in str(err.value)


def test_parse_missing_scenario():
    with pytest.raises(ConfigError) as err:
        parse_config("n = 32\n")
    assert "scenario" in str(err.value)


def test_parse_bad_backend():
    with pytest.raises(ConfigError):
        parse_config("scenario = rest\nbackend = fancy\n")


def test_config_roundtrip():
    cfg = parse_config(
        "scenario = variable-density-2d\nn = 16\ndt = 0.002\nseed = 7\n"
        "backend = both\ngalerkin_modes = 12\noutput_dir = somewhere\n"
    )
    again = parse_config(serialize_config(cfg))
    assert again == cfg


def checkpoint_state():
    grid = Grid(dim=2, n=16)
    params = Params(m1=0.75, m2=1.25, dt=1e-3, t_end=0.5)
    return build_initial_state("variable-density-2d", grid, params, seed=3)


def test_checkpoint_roundtrip_bitexact(tmp_path):
    state = checkpoint_state()
    path = tmp_path / "state.lcdchk"
    save_checkpoint(state, path)
    loaded = load_checkpoint(path, dt=state.params.dt, t_end=state.params.t_end)
    assert loaded.t == state.t
    assert loaded.params.eta == state.params.eta
    assert np.array_equal(loaded.rho.values, state.rho.values)
    for a, b in zip(loaded.u + loaded.d, state.u + state.d):
        assert np.array_equal(a.values, b.values)


def test_checkpoint_layout(tmp_path):
    state = checkpoint_state()
    path = tmp_path / "state.lcdchk"
    save_checkpoint(state, path)
    blob = path.read_bytes()
    assert blob[:8] == CHECKPOINT_MAGIC == b"LCDFLOW1"
    dim, n = struct.unpack_from("<II", blob, 8)
    assert (dim, n) == (2, 16)
    length, t, eta, m1, m2 = struct.unpack_from("<ddddd", blob, 16)
    assert length == pytest.approx(2 * math.pi)
    assert (m1, m2) == (0.75, 1.25)
    assert len(blob) == 8 + 8 + 40 + 5 * 16 * 16 * 8


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.lcdchk"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    state = checkpoint_state()
    path = tmp_path / "state.lcdchk"
    save_checkpoint(state, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def run_with(text, tmp_path, name="out", resume=None):
    out = tmp_path / name
    cfg = parse_config(text + f"output_dir = {out}\n")
    status = run_command(cfg, resume_path=resume)
    return status, out


def test_rest_run_writes_zero_series(tmp_path):
    status, out = run_with(
        "scenario = rest\nt_end = 0.02\ndiag_interval = 5\n", tmp_path
    )
    assert status == 0
    lines = (out / "series.csv").read_text().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    assert len(rows) >= 3
    for row in rows:
        for col in ("e_kin", "e_dir", "e_pen", "dissipation", "total",
                    "phi2", "phi_tilde2", "energy_residual"):
            assert abs(float(row[col])) <= 1e-18
    summary = json.loads((out / "summary.json").read_text())
    assert summary["density_bounds"] and summary["divergence_free"]
    assert summary["mass_drift_ok"] and summary["energy_monotone"]


def test_run_determinism_same_seed(tmp_path):
    text = "scenario = variable-density-2d\nn = 16\nt_end = 0.01\nseed = 11\n"
    _, out_a = run_with(text, tmp_path, "a")
    _, out_b = run_with(text, tmp_path, "b")
    assert (out_a / "series.csv").read_bytes() == (out_b / "series.csv").read_bytes()


def test_run_seed_changes_output(tmp_path):
    base = "scenario = variable-density-2d\nn = 16\nt_end = 0.005\n"
    _, out_a = run_with(base + "seed = 1\n", tmp_path, "a")
    _, out_b = run_with(base + "seed = 2\n", tmp_path, "b")
    assert (out_a / "series.csv").read_bytes() != (out_b / "series.csv").read_bytes()


def test_resume_reproduces_series(tmp_path):
    full = (
        "scenario = variable-density-2d\nn = 16\ndt = 0.001\nt_end = 0.05\n"
        "diag_interval = 5\nseed = 4\n"
    )
    _, out_full = run_with(full, tmp_path, "full")

    first_half = full.replace("t_end = 0.05", "t_end = 0.025")
    _, out_part = run_with(first_half, tmp_path, "part")
    status, out_part = run_with(
        full, tmp_path, "part", resume=out_part / "checkpoint_final.lcdchk"
    )
    assert status == 0
    assert (out_full / "series.csv").read_bytes() == (
        out_part / "series.csv"
    ).read_bytes()


def test_resume_grid_mismatch(tmp_path):
    _, out = run_with("scenario = rest\nt_end = 0.005\n", tmp_path, "a")
    status, _ = run_with(
        "scenario = rest\nn = 64\nt_end = 0.01\n",
        tmp_path,
        "b",
        resume=out / "checkpoint_final.lcdchk",
    )
    assert status == 1


def test_periodic_checkpoints_written(tmp_path):
    status, out = run_with(
        "scenario = rest\nt_end = 0.02\ncheckpoint_interval = 10\n", tmp_path
    )
    assert status == 0
    assert (out / "checkpoint_000010.lcdchk").exists()
    assert (out / "checkpoint_final.lcdchk").exists()


def test_backend_both_agreement(tmp_path):
    status, out = run_with(
        "scenario = taylor-green-2d\nn = 16\nt_end = 0.02\ndiag_interval = 2\n"
        "backend = both\n",
        tmp_path,
    )
    assert status == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["backend_agreement"] <= 1e-3
    assert (out / "series.csv").exists()
    assert (out / "series_galerkin.csv").exists()


def test_backend_galerkin_alone(tmp_path):
    status, out = run_with(
        "scenario = taylor-green-2d\nn = 16\nt_end = 0.01\nbackend = galerkin\n"
        "galerkin_modes = 24\n",
        tmp_path,
    )
    assert status == 0
    assert (out / "series.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["galerkin_modes"] == 24


def test_twin_mode_outputs(tmp_path):
    status, out = run_with(
        "scenario = twin\nn = 16\nt_end = 0.02\ndiag_interval = 5\n"
        "twin_eps = 1e-6\n",
        tmp_path,
    )
    assert status == 0
    summary = json.loads((out / "summary.json").read_text())
    assert np.isfinite(summary["gronwall_slope"])
    assert summary["twin_final_divergence"] >= 0.0
    twin_lines = (out / "twin.csv").read_text().splitlines()
    assert twin_lines[0] == "t,divergence"
    assert len(twin_lines) >= 3


def test_run_command_failure_exit_code(tmp_path):
    status, _ = run_with(
        "scenario = taylor-green-2d\nn = 16\namplitude = 1e6\nt_end = 0.01\n",
        tmp_path,
    )
    assert status == 1


def test_main_bad_config_path(tmp_path, capsys):
    status = main(["--config", str(tmp_path / "missing.cfg")])
    assert status == 2
    assert "config error" in capsys.readouterr().err


def test_main_end_to_end(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    out = tmp_path / "out"
    cfg_path.write_text(
        f"scenario = rest\nt_end = 0.005\noutput_dir = {out}\n"
    )
    assert main(["--config", str(cfg_path)]) == 0
    assert (out / "summary.json").exists()
