"""Batch driver: config parsing, run orchestration, CSV/JSON outputs,
and binary checkpointing.

Runs are configured by a line-oriented ``key = value`` file (``#`` starts
a comment).  One process executes one run; outputs are ``series.csv``
(one row per diagnostics interval), ``summary.json`` (final norms, fitted
constants, invariant verdicts), and checkpoints that allow bit-exact
resumption of a spectral run.
"""

from __future__ import annotations

import argparse
import json
import math
import struct
import sys
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import galerkin, stepper
from .diagnostics import (
    SeriesRow,
    fit_log_slope,
    ladyzhenskaya_fit,
    series_row,
    twin_divergence,
)
from .fields import Field, Grid, h_seminorm, lp_norm
from .model import Params, SimState, SimulationError
from .scenarios import SCENARIOS, build_initial_state, twin_perturbation

CHECKPOINT_MAGIC = b"LCDFLOW1"


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class RunConfig:
    scenario: str
    dim: int = 2
    n: int = 32
    length: float = 2.0 * math.pi
    eta: float = 0.2
    m1: float = 0.75
    m2: float = 1.25
    dt: float = 1e-3
    t_end: float = 1.0
    backend: str = "spectral"
    diag_interval: int = 1
    output_dir: str = "out"
    seed: int = 0
    amplitude: float = 1.0
    twin_eps: float = 1e-6
    galerkin_modes: str = "full"
    checkpoint_interval: int = 0

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}"
            )
        if self.backend not in ("spectral", "galerkin", "both"):
            raise ConfigError(f"backend must be spectral, galerkin or both, "
                              f"got {self.backend!r}")
        positive = ("n", "length", "eta", "m1", "m2", "dt", "t_end",
                    "diag_interval", "amplitude", "twin_eps")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.galerkin_modes != "full":
            try:
                if int(self.galerkin_modes) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(
                    f"galerkin_modes must be 'full' or a positive integer, "
                    f"got {self.galerkin_modes!r}"
                ) from None

    def grid(self):
        return Grid(dim=self.dim, n=self.n, length=self.length)

    def params(self):
        return Params(eta=self.eta, m1=self.m1, m2=self.m2, dt=self.dt,
                      t_end=self.t_end)


_FIELD_TYPES = {f.name: f.type for f in dataclass_fields(RunConfig)}
_INT_KEYS = {"dim", "n", "diag_interval", "seed", "checkpoint_interval"}
_FLOAT_KEYS = {"length", "eta", "m1", "m2", "dt", "t_end", "amplitude", "twin_eps"}
_STR_KEYS = {"scenario", "backend", "output_dir", "galerkin_modes"}


def _convert(key, raw, lineno):
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: key '{key}' needs an integer, "
                              f"got {raw!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: key '{key}' needs a number, "
                              f"got {raw!r}") from None
    return raw


def parse_config(text):
    """Parse ``key = value`` lines into a RunConfig.

    Unknown keys, malformed values, and a missing ``scenario`` are all
    reported with their line number.  Defaults are the dataclass values,
    with per-scenario overrides for grid and solver parameters applied
    before explicit file values.
    """
    raw = {}
    lines = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for key '{key}'")
        raw[key] = _convert(key, value, lineno)
        lines[key] = lineno
    if "scenario" not in raw:
        raise ConfigError("missing required key 'scenario'")
    merged = dict(SCENARIOS[raw["scenario"]]["defaults"]) if raw["scenario"] in SCENARIOS else {}
    merged.update(raw)
    try:
        config = RunConfig(**merged)
        config.validate()
    except ConfigError as exc:
        # attach the offending line when the bad value came from the file
        msg = str(exc)
        for key, lineno in lines.items():
            if f"{key} " in msg or f"{key!r}" in msg or msg.startswith(key):
                raise ConfigError(f"line {lineno}: {msg}") from None
        raise
    return config


def serialize_config(config):
    """Canonical text form; parse_config(serialize_config(c)) == c."""
    out = []
    for f in dataclass_fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, float):
            value = repr(value)
        out.append(f"{f.name} = {value}")
    return "\n".join(out) + "\n"


def save_checkpoint(state, path):
    """Binary snapshot: magic, grid header, then raw little-endian arrays."""
    grid = state.grid
    p = state.params
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", grid.dim, grid.n))
        fh.write(struct.pack("<ddddd", grid.length, state.t, p.eta, p.m1, p.m2))
        fh.write(np.ascontiguousarray(state.rho.values, dtype="<f8").tobytes())
        for comp in state.u:
            fh.write(np.ascontiguousarray(comp.values, dtype="<f8").tobytes())
        for comp in state.d:
            fh.write(np.ascontiguousarray(comp.values, dtype="<f8").tobytes())


def load_checkpoint(path, dt=1e-3, t_end=1.0):
    """Read a checkpoint back into a SimState.

    dt and t_end are not stored in the file; the caller (the resume path)
    supplies them from its config.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    header = 8 + 8 + 5 * 8
    if len(blob) < header:
        raise CheckpointError(f"{path}: truncated header")
    dim, n = struct.unpack_from("<II", blob, 8)
    length, t, eta, m1, m2 = struct.unpack_from("<ddddd", blob, 16)
    try:
        grid = Grid(dim=dim, n=n, length=length)
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid grid header: {exc}") from exc
    n_fields = 1 + 2 * dim
    expected = header + n_fields * grid.size * 8
    if len(blob) != expected:
        raise CheckpointError(
            f"{path}: truncated file: {len(blob)} bytes, expected {expected}"
        )
    arrays = np.frombuffer(blob, dtype="<f8", offset=header).reshape(
        n_fields, *grid.shape
    )
    params = Params(eta=eta, m1=m1, m2=m2, dt=dt, t_end=t_end)
    rho = Field(grid, arrays[0].copy())
    u = tuple(Field(grid, arrays[1 + a].copy()) for a in range(dim))
    d = tuple(Field(grid, arrays[1 + dim + c].copy()) for c in range(dim))
    return SimState(rho=rho, u=u, d=d, t=t, params=params)


def _write_series(path, rows, append=False):
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        if not append:
            fh.write(",".join(SeriesRow.COLUMNS) + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")


def _series_invariants(rows, config):
    min_rho = min(r.min_rho for r in rows)
    max_rho = max(r.max_rho for r in rows)
    max_div = max(r.max_div_u for r in rows)
    mass0 = rows[0].mass
    mass_drift = max(abs(r.mass - mass0) for r in rows) / abs(mass0)
    d_cap = max(1.0, rows[0].max_abs_d) + 10.0 * config.dt
    energy_ok = all(
        rows[i + 1].total
        <= rows[i].total + abs(rows[i + 1].energy_residual) * (rows[i + 1].t - rows[i].t) + 1e-12
        for i in range(len(rows) - 1)
    )
    return {
        "density_bounds": bool(
            min_rho >= config.m1 - 1e-9 and max_rho <= config.m2 + 1e-9
        ),
        "divergence_free": bool(max_div <= 1e-9),
        "mass_drift_ok": bool(mass_drift <= 1e-3),
        "mass_drift": mass_drift,
        "director_bounded": bool(all(r.max_abs_d <= d_cap for r in rows)),
        "energy_monotone": bool(energy_ok),
    }


def _galerkin_series(states):
    rows = [series_row(states[0])]
    for state in states[1:]:
        rows.append(series_row(state, prev_row=rows[-1]))
    return rows


def _resolve_modes(config, grid):
    if config.galerkin_modes == "full":
        return galerkin.resolved_mode_count(grid)
    return int(config.galerkin_modes)


def run_command(config, resume_path=None):
    """Execute one configured run; returns a process exit status."""
    try:
        _run_command(config, resume_path)
        return 0
    except (SimulationError, CheckpointError, ConfigError, OSError) as exc:
        print(f"lcdflow: error: {exc}", file=sys.stderr)
        return 1


def _run_command(config, resume_path):
    config.validate()
    grid = config.grid()
    params = config.params()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series_path = out_dir / "series.csv"
    summary = {"scenario": config.scenario, "backend": config.backend,
               "n": config.n, "dim": config.dim, "dt": config.dt,
               "t_end": config.t_end, "seed": config.seed}

    resuming = False
    if resume_path is not None:
        if config.backend != "spectral" or config.scenario == "twin":
            raise ConfigError("resume is supported for spectral single runs only")
        state0 = load_checkpoint(resume_path, dt=config.dt, t_end=config.t_end)
        if state0.grid != grid:
            raise CheckpointError(
                f"checkpoint grid {state0.grid} does not match config grid {grid}"
            )
        resuming = True
    else:
        state0 = build_initial_state(
            config.scenario, grid, params,
            seed=config.seed, amplitude=config.amplitude,
        )

    if config.scenario == "twin":
        _run_twin(config, state0, params, out_dir, summary)
    else:
        u_l2 = {}
        if config.backend in ("spectral", "both"):
            final, rows, u_norms = _run_spectral(config, state0, params, out_dir)
            if resuming and series_path.exists():
                _write_series(series_path, rows[1:], append=True)
            else:
                _write_series(series_path, rows)
            summary.update(_final_norms(final))
            summary.update(_series_invariants(rows, config))
            summary["ladyzhenskaya_c"] = _fit_constant(rows, config)
            u_l2["spectral"] = u_norms
        if config.backend in ("galerkin", "both"):
            m = _resolve_modes(config, grid)
            states = galerkin.integrate_reference(
                state0, params, m, sample_every=config.diag_interval
            )
            rows_g = _galerkin_series(states)
            g_path = out_dir / ("series_galerkin.csv" if config.backend == "both"
                                else "series.csv")
            _write_series(g_path, rows_g)
            summary["galerkin_modes"] = m
            if config.backend == "galerkin":
                summary.update(_final_norms(states[-1]))
                summary["ladyzhenskaya_c"] = _fit_constant(rows_g, config)
            u_l2["galerkin"] = [(s.t, lp_norm(s.u, 2)) for s in states]
        if config.backend == "both":
            summary["backend_agreement"] = _backend_agreement(
                u_l2["spectral"], u_l2["galerkin"]
            )
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fit_constant(rows, config):
    if len(rows) < 3:
        return 0.0
    dt_sample = rows[1].t - rows[0].t
    if config.dim == 2:
        series = [r.phi2 for r in rows]
    else:
        series = [r.phi_tilde2 for r in rows]
    return ladyzhenskaya_fit(series, dt_sample, config.dim).c_fit


def _final_norms(state):
    return {
        "t_final": state.t,
        "u_l2": lp_norm(state.u, 2),
        "grad_d_l2": math.sqrt(sum(h_seminorm(c, 1) ** 2 for c in state.d)),
        "rho_min": float(state.rho.values.min()),
        "rho_max": float(state.rho.values.max()),
    }


def _backend_agreement(series_a, series_b):
    """Max relative discrepancy of ||u||_L2 over the common sample times."""
    times_b = {round(t, 12): v for t, v in series_b}
    worst = 0.0
    for t, va in series_a:
        vb = times_b.get(round(t, 12))
        if vb is None or va == 0.0:
            continue
        worst = max(worst, abs(va - vb) / abs(va))
    return worst


def _run_spectral(config, state0, params, out_dir):
    u_norms = []

    def norm_hook(step_idx, state):
        u_norms.append((state.t, lp_norm(state.u, 2)))

    hooks = [norm_hook]
    if config.checkpoint_interval > 0:
        interval = config.checkpoint_interval

        def checkpoint_hook(step_idx, state, _interval=interval):
            if step_idx and step_idx % _interval == 0:
                save_checkpoint(state, out_dir / f"checkpoint_{step_idx:06d}.lcdchk")

        hooks.append(checkpoint_hook)
    result = stepper.run(
        state0, params, diag_interval=config.diag_interval, hooks=hooks
    )
    save_checkpoint(result.state, out_dir / "checkpoint_final.lcdchk")
    return result.state, result.series, u_norms


def _run_twin(config, state0, params, out_dir, summary):
    """March a twin pair in lockstep and record the Gronwall functional."""
    state_a = state0
    state_b = twin_perturbation(state0, config.twin_eps)
    rows = [series_row(state_a)]
    div_series = [(0.0, twin_divergence(state_a, state_b))]
    n_steps = int(round(params.t_end / params.dt))
    for i in range(1, n_steps + 1):
        state_a = stepper.step(state_a, params.dt)
        state_b = stepper.step(state_b, params.dt)
        if i % config.diag_interval == 0 or i == n_steps:
            rows.append(series_row(state_a, prev_row=rows[-1]))
            div_series.append((state_a.t, twin_divergence(state_a, state_b)))
    _write_series(out_dir / "series.csv", rows)
    with open(out_dir / "twin.csv", "w") as fh:
        fh.write("t,divergence\n")
        for t, v in div_series:
            fh.write(f"{t!r},{v!r}\n")
    save_checkpoint(state_a, out_dir / "checkpoint_final.lcdchk")
    summary.update(_final_norms(state_a))
    summary.update(_series_invariants(rows, config))
    summary["ladyzhenskaya_c"] = _fit_constant(rows, config)
    summary["twin_eps"] = config.twin_eps
    summary["twin_final_divergence"] = div_series[-1][1]
    summary["gronwall_slope"] = fit_log_slope(
        [t for t, _ in div_series], [v for _, v in div_series]
    )


_HELP_EPILOG = """\
config keys (key = value per line, '#' comments):
  scenario             one of: rest, taylor-green-2d, variable-density-2d,
                       small-data-3d, twin   (required)
  dim, n, length       grid: dimension, points per axis (power of two), box edge
  eta, m1, m2          penalty length and density bounds
  dt, t_end            time step and final time
  backend              spectral | galerkin | both
  diag_interval        steps between diagnostics rows (default 1)
  output_dir           artifact directory (series.csv, summary.json, checkpoints)
  seed                 seed for randomized initial perturbations
  amplitude            scaling of initial velocity / director perturbation
  twin_eps             twin-run initial separation (scenario twin)
  galerkin_modes       'full' or mode count (galerkin/both backends)
  checkpoint_interval  steps between checkpoints (0: final only)
Each scenario supplies its own grid/solver defaults; explicit keys win.
"""


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lcdflow",
        description="Batch simulator for variable-density nematic liquid "
                    "crystal flow on the periodic box.",
        epilog=_HELP_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", required=True, help="path to the run config")
    parser.add_argument("--resume", default=None,
                        help="checkpoint file to resume from")
    args = parser.parse_args(argv)
    try:
        config = parse_config(Path(args.config).read_text())
    except (OSError, ConfigError) as exc:
        print(f"lcdflow: config error: {exc}", file=sys.stderr)
        return 2
    return run_command(config, resume_path=args.resume)


if __name__ == "__main__":
    sys.exit(main())
