"""First-order IMEX time integrator for the coupled system.

One step advances density -> director -> momentum, so the momentum solve
sees the freshest density and elastic stress:

  * density: one semi-Lagrangian transport step with the current velocity;
  * director: diffusion treated implicitly (exact per-mode division by
    1 + dt |k|^2), advection and the penalty gradient explicit, dealiased;
  * momentum: the variable-coefficient implicit viscous problem
    (rho/dt) (u* - u) = Lap u* - rho (u.grad)u - div(grad d (x) grad d)
    is solved by fixed-point iteration with a constant-coefficient
    spectral preconditioner (rho replaced by its mean in the implicit
    operator, the oscillating remainder corrected explicitly), then u* is
    Leray-projected.

The preconditioned iteration contracts with factor ~ osc(rho)/mean(rho)
and is exact in a single sweep when rho is constant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import SeriesRow, series_row
from .fields import Field, dealias, leray_project, to_physical, _fftn, _ifftn
from .model import SimState, SimulationError, advection_term, elastic_force, penalty_f
from .transport import advect_density


class StepFailureError(SimulationError):
    """A single step could not be completed (CFL breach, stalled solve)."""


def step_director(state, dt):
    """Semi-implicit director update; returns the new director components."""
    grid = state.grid
    adv = advection_term(state.u, state.d)
    f_pen = penalty_f(state.d, state.params.eta)
    denom = 1.0 + dt * grid.k_squared
    mask = grid.dealias_mask
    out = []
    for c in range(len(state.d)):
        expl = _fftn(adv[c].values + f_pen[c].values) / grid.size
        expl *= mask
        new_hat = (state.d[c].hat - dt * expl) / denom
        out.append(to_physical(grid, new_hat))
    return tuple(out)


def step_velocity(state, dt, tol=1e-10, max_iter=50):
    """Projected semi-implicit momentum update; returns the new velocity.

    Raises StepFailureError when the preconditioned fixed-point iteration
    fails to reach ``tol`` within ``max_iter`` sweeps.
    """
    grid = state.grid
    rho = state.rho.values
    rho_bar = float(rho.mean())
    mask = grid.dealias_mask
    size = grid.size

    adv = advection_term(state.u, state.u)
    force = elastic_force(state.d)
    rhs_hat = []
    for a in range(grid.dim):
        explicit = rho * (state.u[a].values / dt - adv[a].values) + force[a].values
        rhs_hat.append(mask * _fftn(explicit) / size)

    denom = rho_bar / dt + grid.k_squared
    u_vals = [state.u[a].values for a in range(grid.dim)]
    delta_rho = rho - rho_bar
    converged = False
    for _ in range(max_iter):
        new_vals = []
        increment = 0.0
        scale = 1.0
        for a in range(grid.dim):
            correction = mask * _fftn(delta_rho * u_vals[a] / dt) / size
            new_hat = (rhs_hat[a] - correction) / denom
            nv = np.real(_ifftn(new_hat) * size)
            increment = max(increment, float(np.abs(nv - u_vals[a]).max()))
            scale = max(scale, float(np.abs(nv).max()))
            new_vals.append(nv)
        u_vals = new_vals
        if increment <= tol * scale:
            converged = True
            break
    if not converged:
        raise StepFailureError(
            f"momentum fixed point stalled at increment {increment:.3e} "
            f"after {max_iter} sweeps (t = {state.t})"
        )
    star = [Field(grid, v) for v in u_vals]
    return leray_project(star)


def _cfl_number(state, dt):
    h = state.grid.h
    return max(float(np.abs(c.values).max()) for c in state.u) * dt / h


def step(state, dt):
    """One full splitting step; raises StepFailureError on a CFL breach."""
    cfl = _cfl_number(state, dt)
    if cfl > 0.9:
        raise StepFailureError(f"CFL number {cfl:.3f} > 0.9 at t = {state.t}")
    rho_new = advect_density(state.rho, [(state.t, state.u)], dt)
    d_new = step_director(state, dt)
    carrier = state.with_fields(rho=rho_new, d=d_new)
    u_new = step_velocity(carrier, dt)
    return replace(state, rho=rho_new, u=u_new, d=d_new, t=state.t + dt)


@dataclass
class RunResult:
    state: SimState
    series: list
    dt_used: float


def _quick_invariants(state, d_cap):
    p = state.params
    rho = state.rho.values
    lo, hi = float(rho.min()), float(rho.max())
    if not np.isfinite([lo, hi]).all():
        raise StepFailureError(f"density went non-finite at t = {state.t}")
    if lo < p.m1 - 1e-9 or hi > p.m2 + 1e-9:
        raise StepFailureError(
            f"density bounds violated at t = {state.t}: [{lo}, {hi}] "
            f"outside [{p.m1}, {p.m2}]"
        )
    d_max = 0.0
    mag2 = np.zeros(state.grid.shape)
    for comp in state.d:
        mag2 += comp.values**2
    d_max = float(np.sqrt(mag2.max()))
    if not np.isfinite(d_max):
        raise StepFailureError(f"director went non-finite at t = {state.t}")
    if d_max > d_cap:
        raise StepFailureError(
            f"director maximum principle violated at t = {state.t}: "
            f"max |d| = {d_max} > {d_cap}"
        )


def _dump(state):
    u_max = max(float(np.abs(c.values).max()) for c in state.u)
    return (
        f"[t={state.t:.6g} rho_min={float(state.rho.values.min()):.6g} "
        f"rho_max={float(state.rho.values.max()):.6g} u_max={u_max:.6g}]"
    )


def run(state0, params, diag_interval=1, hooks=()):
    """March ``state0`` to ``params.t_end``; returns the final state and the
    diagnostic time series (one row every ``diag_interval`` steps).

    On the first failed step the time step is halved once for the rest of
    the run; a second failure aborts with a diagnostic dump in the error.
    Hooks are called as hook(step_index, state) at every diagnostic row.
    """
    state = state0
    dt = params.dt
    halved = False
    mag0 = np.zeros(state.grid.shape)
    for comp in state.d:
        mag0 += comp.values**2
    d_cap = max(1.0, float(np.sqrt(mag0.max()))) + 10.0 * dt

    series = [series_row(state, prev_row=None)]
    for hook in hooks:
        hook(0, state)

    step_idx = 0
    while state.t < params.t_end - 0.5 * dt:
        try:
            state = step(state, dt)
        except StepFailureError as exc:
            if halved:
                raise StepFailureError(f"{exc} after dt halving {_dump(state)}") from exc
            halved = True
            dt = dt / 2.0
            continue
        step_idx += 1
        _quick_invariants(state, d_cap)
        if step_idx % diag_interval == 0 or state.t >= params.t_end - 0.5 * dt:
            row = series_row(state, prev_row=series[-1])
            if row.max_div_u > 1e-9:
                raise StepFailureError(
                    f"divergence-free invariant violated: max |div u| = "
                    f"{row.max_div_u} {_dump(state)}"
                )
            series.append(row)
            for hook in hooks:
                hook(step_idx, state)
    return RunResult(state=state, series=series, dt_used=dt)
