"""Physics of the coupled flow: parameters, state bundle, Ginzburg-Landau
penalty, elastic stress, and the assembled right-hand sides of the
momentum and director equations.

The system evolves (rho, u, d) with
    rho_t + u . grad rho = 0
    rho (u_t + u . grad u) + grad p = Lap u - div(grad d (x) grad d)
    d_t + u . grad d = Lap d - f(d)
    div u = 0
where F(d) = (|d|^2 - 1)^2 / (4 eta^2) penalizes deviation from unit
director length and f = grad F.  Viscosity is fixed to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import (
    Field,
    dealias,
    derivative,
    divergence,
    laplacian,
    leray_project,
    to_physical,
)


class SimulationError(RuntimeError):
    """Base class for solver failures."""


class CorruptedStateError(SimulationError):
    """State violates a hard invariant (density collapse, NaNs, ...)."""


@dataclass
class Params:
    """Physical and solver parameters.

    eta is the penalty length of the Ginzburg-Landau relaxation; m1 and m2
    bound the initial (hence, by transport, all-time) density.
    """

    eta: float = 0.2
    m1: float = 0.75
    m2: float = 1.25
    dt: float = 1e-3
    t_end: float = 1.0

    def __post_init__(self):
        if not 0 < self.m1 <= self.m2:
            raise ValueError(f"need 0 < m1 <= m2, got m1={self.m1}, m2={self.m2}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")


@dataclass
class SimState:
    """The unknowns (rho, u, d) at time t, bundled with the parameter set."""

    rho: Field
    u: tuple
    d: tuple
    t: float
    params: Params

    @property
    def grid(self):
        return self.rho.grid

    def with_fields(self, rho=None, u=None, d=None, t=None):
        return replace(
            self,
            rho=self.rho if rho is None else rho,
            u=self.u if u is None else u,
            d=self.d if d is None else d,
            t=self.t if t is None else t,
        )

    def validate(self, div_tol=1e-9, rho_tol=1e-9):
        """Check the state invariants; raise CorruptedStateError on failure."""
        rho = self.rho.values
        if not np.isfinite(rho).all():
            raise CorruptedStateError("density has non-finite samples")
        lo, hi = float(rho.min()), float(rho.max())
        if lo < self.params.m1 - rho_tol or hi > self.params.m2 + rho_tol:
            raise CorruptedStateError(
                f"density out of [{self.params.m1}, {self.params.m2}]: "
                f"range [{lo}, {hi}]"
            )
        for comp in self.u + self.d:
            if not np.isfinite(comp.values).all():
                raise CorruptedStateError("velocity/director has non-finite samples")
        div_max = float(np.abs(divergence(self.u).values).max())
        if div_max > div_tol:
            raise CorruptedStateError(f"max |div u| = {div_max} > {div_tol}")


def penalty_F(d, eta):
    """Pointwise penalty F(d) = (|d|^2 - 1)^2 / (4 eta^2); nonnegative."""
    grid = d[0].grid
    mag2 = np.zeros(grid.shape)
    for comp in d:
        mag2 += comp.values**2
    return Field(grid, (mag2 - 1.0) ** 2 / (4.0 * eta**2))


def penalty_f(d, eta):
    """Gradient of the penalty, f(d) = (|d|^2 - 1) d / eta^2.

    Vanishes exactly on the unit sphere and at d = 0.
    """
    grid = d[0].grid
    mag2 = np.zeros(grid.shape)
    for comp in d:
        mag2 += comp.values**2
    factor = (mag2 - 1.0) / eta**2
    return tuple(Field(grid, factor * comp.values) for comp in d)


def stress_tensor(d):
    """Entries T[i][j] = grad_i d . grad_j d of the elastic stress."""
    grid = d[0].grid
    grads = [[derivative(comp, a).values for a in range(grid.dim)] for comp in d]
    tensor = []
    for i in range(grid.dim):
        row = []
        for j in range(grid.dim):
            t_ij = np.zeros(grid.shape)
            for c in range(len(d)):
                t_ij += grads[c][i] * grads[c][j]
            row.append(Field(grid, t_ij))
        tensor.append(row)
    return tensor


def elastic_force(d):
    """-div(grad d (x) grad d), the director forcing of the momentum equation.

    Computed as the divergence of the assembled tensor (products dealiased),
    not through the gradient-splitting identity, so the isotropic part is
    left for the Leray projection to absorb.  The tensor is symmetric, so
    only its upper triangle is transformed.
    """
    from .fields import _fftn, _ifftn

    grid = d[0].grid
    dim = grid.dim
    grads = [
        [np.real(_ifftn(comp.hat * grid.deriv_factors[a]) * grid.size)
         for a in range(dim)]
        for comp in d
    ]
    mask = grid.dealias_mask
    t_hat = {}
    for i in range(dim):
        for j in range(i, dim):
            t_ij = np.zeros(grid.shape)
            for c in range(len(d)):
                t_ij += grads[c][i] * grads[c][j]
            t_hat[i, j] = mask * _fftn(t_ij) / grid.size
    force = []
    for i in range(dim):
        acc = np.zeros(grid.shape, dtype=complex)
        for j in range(dim):
            acc += t_hat[min(i, j), max(i, j)] * grid.deriv_factors[j]
        force.append(to_physical(grid, -acc))
    return tuple(force)


def advection_term(u, w):
    """(u . grad) w, dealiased, one Field per component of w."""
    grid = u[0].grid
    out = []
    for comp in w:
        grads = [derivative(comp, a).values for a in range(grid.dim)]
        acc = np.zeros(grid.shape)
        for a in range(grid.dim):
            acc += u[a].values * grads[a]
        out.append(dealias(Field(grid, acc)))
    return tuple(out)


def _check_density(state):
    floor = state.params.m1 / 2.0
    if float(state.rho.values.min()) < floor:
        raise CorruptedStateError(
            f"density fell below m1/2 = {floor}: min = {float(state.rho.values.min())}"
        )


def momentum_rhs(state):
    """Leray projection of (Lap u - rho (u.grad)u + elastic_force(d)) / rho."""
    _check_density(state)
    grid = state.grid
    adv = advection_term(state.u, state.u)
    force = elastic_force(state.d)
    rho = state.rho.values
    out = []
    for a in range(grid.dim):
        lap = laplacian(state.u[a]).values
        num = lap - rho * adv[a].values + force[a].values
        out.append(dealias(Field(grid, num / rho)))
    return leray_project(out)


def director_rhs(state):
    """Lap d - (u . grad) d - f(d), the director equation right-hand side."""
    _check_density(state)
    grid = state.grid
    adv = advection_term(state.u, state.d)
    f_pen = penalty_f(state.d, state.params.eta)
    out = []
    for c in range(len(state.d)):
        expl = dealias(Field(grid, adv[c].values + f_pen[c].values))
        out.append(Field(grid, laplacian(state.d[c]).values - expl.values))
    return tuple(out)
