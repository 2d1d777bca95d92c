"""Stokes eigenbasis, coefficient tensors, and the Galerkin ODE system
used as a reference integrator for cross-validating the spectral stepper.

On the torus the Stokes eigenfunctions are exactly the divergence-free
Fourier modes (the pressure part of the eigenproblem is constant): for
each integer wavevector k and unit polarization e with e . k = 0, the
real modes sqrt(2/V) e cos(k.x) and sqrt(2/V) e sin(k.x) are
L2-orthonormal with eigenvalue |k|^2.

Expanding the velocity as u = sum_i g_i(t) phi_i turns the momentum
equation into

    sum_i A_ij dg_i/dt = - sum_ik B_ikj g_i g_k - sum_i C_ij g_i + D_j

with A_ij = int rho phi_i . phi_j, B_ikj = int rho (phi_i . grad phi_k) . phi_j,
C_ij = int grad phi_i . grad phi_j, and D_j the elastic stress paired
with grad phi_j.  A is symmetric positive definite whenever rho >= m1 > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from functools import cached_property

import numpy as np
import scipy.linalg

from .fields import Field, _fftn, _ifftn, to_physical
from .model import CorruptedStateError, SimState
from .transport import advect_density


@dataclass(frozen=True)
class StokesMode:
    kvec: tuple  # integer wavevector, half-space representative
    e: tuple  # unit polarization, e . kvec = 0
    parity: str  # "cos" or "sin"


def _polarizations(kvec):
    k = np.asarray(kvec, dtype=float)
    if len(kvec) == 2:
        e = np.array([-k[1], k[0]]) / np.linalg.norm(k)
        return [tuple(e)]
    # 3D: two orthonormal vectors perpendicular to k, chosen deterministically
    # from the axis with the smallest |k| component.
    axis = int(np.argmin(np.abs(k)))
    a = np.zeros(3)
    a[axis] = 1.0
    e1 = np.cross(k, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(k, e1)
    e2 /= np.linalg.norm(e2)
    return [tuple(e1), tuple(e2)]


def _half_space(kvec):
    for comp in kvec:
        if comp > 0:
            return True
        if comp < 0:
            return False
    return False


class StokesBasis:
    """The m lowest divergence-free real Fourier modes on a grid."""

    def __init__(self, grid, modes):
        self.grid = grid
        self.modes = list(modes)
        scale = 2.0 * math.pi / grid.length
        self.eigenvalues = np.array(
            [scale**2 * sum(c * c for c in mode.kvec) for mode in self.modes]
        )

    def __len__(self):
        return len(self.modes)

    @property
    def m(self):
        return len(self.modes)

    @cached_property
    def _norm(self):
        return math.sqrt(2.0 / self.grid.volume)

    @cached_property
    def phases(self):
        """k . x for each mode, shape (m, *grid.shape)."""
        mesh = self.grid.mesh()
        scale = 2.0 * math.pi / self.grid.length
        out = np.zeros((self.m,) + self.grid.shape)
        for i, mode in enumerate(self.modes):
            for a, kc in enumerate(mode.kvec):
                if kc:
                    out[i] += scale * kc * mesh[a]
        return out

    @cached_property
    def phi(self):
        """Mode values, shape (m, dim, *grid.shape)."""
        out = np.zeros((self.m, self.grid.dim) + self.grid.shape)
        for i, mode in enumerate(self.modes):
            wave = np.cos(self.phases[i]) if mode.parity == "cos" else np.sin(self.phases[i])
            for c, ec in enumerate(mode.e):
                out[i, c] = self._norm * ec * wave
        return out

    @cached_property
    def grad_phi(self):
        """Analytic d phi_i^c / d x_a, shape (m, dim_a, dim_c, *grid.shape)."""
        scale = 2.0 * math.pi / self.grid.length
        out = np.zeros((self.m, self.grid.dim, self.grid.dim) + self.grid.shape)
        for i, mode in enumerate(self.modes):
            dwave = -np.sin(self.phases[i]) if mode.parity == "cos" else np.cos(self.phases[i])
            for a in range(self.grid.dim):
                ka = scale * mode.kvec[a]
                if ka == 0.0:
                    continue
                for c, ec in enumerate(mode.e):
                    out[i, a, c] = self._norm * ec * ka * dwave
        return out

    @cached_property
    def _spectral_index(self):
        """Flat index of each mode's wavevector in an FFT array."""
        n = self.grid.n
        idx = np.zeros(self.m, dtype=np.int64)
        for i, mode in enumerate(self.modes):
            flat = 0
            for kc in mode.kvec:
                flat = flat * n + (kc % n)
            idx[i] = flat
        return idx

    @cached_property
    def _e_matrix(self):
        return np.array([mode.e for mode in self.modes])

    @cached_property
    def _is_cos(self):
        return np.array([mode.parity == "cos" for mode in self.modes])

    def mode_field(self, i):
        """Mode i as a tuple of Fields."""
        return tuple(Field(self.grid, self.phi[i, c]) for c in range(self.grid.dim))

    def analytic_divergence(self, i):
        """k . e for mode i; identically zero by construction."""
        return float(
            sum(k * e for k, e in zip(self.modes[i].kvec, self.modes[i].e))
        )


def resolved_mode_count(grid):
    """Size of the full resolved basis (all modes below the 2/3 cutoff)."""
    per_axis = 2 * grid.kmax + 1
    n_k = (per_axis**grid.dim - 1) // 2
    return n_k * (grid.dim - 1) * 2


def build_basis(grid, m):
    """The m lowest-eigenvalue orthonormal divergence-free real modes.

    Ties are broken deterministically: lexicographic on the wavevector,
    then polarization index, then cos before sin.
    """
    available = resolved_mode_count(grid)
    if m > available:
        raise ValueError(f"m={m} exceeds the {available} resolved modes of {grid}")
    kmax = grid.kmax
    rng = range(-kmax, kmax + 1)
    entries = []
    if grid.dim == 2:
        kvecs = [(i, j) for i in rng for j in rng if _half_space((i, j))]
    else:
        kvecs = [
            (i, j, k) for i in rng for j in rng for k in rng if _half_space((i, j, k))
        ]
    for kvec in kvecs:
        lam = sum(c * c for c in kvec)
        for p_idx, e in enumerate(_polarizations(kvec)):
            for parity_idx, parity in enumerate(("cos", "sin")):
                entries.append((lam, kvec, p_idx, parity_idx, e, parity))
    entries.sort(key=lambda it: (it[0], it[1], it[2], it[3]))
    modes = [StokesMode(kvec=k, e=e, parity=par) for (_, k, _, _, e, par) in entries[:m]]
    return StokesBasis(grid, modes)


def project_Pm(v, basis):
    """Coefficients g_i = int v . phi_i (the L2-orthogonal projection)."""
    grid = basis.grid
    if v[0].grid != grid:
        raise ValueError("field grid does not match basis grid")
    vals = np.stack([c.values for c in v])
    m = basis.m
    return np.einsum(
        "icx,cx->i",
        basis.phi.reshape(m, grid.dim, -1),
        vals.reshape(grid.dim, -1),
    ) * grid.cell_volume


def reconstruct_velocity(basis, g):
    """u = sum_i g_i phi_i, assembled in spectral space (band-limited)."""
    grid = basis.grid
    hats = [np.zeros(grid.shape, dtype=complex) for _ in range(grid.dim)]
    half = 0.5 * basis._norm
    n = grid.n
    for i, mode in enumerate(basis.modes):
        gi = g[i]
        if gi == 0.0:
            continue
        pos = tuple(kc % n for kc in mode.kvec)
        neg = tuple((-kc) % n for kc in mode.kvec)
        if mode.parity == "cos":
            cpos = cneg = gi * half
        else:
            cpos = -1j * gi * half
            cneg = 1j * gi * half
        for c, ec in enumerate(mode.e):
            if ec:
                hats[c][pos] += ec * cpos
                hats[c][neg] += ec * cneg
    return tuple(to_physical(grid, h) for h in hats)


@dataclass
class GalerkinSystem:
    """The assembled ODE system at one time level."""

    basis: StokesBasis
    A: np.ndarray
    B: np.ndarray  # may be None when the quadratic term is applied matrix-free
    C: np.ndarray
    D: np.ndarray
    g: np.ndarray
    _chol: tuple = dataclass_field(default=None, repr=False)


def assemble_A(rho, basis):
    grid = basis.grid
    m = basis.m
    phi = basis.phi.reshape(m, grid.dim, -1)
    weighted = phi * rho.values.reshape(-1)
    return np.einsum("icx,jcx->ij", weighted, phi) * grid.cell_volume


def assemble_C(basis):
    grid = basis.grid
    m = basis.m
    gphi = basis.grad_phi.reshape(m, grid.dim * grid.dim, -1)
    return np.einsum("iax,jax->ij", gphi, gphi) * grid.cell_volume


def assemble_B(rho, basis):
    """Dense advection tensor B[i, k, j] = int rho (phi_i . grad phi_k) . phi_j.

    Products of resolved modes stay below the grid's alias limit
    (3 kmax < n), so the plain grid quadrature is already the dealiased
    integral.  Cost is O(m^3 N); keep m modest.
    """
    grid = basis.grid
    m = basis.m
    N = grid.size
    phi = basis.phi.reshape(m, grid.dim, N)
    gphi = basis.grad_phi.reshape(m, grid.dim, grid.dim, N)
    w = rho.values.reshape(N) * grid.cell_volume
    B = np.empty((m, m, m))
    for i in range(m):
        # (phi_i . grad) phi_k for all k at once: sum_a phi_i^a d_a phi_k^c
        conv = np.einsum("ax,kacx->kcx", phi[i], gphi)
        B[i] = np.einsum("kcx,jcx->kj", conv * w, phi)
    return B


def assemble_D(d, basis):
    """D_j = int sum_{k,l} (d_k d . d_l d) d_l phi_j^k via grid quadrature."""
    grid = basis.grid
    m = basis.m
    dim = grid.dim
    grads = np.empty((dim, len(d)) + grid.shape)
    for c, comp in enumerate(d):
        hat = comp.hat
        for a in range(dim):
            grads[a, c] = np.real(_ifftn(hat * grid.deriv_factors[a]) * grid.size)
    stress = np.einsum("acx,bcx->abx", grads.reshape(dim, len(d), -1),
                       grads.reshape(dim, len(d), -1))
    gphi = basis.grad_phi.reshape(m, dim, dim, -1)
    # grad_phi axes are (mode, derivative axis l, component k, x)
    return np.einsum("abx,jbax->j", stress, gphi) * grid.cell_volume


def assemble_coefficients(rho, d, basis, with_b=True):
    """All coefficient tensors (A, B, C, D) by trapezoid quadrature."""
    A = assemble_A(rho, basis)
    C = assemble_C(basis)
    D = assemble_D(d, basis)
    B = assemble_B(rho, basis) if with_b else None
    return A, B, C, D


def make_system(rho, d, basis, g, with_b=True):
    A, B, C, D = assemble_coefficients(rho, d, basis, with_b=with_b)
    return GalerkinSystem(basis=basis, A=A, B=B, C=C, D=D, g=np.asarray(g, dtype=float))


def _solve_spd(system, rhs):
    if system._chol is None:
        try:
            system._chol = scipy.linalg.cho_factor(system.A)
        except scipy.linalg.LinAlgError as exc:
            raise CorruptedStateError(f"coefficient matrix not SPD: {exc}") from exc
    return scipy.linalg.cho_solve(system._chol, rhs)


def galerkin_rhs(system, g=None):
    """dg/dt from the ODE system, by a symmetric positive-definite solve."""
    g = system.g if g is None else g
    quad = np.einsum("ikj,i,k->j", system.B, g, g)
    rhs = -quad - system.C @ g + system.D
    return _solve_spd(system, rhs)


def _quadratic_term(basis, rho_vals, g):
    """N_j = int rho (u . grad u) . phi_j with u = sum g_i phi_i, matrix-free.

    Identical to contracting the dense B against g twice (the quadrature
    and the pointwise products are the same); avoids materializing the
    m^3 tensor so the full resolved basis stays affordable.
    """
    grid = basis.grid
    u = reconstruct_velocity(basis, g)
    w = np.empty((grid.dim,) + grid.shape)
    grads = []
    for comp in u:
        hat = comp.hat
        grads.append(
            [np.real(_ifftn(hat * grid.deriv_factors[a]) * grid.size)
             for a in range(grid.dim)]
        )
    for c in range(grid.dim):
        acc = np.zeros(grid.shape)
        for a in range(grid.dim):
            acc += u[a].values * grads[c][a]
        w[c] = rho_vals * acc
    # int w_c T_j(k_j . x) dx read off the transform of w
    what = np.stack([_fftn(w[c]).reshape(-1) for c in range(grid.dim)])
    picked = what[:, basis._spectral_index] * (grid.volume / grid.size)
    proj = np.where(
        basis._is_cos[None, :], picked.real, -picked.imag
    )
    return basis._norm * np.einsum("ic,ci->i", basis._e_matrix, proj)


class _CoefficientCache:
    """Reassemble A and D only when rho or d actually changed."""

    def __init__(self, basis):
        self.basis = basis
        self.C = assemble_C(basis)
        self._rho_vals = None
        self._d_vals = None
        self.A = None
        self.D = None
        self.chol = None

    def update(self, rho, d):
        if self._rho_vals is None or not np.array_equal(rho.values, self._rho_vals):
            self.A = assemble_A(rho, self.basis)
            try:
                self.chol = scipy.linalg.cho_factor(self.A)
            except scipy.linalg.LinAlgError as exc:
                raise CorruptedStateError(f"coefficient matrix not SPD: {exc}") from exc
            self._rho_vals = rho.values
        d_vals = np.stack([c.values for c in d])
        if self._d_vals is None or not np.array_equal(d_vals, self._d_vals):
            self.D = assemble_D(d, self.basis)
            self._d_vals = d_vals


def integrate_reference(state0, params, m, sample_every=1):
    """Integrate the Galerkin ODE system coupled to transport and the
    director equation; returns the sampled trajectory of states.

    Per step: the density is advected semi-Lagrangially with the current
    reconstructed velocity, the director takes one semi-implicit step with
    the same velocity (it is not truncated to the velocity basis), then g
    advances by classical RK4 with A and D frozen at the fresh fields.
    Sampled entries include the initial state; the final state is always
    the last entry.
    """
    from .stepper import step_director  # local import to avoid a cycle

    basis = build_basis(state0.grid, m)
    cache = _CoefficientCache(basis)
    g = project_Pm(state0.u, basis)
    rho, d, t = state0.rho, state0.d, state0.t
    dt = params.dt
    n_steps = int(round((params.t_end - t) / dt))
    out = []

    def snapshot():
        u_fields = reconstruct_velocity(basis, g)
        return SimState(rho=rho, u=u_fields, d=d, t=t, params=params)

    out.append(snapshot())
    for step_idx in range(n_steps):
        u_fields = reconstruct_velocity(basis, g)
        carrier = SimState(rho=rho, u=u_fields, d=d, t=t, params=params)
        rho = advect_density(rho, [(t, u_fields)], dt)
        d = step_director(carrier, dt)
        cache.update(rho, d)
        rho_vals = rho.values

        def rate(gv):
            rhs = -_quadratic_term(basis, rho_vals, gv) - cache.C @ gv + cache.D
            return scipy.linalg.cho_solve(cache.chol, rhs)

        k1 = rate(g)
        k2 = rate(g + 0.5 * dt * k1)
        k3 = rate(g + 0.5 * dt * k2)
        k4 = rate(g + dt * k3)
        g = g + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
        if (step_idx + 1) % sample_every == 0 or step_idx == n_steps - 1:
            out.append(snapshot())
    return out
