"""Numerical verification of the analytical estimates: energy laws,
higher-order energy functionals, interpolation inequalities, twin-run
Gronwall growth, density oscillation moduli, and the partition of unity
behind the frozen-coefficient localization.

Inequalities whose constants the analysis leaves unnamed are handled by
constant fitting: the smallest constant making the inequality hold along
a computed trajectory is reported, and tests assert only finiteness and
stability of that constant under refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import (
    Field,
    _ifftn,
    divergence,
    h_seminorm,
    integrate,
    lp_norm,
)
from .model import penalty_F, penalty_f
from .transport import oscillation_probe


@dataclass
class EnergyReport:
    """The quantities entering the basic energy law.

    total = e_kin + e_dir + e_pen; dissipation is the full rate
    int |grad u|^2 + |Lap d - f(d)|^2.  All components are nonnegative.
    """

    t: float
    e_kin: float
    e_dir: float
    e_pen: float
    dissipation: float

    @property
    def total(self):
        return self.e_kin + self.e_dir + self.e_pen


def _director_mag2(state):
    mag2 = np.zeros(state.grid.shape)
    for comp in state.d:
        mag2 += comp.values**2
    return mag2


def energy_report(state):
    """Kinetic, Dirichlet, and penalty energies plus the dissipation rate."""
    grid = state.grid
    rho = state.rho.values
    umag2 = np.zeros(grid.shape)
    for comp in state.u:
        umag2 += comp.values**2
    e_kin = 0.5 * float((rho * umag2).sum()) * grid.cell_volume
    e_dir = 0.5 * sum(h_seminorm(c, 1) ** 2 for c in state.d)
    e_pen = integrate(penalty_F(state.d, state.params.eta))

    grad_u_sq = sum(h_seminorm(c, 1) ** 2 for c in state.u)
    f_pen = penalty_f(state.d, state.params.eta)
    relax_sq = np.zeros(grid.shape)
    for c in range(len(state.d)):
        lap = np.real(_ifftn(-grid.k_squared * state.d[c].hat) * grid.size)
        relax_sq += (lap - f_pen[c].values) ** 2
    dissipation = grad_u_sq + float(relax_sq.sum()) * grid.cell_volume
    return EnergyReport(
        t=state.t, e_kin=e_kin, e_dir=e_dir, e_pen=e_pen, dissipation=dissipation
    )


def energy_law_residual(report_n, report_n1, dt):
    """Defect of the discrete energy law between consecutive reports.

    (total_{n+1} - total_n) / dt + dissipation_{n+1}; identically zero for
    the exact flow and O(dt) for the first-order splitting.
    """
    return (report_n1.total - report_n.total) / dt + report_n1.dissipation


def phi_functionals(state, plus_one=False):
    """The higher-order energy ||grad u||^2 + ||Lap d||^2 and its augmented
    variant (adding the unsquared low norms ||u|| and ||grad d||, plus an
    optional +1)."""
    phi2 = sum(h_seminorm(c, 1) ** 2 for c in state.u) + sum(
        h_seminorm(c, 2) ** 2 for c in state.d
    )
    low = lp_norm(state.u, 2) + math.sqrt(
        sum(h_seminorm(c, 1) ** 2 for c in state.d)
    )
    phi_tilde2 = phi2 + low + (1.0 if plus_one else 0.0)
    return phi2, phi_tilde2


@dataclass
class SeriesRow:
    """One diagnostics sample; the CSV schema of the batch driver."""

    t: float
    e_kin: float
    e_dir: float
    e_pen: float
    dissipation: float
    total: float
    phi2: float
    phi_tilde2: float
    energy_residual: float
    min_rho: float
    max_rho: float
    max_div_u: float
    max_abs_d: float
    mass: float

    COLUMNS = (
        "t", "e_kin", "e_dir", "e_pen", "dissipation", "total", "phi2",
        "phi_tilde2", "energy_residual", "min_rho", "max_rho", "max_div_u",
        "max_abs_d", "mass",
    )

    def as_csv(self):
        return ",".join(repr(float(getattr(self, c))) for c in self.COLUMNS)


def series_row(state, prev_row=None):
    report = energy_report(state)
    phi2, phi_tilde2 = phi_functionals(state)
    residual = 0.0
    if prev_row is not None and state.t > prev_row.t:
        residual = (report.total - prev_row.total) / (state.t - prev_row.t) + (
            report.dissipation
        )
    rho = state.rho.values
    return SeriesRow(
        t=state.t,
        e_kin=report.e_kin,
        e_dir=report.e_dir,
        e_pen=report.e_pen,
        dissipation=report.dissipation,
        total=report.total,
        phi2=phi2,
        phi_tilde2=phi_tilde2,
        energy_residual=residual,
        min_rho=float(rho.min()),
        max_rho=float(rho.max()),
        max_div_u=float(np.abs(divergence(state.u).values).max()),
        max_abs_d=float(np.sqrt(_director_mag2(state).max())),
        mass=integrate(state.rho),
    )


@dataclass
class LadyzhenskayaFit:
    """Smallest constant closing the differential inequality on a run."""

    c_fit: float
    n_dim: int
    derivatives: np.ndarray
    values: np.ndarray


def ladyzhenskaya_fit(phi_series, dt, n_dim):
    """Fit the constant in the higher-energy differential inequality.

    ``phi_series`` holds the squared functional (the 2D one, or the
    augmented 3D one) sampled every ``dt``.  In 2D the fitted form is
    d(phi^2)/dt <= C ((phi^2)^2 + 1); in 3D it is d(phi~^2)/dt <= C (phi~^2)^4.
    The constant is reported, never asserted against a reference value.
    """
    phi = np.asarray(phi_series, dtype=float)
    if phi.size < 3:
        raise ValueError("need at least 3 samples to fit the inequality")
    if n_dim not in (2, 3):
        raise ValueError("n_dim must be 2 or 3")
    dphi = np.diff(phi) / dt
    base = phi[:-1]
    denom = base**2 + 1.0 if n_dim == 2 else base**4
    ratios = np.where(dphi > 0.0, dphi / np.maximum(denom, 1e-300), 0.0)
    return LadyzhenskayaFit(
        c_fit=float(ratios.max()), n_dim=n_dim, derivatives=dphi, values=phi
    )


@dataclass
class GNReport:
    """Both sides of the dimension-dependent L4 interpolation inequality."""

    lhs: float
    rhs_general: float
    rhs_zero_mean: float
    ratio_general: float
    ratio_zero_mean: float


def gn_check(f, zero_mean=False):
    """Evaluate the L4 interpolation inequality on one field.

    lhs = ||f||_{L4}^4.  In 2D the bound is ||f||^2 (||grad f||^2 + ||f||^2)
    in general and ||f||^2 ||grad f||^2 for mean-free fields (the torus
    stand-in for a vanishing boundary trace); in 3D the exponents are
    ||f|| (.)^{3/2} and ||f|| ||grad f||^3.
    """
    comps = (f,) if isinstance(f, Field) else tuple(f)
    grid = comps[0].grid
    if zero_mean:
        for comp in comps:
            mean = abs(float(comp.values.mean()))
            if mean > 1e-10 * max(1.0, float(np.abs(comp.values).max())):
                raise ValueError(f"zero_mean set but field mean is {mean}")
    arg = comps if len(comps) > 1 else comps[0]
    lhs = lp_norm(arg, 4) ** 4
    l2 = lp_norm(arg, 2)
    grad2 = sum(h_seminorm(c, 1) ** 2 for c in comps)
    if grid.dim == 2:
        rhs_general = l2**2 * (grad2 + l2**2)
        rhs_zero = l2**2 * grad2
    else:
        rhs_general = l2 * (grad2 + l2**2) ** 1.5
        rhs_zero = l2 * grad2**1.5
    ratio_general = lhs / rhs_general if rhs_general > 0 else 0.0
    ratio_zero = lhs / rhs_zero if rhs_zero > 0 else 0.0
    return GNReport(
        lhs=lhs,
        rhs_general=rhs_general,
        rhs_zero_mean=rhs_zero,
        ratio_general=ratio_general,
        ratio_zero_mean=ratio_zero,
    )


def twin_divergence(state, state_bar):
    """The Gronwall functional of the uniqueness argument:

    1/2 int |rho - rho_bar|^2 + rho_bar |u - u_bar|^2 + |grad d - grad d_bar|^2.
    """
    grid = state.grid
    if grid != state_bar.grid:
        raise ValueError("twin states live on different grids")
    drho = state.rho.values - state_bar.rho.values
    du2 = np.zeros(grid.shape)
    for a in range(grid.dim):
        du2 += (state.u[a].values - state_bar.u[a].values) ** 2
    rho_term = float((drho**2).sum()) * grid.cell_volume
    u_term = float((state_bar.rho.values * du2).sum()) * grid.cell_volume
    d_term = sum(
        h_seminorm(Field(grid, a.values - b.values), 1) ** 2
        for a, b in zip(state.d, state_bar.d)
    )
    return 0.5 * (rho_term + u_term + d_term)


def fit_log_slope(times, values, floor=1e-300):
    """Least-squares slope of log(values) against time."""
    t = np.asarray(times, dtype=float)
    v = np.log(np.maximum(np.asarray(values, dtype=float), floor))
    t_c = t - t.mean()
    denom = float((t_c**2).sum())
    if denom == 0.0:
        return 0.0
    return float((t_c * (v - v.mean())).sum() / denom)


@dataclass
class HolderEstimate:
    alpha: float  # nan when the field is flat
    flat: bool
    radii: np.ndarray
    moduli: np.ndarray


def holder_modulus(rho_history, radii=None):
    """Empirical Hoelder exponent of the density from oscillation moduli.

    Regresses log(sup oscillation over radius-r balls) on log r.  A
    constant density has no modulus to regress; it is flagged flat.
    """
    snaps = sorted(rho_history, key=lambda s: s[0])
    if len(snaps) < 2:
        raise ValueError("need at least 2 snapshots")
    grid = snaps[0][1].grid
    if radii is None:
        base = 3.0 * grid.h
        radii = [base * 2.0**j for j in range(4)]
        radii = [r for r in radii if r < grid.length / 2.1]
    radii = np.asarray(sorted(radii), dtype=float)
    moduli = np.array(
        [float(oscillation_probe(snaps, r).values.max()) for r in radii]
    )
    if moduli.max() < 1e-13:
        return HolderEstimate(alpha=float("nan"), flat=True, radii=radii, moduli=moduli)
    log_r = np.log(radii)
    log_m = np.log(np.maximum(moduli, 1e-300))
    r_c = log_r - log_r.mean()
    alpha = float((r_c * (log_m - log_m.mean())).sum() / (r_c**2).sum())
    return HolderEstimate(alpha=alpha, flat=False, radii=radii, moduli=moduli)


@dataclass
class PartitionReport:
    """A partition-of-unity family and its measured covering properties."""

    lam: float
    lam_effective: float
    dim: int
    centers: np.ndarray
    zeta: np.ndarray  # (num_bumps, *grid shape)
    sum_error: float
    multiplicity: int
    mu: float
    max_grad: float
    c_hat: float


def _bump(r):
    """Smooth compactly supported profile exp(-1/(1 - r^2)) on |r| < 1."""
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0 - 1e-12
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri**2))
    return out


def _bump_deriv(r):
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0 - 1e-12
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri**2)) * (-2.0 * ri / (1.0 - ri**2) ** 2)
    return out


def partition_of_unity(n, lam, dim=1):
    """Construct the smooth periodic partition of unity at scale lam.

    The unit box is covered by bumps of support diameter lam_eff <= lam on
    centers spaced lam_eff/4 apart, normalized to sum to one.  Measured
    covering multiplicity, the q=2 lower bound mu, and the gradient bound
    constant are reported; the gradient is evaluated analytically so its
    1/lam scaling is not polluted by grid differencing.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lam must be in (0, 1) on the normalized box")
    if dim not in (1, 2):
        raise ValueError("partition is built in 1D or 2D only")
    n_centers = math.ceil(4.0 / lam)
    spacing = 1.0 / n_centers
    lam_eff = 4.0 * spacing
    width = lam_eff / 2.0
    if width < 3.0 / n:
        raise ValueError(
            f"lam={lam} too small for n={n}: bump width {width:.4g} under 3 cells"
        )
    if (n_centers**dim) * (n**dim) > 80_000_000:
        raise ValueError("requested partition family is too large to materialize")
    x = np.arange(n) / n
    centers_1d = np.arange(n_centers) * spacing
    # wrapped signed distance from each node to each center, in bump units
    r = (x[None, :] - centers_1d[:, None] + 0.5) % 1.0 - 0.5
    r /= width
    b = _bump(r)
    db = _bump_deriv(r) / width
    s = b.sum(axis=0)
    ds = db.sum(axis=0)
    zeta_1d = b / s
    dzeta_1d = (db * s - b * ds) / s**2

    if dim == 1:
        centers = centers_1d[:, None]
        zeta = zeta_1d
        grad_mag = np.abs(dzeta_1d)
        support_count = (b > 0.0).sum(axis=0)
    else:
        k = n_centers
        centers = np.array(
            [(centers_1d[i], centers_1d[j]) for i in range(k) for j in range(k)]
        )
        zeta = np.einsum("ix,jy->ijxy", zeta_1d, zeta_1d).reshape(k * k, n, n)
        gx = np.einsum("ix,jy->ijxy", dzeta_1d, zeta_1d).reshape(k * k, n, n)
        gy = np.einsum("ix,jy->ijxy", zeta_1d, dzeta_1d).reshape(k * k, n, n)
        grad_mag = np.sqrt(gx**2 + gy**2)
        support_1d = (b > 0.0).astype(int)
        support_count = np.einsum("ix,jy->xy", support_1d, support_1d)
    total = zeta.sum(axis=0)
    return PartitionReport(
        lam=lam,
        lam_effective=lam_eff,
        dim=dim,
        centers=centers,
        zeta=zeta,
        sum_error=float(np.abs(total - 1.0).max()),
        multiplicity=int(support_count.max()),
        mu=float((zeta**2).sum(axis=0).min()),
        max_grad=float(grad_mag.max()),
        c_hat=float(grad_mag.max()) * lam_eff,
    )
