"""Shared constructions for the test suite."""

import numpy as np

from lcdflow.fields import Field, dealias_vector, leray_project, to_physical
from lcdflow.model import Params, SimState


def random_band_limited(grid, rng, kmax=None, zero_mean=True):
    """Random smooth field with spectrum confined to |k_i| <= kmax."""
    if kmax is None:
        kmax = grid.kmax
    white = Field(grid, rng.standard_normal(grid.shape))
    keep = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        idx = np.abs(grid.mode_index).reshape(grid._axis_shape(a))
        keep &= idx <= kmax
    hat = white.hat * keep
    if zero_mean:
        hat[(0,) * grid.dim] = 0.0
    return to_physical(grid, hat)


def random_divergence_free(grid, rng, kmax=None, scale=1.0):
    comps = [random_band_limited(grid, rng, kmax=kmax) for _ in range(grid.dim)]
    comps = leray_project(comps)
    return tuple(Field(grid, scale * c.values) for c in comps)


def unit_director_2d(grid, angle_values):
    return (Field(grid, np.cos(angle_values)), Field(grid, np.sin(angle_values)))


def make_state(grid, rho, u, d, params=None, t=0.0):
    params = params or Params(m1=0.5, m2=2.0)
    return SimState(rho=rho, u=u, d=d, t=t, params=params)


def resample(field, fine_grid):
    """Evaluate a band-limited field on a finer grid by spectral padding."""
    coarse = field.grid
    hat = field.hat
    out = np.zeros(fine_grid.shape, dtype=complex)
    n_c = coarse.n
    idx = np.fft.fftfreq(n_c, d=1.0 / n_c).astype(int)
    if coarse.dim == 2:
        for i, ki in enumerate(idx):
            for j, kj in enumerate(idx):
                out[ki % fine_grid.n, kj % fine_grid.n] = hat[i, j]
    else:
        for i, ki in enumerate(idx):
            for j, kj in enumerate(idx):
                for k, kk in enumerate(idx):
                    out[ki % fine_grid.n, kj % fine_grid.n, kk % fine_grid.n] = hat[
                        i, j, k
                    ]
    return to_physical(fine_grid, out)
