"""Periodic grids, spectral transforms, differential operators, and norms.

Everything lives on a uniform periodic box sampled at ``n`` points per
axis.  The forward transform divides by the point count, so the zero mode
of a spectrum equals the field mean.  Differentiation, the Leray
projection, and H^s seminorms act per Fourier mode.  Nonlinear products
formed in physical space must be passed through :func:`dealias` (2/3-rule
mask) before they feed back into spectral work.

Quadrature is the trapezoid rule on the uniform grid (a plain grid sum
times the cell volume), which is spectrally accurate for smooth periodic
integrands and exact for trigonometric polynomials resolved by the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as _sfft

# Below this size multithreaded FFTs cost more than they save.
_FFT_WORKER_CUTOFF = 1 << 15


def _fftn(a):
    return _sfft.fftn(a, workers=-1 if a.size >= _FFT_WORKER_CUTOFF else 1)


def _ifftn(a):
    return _sfft.ifftn(a, workers=-1 if a.size >= _FFT_WORKER_CUTOFF else 1)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic box [0, length)^dim with n points per axis."""

    dim: int
    n: int
    length: float = 2.0 * math.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"grid dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"grid n must be a power of two >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError("grid length must be positive")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n**self.dim

    @property
    def h(self):
        return self.length / self.n

    @property
    def cell_volume(self):
        return self.h**self.dim

    @property
    def volume(self):
        return self.length**self.dim

    @property
    def kmax(self):
        """Largest retained integer mode under the 2/3 rule."""
        return self.n // 3

    @cached_property
    def axis_points(self):
        return np.arange(self.n) * self.h

    def mesh(self):
        """Full coordinate arrays (X, Y[, Z]), each of shape ``grid.shape``."""
        return np.meshgrid(*(self.axis_points,) * self.dim, indexing="ij")

    @cached_property
    def mode_index(self):
        """Integer mode numbers along one axis, FFT ordering."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    def _axis_shape(self, axis):
        shape = [1] * self.dim
        shape[axis] = self.n
        return tuple(shape)

    @cached_property
    def wavenumbers(self):
        """Physical wavenumber arrays, one broadcastable array per axis."""
        scale = 2.0 * math.pi / self.length
        return tuple(
            (scale * self.mode_index).reshape(self._axis_shape(a))
            for a in range(self.dim)
        )

    @cached_property
    def k_squared(self):
        k2 = np.zeros(self.shape)
        for k in self.wavenumbers:
            k2 = k2 + k**2
        return k2

    @cached_property
    def deriv_factors(self):
        """ik per axis with the Nyquist mode zeroed (odd derivative of a
        real field has no consistent Nyquist contribution)."""
        factors = []
        for a in range(self.dim):
            k = self.wavenumbers[a].copy()
            k[np.abs(self.mode_index).reshape(self._axis_shape(a)) == self.n // 2] = 0.0
            factors.append(1j * k)
        return tuple(factors)

    @cached_property
    def dealias_mask(self):
        keep = np.ones(self.shape, dtype=bool)
        for a in range(self.dim):
            idx = np.abs(self.mode_index).reshape(self._axis_shape(a))
            keep &= idx <= self.kmax
        return keep


class Field:
    """Real scalar samples on a grid, with a lazily cached spectral view.

    Treat instances as immutable: every operator returns a fresh Field.
    The cached spectrum is always the transform of ``values``, so state
    round-trips through plain arrays (checkpoints) bit-exactly.
    """

    __slots__ = ("grid", "values", "_hat")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        self.grid = grid
        self.values = values
        self._hat = None

    @property
    def hat(self):
        if self._hat is None:
            self._hat = _fftn(self.values) / self.grid.size
        return self._hat

    def copy(self):
        return Field(self.grid, self.values.copy())


def constant_field(grid, value):
    return Field(grid, np.full(grid.shape, float(value)))


def to_spectral(f):
    """Spectral coefficients of a field (zero mode = mean).

    Rejects non-finite samples; otherwise a plain normalized FFT.
    """
    if not np.isfinite(f.values).all():
        raise ValueError("field has non-finite samples")
    return f.hat


def to_physical(grid, hat):
    """Inverse of :func:`to_spectral`; imaginary residue is discarded."""
    return Field(grid, np.real(_ifftn(np.asarray(hat)) * grid.size))


def derivative(f, axis):
    """Spectral partial derivative along ``axis`` (exact for resolved modes)."""
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.grid.dim}")
    return to_physical(f.grid, f.hat * f.grid.deriv_factors[axis])


def gradient(f):
    return tuple(derivative(f, a) for a in range(f.grid.dim))


def laplacian(f):
    return to_physical(f.grid, -f.grid.k_squared * f.hat)


def divergence(v):
    grid = v[0].grid
    out = np.zeros(grid.shape, dtype=complex)
    for a, comp in enumerate(v):
        out += comp.hat * grid.deriv_factors[a]
    return to_physical(grid, out)


def dealias(f):
    """Zero all modes above the 2/3 cutoff (apply after nonlinear products)."""
    return to_physical(f.grid, f.hat * f.grid.dealias_mask)


def dealias_vector(v):
    return tuple(dealias(c) for c in v)


def leray_project(v):
    """L2-orthogonal projection onto divergence-free fields.

    Per mode: u - k (k.u) / |k|^2; the zero mode (the mean) is untouched.
    Annihilates gradients, fixes divergence-free input, absorbs pressure.
    """
    grid = v[0].grid
    hats = [c.hat for c in v]
    k = grid.wavenumbers
    k2 = grid.k_squared
    kdotu = np.zeros(grid.shape, dtype=complex)
    for a in range(grid.dim):
        kdotu += k[a] * hats[a]
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(k2 > 0, kdotu / np.where(k2 > 0, k2, 1.0), 0.0)
    return tuple(to_physical(grid, hats[a] - k[a] * scale) for a in range(grid.dim))


def _magnitude_squared(f):
    if isinstance(f, Field):
        return f.values**2, f.grid
    grid = f[0].grid
    mag2 = np.zeros(grid.shape)
    for comp in f:
        mag2 += comp.values**2
    return mag2, grid


def lp_norm(f, p):
    """L^p norm, p in {2, 4, inf}; vector input uses the pointwise magnitude."""
    mag2, grid = _magnitude_squared(f)
    if p == 2:
        return math.sqrt(float(mag2.sum()) * grid.cell_volume)
    if p == 4:
        return (float((mag2**2).sum()) * grid.cell_volume) ** 0.25
    if p in (np.inf, math.inf, "inf"):
        return math.sqrt(float(mag2.max()))
    raise ValueError(f"unsupported p: {p!r}")


def h_seminorm(f, order):
    """Homogeneous H^order seminorm via spectral multipliers, order in {1, 2}.

    order 1 gives ||grad f||_L2 and order 2 gives ||Lap f||_L2; both are
    computed through Parseval, so no inverse transform is needed.
    """
    if order not in (1, 2):
        raise ValueError(f"unsupported seminorm order: {order!r}")
    comps = (f,) if isinstance(f, Field) else tuple(f)
    grid = comps[0].grid
    mult = grid.k_squared**order
    total = 0.0
    for comp in comps:
        total += float((mult * np.abs(comp.hat) ** 2).sum())
    return math.sqrt(grid.volume * total)


def h_norm(f, order=2):
    """Full (inhomogeneous) Sobolev norm up to ``order``."""
    comps = (f,) if isinstance(f, Field) else tuple(f)
    total = lp_norm(comps if len(comps) > 1 else comps[0], 2) ** 2
    for o in range(1, order + 1):
        total += h_seminorm(comps if len(comps) > 1 else comps[0], o) ** 2
    return math.sqrt(total)


def integrate(f):
    return float(f.values.sum()) * f.grid.cell_volume


def l2_inner(f, g):
    return float((f.values * g.values).sum()) * f.grid.cell_volume
