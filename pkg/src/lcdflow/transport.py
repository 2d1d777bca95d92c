"""Density transport by backward characteristics, and the trajectory
probes behind the density-oscillation analysis.

The transport equation rho_t + u . grad rho = 0 is solved in the
semi-Lagrangian way: trace each grid node backward along
dy/dtau = u(y, tau), then read the old density at the foot of the
characteristic, rho_new(x) = Interp(rho_old)(y).  Interpolation of the
density is monotone-limited cubic (cubic Lagrange, clipped to the
surrounding cell's min/max), so the discrete solution inherits the
transport maximum principle exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Field, h_norm

_trapz = getattr(np, "trapezoid", None) or np.trapz

try:  # numba accelerates the interpolation kernels; numpy path is equivalent
    import numba as _nb
except ImportError:  # pragma: no cover - exercised only without numba
    _nb = None


def _cubic_weights(t):
    """4-point Lagrange weights at offsets (-1, 0, 1, 2), t in [0, 1)."""
    w_m1 = -t * (t - 1.0) * (t - 2.0) / 6.0
    w_0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w_1 = -(t + 1.0) * t * (t - 2.0) / 2.0
    w_2 = (t + 1.0) * t * (t - 1.0) / 6.0
    return (w_m1, w_0, w_1, w_2)


def _axis_stencil(coords, n, h):
    """Per-axis base indices (mod n) and cubic weights for scattered points.

    Returns arrays of shape (4, n_points): the stencil rows correspond to
    offsets (-1, 0, 1, 2) from the cell's lower node.
    """
    xi = coords / h
    base = np.floor(xi)
    t = xi - base
    ibase = base.astype(np.int64) % n
    idx = np.stack([(ibase + off) % n for off in (-1, 0, 1, 2)])
    return idx, np.stack(_cubic_weights(t))


if _nb is not None:

    @_nb.njit(parallel=True, cache=True)
    def _interp_kernel_2d(flats, i0, i1, w0, w1, n, limit):
        n_comp, _ = flats.shape
        n_pts = i0.shape[1]
        out = np.empty((n_comp, n_pts))
        for p in _nb.prange(n_pts):
            for comp in range(n_comp):
                acc = 0.0
                for a in range(4):
                    base_a = i0[a, p] * n
                    w_a = w0[a, p]
                    for b in range(4):
                        acc += w_a * w1[b, p] * flats[comp, base_a + i1[b, p]]
                if limit:
                    lo = 1e300
                    hi = -1e300
                    for a in range(1, 3):
                        for b in range(1, 3):
                            v = flats[comp, i0[a, p] * n + i1[b, p]]
                            lo = min(lo, v)
                            hi = max(hi, v)
                    acc = min(max(acc, lo), hi)
                out[comp, p] = acc
        return out

    @_nb.njit(parallel=True, cache=True)
    def _interp_kernel_3d(flats, i0, i1, i2, w0, w1, w2, n, limit):
        n_comp, _ = flats.shape
        n_pts = i0.shape[1]
        out = np.empty((n_comp, n_pts))
        for p in _nb.prange(n_pts):
            for comp in range(n_comp):
                acc = 0.0
                for a in range(4):
                    base_a = i0[a, p] * n
                    w_a = w0[a, p]
                    for b in range(4):
                        base_ab = (base_a + i1[b, p]) * n
                        w_ab = w_a * w1[b, p]
                        for c in range(4):
                            acc += w_ab * w2[c, p] * flats[comp, base_ab + i2[c, p]]
                if limit:
                    lo = 1e300
                    hi = -1e300
                    for a in range(1, 3):
                        for b in range(1, 3):
                            for c in range(1, 3):
                                v = flats[
                                    comp, (i0[a, p] * n + i1[b, p]) * n + i2[c, p]
                                ]
                                lo = min(lo, v)
                                hi = max(hi, v)
                    acc = min(max(acc, lo), hi)
                out[comp, p] = acc
        return out


def interp_many(values_list, grid, points, limit=False):
    """Periodic cubic interpolation of several nodal arrays at shared points.

    points: array (..., dim) of physical coordinates (any reals; wrapped).
    The index/weight stencil is computed once and reused for every array.
    With ``limit=True`` each result is clipped to the min/max of its own
    2^dim nearest nodes, which keeps global bounds exactly (the monotone
    variant used for density transport).
    """
    points = np.asarray(points, dtype=np.float64)
    dim = grid.dim
    n = grid.n
    flat_pts = points.reshape(-1, dim)
    n_pts = flat_pts.shape[0]
    idx, wts = [], []
    for a in range(dim):
        ia, wa = _axis_stencil(flat_pts[:, a], n, grid.h)
        idx.append(ia)
        wts.append(wa)
    flats = np.stack([np.ascontiguousarray(v).reshape(-1) for v in values_list])
    shape = points.shape[:-1]
    if _nb is not None:
        if dim == 2:
            out = _interp_kernel_2d(flats, idx[0], idx[1], wts[0], wts[1], n, limit)
        else:
            out = _interp_kernel_3d(
                flats, idx[0], idx[1], idx[2], wts[0], wts[1], wts[2], n, limit
            )
        return [row.reshape(shape) for row in out]
    outs = [np.zeros(n_pts) for _ in values_list]
    if dim == 2:
        for a in range(4):
            base_a = idx[0][a] * n
            w_a = wts[0][a]
            for b in range(4):
                lin = base_a + idx[1][b]
                w = w_a * wts[1][b]
                for out, flat in zip(outs, flats):
                    out += w * np.take(flat, lin)
    else:
        for a in range(4):
            base_a = idx[0][a] * n
            w_a = wts[0][a]
            for b in range(4):
                base_ab = (base_a + idx[1][b]) * n
                w_ab = w_a * wts[1][b]
                for c in range(4):
                    lin = base_ab + idx[2][c]
                    w = w_ab * wts[2][c]
                    for out, flat in zip(outs, flats):
                        out += w * np.take(flat, lin)
    if limit:
        corner = (1, 2)  # stencil slots of floor and floor+1
        corner_lins = []
        if dim == 2:
            for a in corner:
                for b in corner:
                    corner_lins.append(idx[0][a] * n + idx[1][b])
        else:
            for a in corner:
                for b in corner:
                    for c in corner:
                        corner_lins.append((idx[0][a] * n + idx[1][b]) * n + idx[2][c])
        for i, flat in enumerate(flats):
            lo = np.full(n_pts, np.inf)
            hi = np.full(n_pts, -np.inf)
            for lin in corner_lins:
                v = np.take(flat, lin)
                np.minimum(lo, v, out=lo)
                np.maximum(hi, v, out=hi)
            outs[i] = np.clip(outs[i], lo, hi)
    return [out.reshape(shape) for out in outs]


def interp_values(values, grid, points, limit=False):
    """Single-array variant of :func:`interp_many`."""
    return interp_many([values], grid, points, limit=limit)[0]


class VelocityHistory:
    """Velocity snapshots (t_i, u_i) with linear interpolation in time.

    Times outside the covered interval clamp to the nearest snapshot, so a
    single snapshot acts as a steady field.
    """

    def __init__(self, snapshots):
        snaps = sorted(snapshots, key=lambda s: s[0])
        if not snaps:
            raise ValueError("empty velocity history")
        self.times = np.array([s[0] for s in snaps], dtype=float)
        self.fields = [s[1] for s in snaps]
        self.grid = self.fields[0][0].grid

    @property
    def t_min(self):
        return float(self.times[0])

    @property
    def t_max(self):
        return float(self.times[-1])

    def default_step(self):
        if len(self.times) > 1:
            return float(np.diff(self.times).min())
        return None

    def eval(self, points, t):
        """Velocity at scattered points and time t, cubic in space."""
        if len(self.times) == 1 or t <= self.times[0]:
            comps = [c.values for c in self.fields[0]]
        elif t >= self.times[-1]:
            comps = [c.values for c in self.fields[-1]]
        else:
            j = int(np.searchsorted(self.times, t, side="right"))
            t0, t1 = self.times[j - 1], self.times[j]
            w = (t - t0) / (t1 - t0)
            comps = [
                (1.0 - w) * c0.values + w * c1.values
                for c0, c1 in zip(self.fields[j - 1], self.fields[j])
            ]
        return np.stack(interp_many(comps, self.grid, points), axis=-1)

    def l2_h2_norm(self, t0, t1):
        """|| u ||_{L^2(t0, t1; H^2)} by the trapezoid rule over snapshots."""
        mask = (self.times >= t0 - 1e-12) & (self.times <= t1 + 1e-12)
        times = self.times[mask]
        if times.size < 2:
            raise ValueError("history does not cover the requested interval")
        sq = np.array(
            [h_norm(self.fields[i], 2) ** 2 for i in np.nonzero(mask)[0]]
        )
        return math.sqrt(float(_trapz(sq, times)))


@dataclass
class Trajectory:
    """A characteristic traced backward from (start, t_start).

    ``points[i]`` is the (periodically wrapped) position at ``times[i]``;
    the first entry is the start point itself.
    """

    start: np.ndarray
    t_start: float
    times: np.ndarray
    points: np.ndarray


def _rk4_trace(points, t1, t0, history, dt):
    """Backward RK4 from t1 to t0; returns (times, unwrapped positions).

    Positions are kept unwrapped so that differences of nearby
    trajectories stay meaningful; wrap with ``% grid.length`` as needed
    (the velocity lookup wraps internally).
    """
    if t0 > t1:
        raise ValueError(f"need t0 <= t1, got t0={t0} > t1={t1}")
    n_steps = max(1, int(round((t1 - t0) / dt))) if t1 > t0 else 0
    y = np.array(points, dtype=np.float64)
    times = [t1]
    path = [y.copy()]
    h_step = (t1 - t0) / n_steps if n_steps else 0.0
    tau = t1
    for _ in range(n_steps):
        k1 = history.eval(y, tau)
        k2 = history.eval(y - 0.5 * h_step * k1, tau - 0.5 * h_step)
        k3 = history.eval(y - 0.5 * h_step * k2, tau - 0.5 * h_step)
        k4 = history.eval(y - h_step * k3, tau - h_step)
        y = y - (h_step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tau -= h_step
        times.append(tau)
        path.append(y.copy())
    return np.array(times), np.array(path)


def trace_characteristic(x, t1, t0, u_history, dt=None):
    """Trace dy/dtau = u(y, tau) backward from y(t1) = x down to t0.

    ``u_history`` is an iterable of (time, velocity fields) snapshots that
    must cover [t0, t1]; the integrator step defaults to the snapshot
    spacing (the solver dt), or to t1 - t0 for a single snapshot.
    """
    history = u_history if isinstance(u_history, VelocityHistory) else VelocityHistory(u_history)
    if t1 > t0 and len(history.times) > 1:
        if t0 < history.t_min - 1e-9 or t1 > history.t_max + 1e-9:
            raise ValueError(
                f"history covers [{history.t_min}, {history.t_max}], "
                f"requested [{t0}, {t1}]"
            )
    if dt is None:
        dt = history.default_step() or (t1 - t0 if t1 > t0 else 1.0)
    x = np.asarray(x, dtype=np.float64)
    times, path = _rk4_trace(x[None, :], t1, t0, history, dt)
    wrapped = path[:, 0, :] % history.grid.length
    wrapped[0] = x  # y(t1) = x exactly, untouched by wrapping noise
    return Trajectory(start=x, t_start=t1, times=times, points=wrapped)


def advect_density(rho, u_history, dt):
    """One semi-Lagrangian transport step of size dt.

    The new density corresponds to time (latest snapshot time + dt); each
    node is traced back over [t, t + dt] through the time-interpolated
    history (a single snapshot acts as a frozen field) and the old
    density is read there with monotone-limited cubic interpolation, so
    min/max never expand.
    """
    history = u_history if isinstance(u_history, VelocityHistory) else VelocityHistory(u_history)
    grid = rho.grid
    if all(
        float(np.abs(c.values).max()) == 0.0 for snap in history.fields for c in snap
    ):
        return Field(grid, rho.values.copy())
    t_n = history.t_max
    nodes = np.stack([m.reshape(-1) for m in grid.mesh()], axis=-1)
    _, path = _rk4_trace(nodes, t_n + dt, t_n, history, dt)
    feet = path[-1]
    new_vals = interp_values(rho.values, grid, feet, limit=True)
    return Field(grid, new_vals.reshape(grid.shape))


@dataclass
class SeparationReport:
    """How far two backward characteristics drift apart.

    ``excess`` is max over tau of |z|^(1-alpha) - |x1-x2|^(1-alpha).
    ``quotient`` is the excess normalized by the separation scale and by
    T^(1/2) ||u||_{L^2(0,T;H^2)} (the trajectory-independent driver of the
    bound); ``quotient_raw`` omits the separation normalization and is
    only asserted to stay bounded.
    """

    separation: float
    alpha: float
    excess: float
    quotient: float
    quotient_raw: float
    driver: float


def separation_check(x1, x2, t, u_history, alpha=0.5):
    """Probe the two-characteristic separation bound at exponent alpha <= 1/2."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if np.allclose(x1, x2):
        raise ValueError("separation_check needs two distinct points")
    if not alpha <= 0.5:
        raise ValueError("alpha must be <= 1/2")
    history = u_history if isinstance(u_history, VelocityHistory) else VelocityHistory(u_history)
    t0 = history.t_min
    dt = history.default_step() or (t - t0)
    pts = np.stack([x1, x2], axis=0)
    _, path = _rk4_trace(pts, t, t0, history, dt)
    length = history.grid.length
    z0 = (x1 - x2 + 0.5 * length) % length - 0.5 * length
    z = path[:, 0, :] - path[:, 1, :]
    z[0] = z0
    dist = np.sqrt((z**2).sum(axis=1))
    sep = float(np.sqrt((z0**2).sum()))
    power = 1.0 - alpha
    excess = float(np.max(dist**power) - sep**power)
    big_t = t - t0
    driver = math.sqrt(big_t) * history.l2_h2_norm(t0, t)
    quotient_raw = excess / driver if driver > 0 else 0.0
    quotient = excess / (sep**power * driver) if driver > 0 else 0.0
    return SeparationReport(
        separation=sep,
        alpha=alpha,
        excess=excess,
        quotient=quotient,
        quotient_raw=quotient_raw,
        driver=driver,
    )


def _ball_offsets(grid, r0):
    """Integer node offsets within Euclidean distance r0 (excluding none)."""
    reach = int(math.floor(r0 / grid.h))
    rng = range(-reach, reach + 1)
    offsets = []
    if grid.dim == 2:
        for i in rng:
            for j in rng:
                if (i * i + j * j) * grid.h**2 <= r0**2 + 1e-12:
                    offsets.append((i, j))
    else:
        for i in rng:
            for j in rng:
                for k in rng:
                    if (i * i + j * j + k * k) * grid.h**2 <= r0**2 + 1e-12:
                        offsets.append((i, j, k))
    return offsets


def oscillation_probe(rho_history, r0):
    """Per-point density oscillation over discrete space-time balls.

    For each center (p, t1) the probe takes the sup of
    |rho(q, t2) - rho(p, t1)| over grid nodes q within distance r0 of p
    and snapshot times t2 with |t2 - t1| <= r0; the returned Field holds
    the sup over t1 as well (the worst center at each node).
    """
    snaps = sorted(rho_history, key=lambda s: s[0])
    times = [s[0] for s in snaps]
    grid = snaps[0][1].grid
    if not r0 < grid.length / 2:
        raise ValueError("r0 must be smaller than half the box")
    offsets = _ball_offsets(grid, r0)
    out = np.zeros(grid.shape)
    axes = tuple(range(grid.dim))
    for i1, t1 in enumerate(times):
        base = snaps[i1][1].values
        for i2, t2 in enumerate(times):
            if abs(t2 - t1) > r0 + 1e-12:
                continue
            other = snaps[i2][1].values
            for off in offsets:
                shifted = np.roll(other, shift=tuple(-o for o in off), axis=axes)
                np.maximum(out, np.abs(shifted - base), out=out)
    return Field(grid, out)
