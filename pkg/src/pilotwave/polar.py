"""Polar form psi = R exp(iS), the quantum potential and Hamilton-Jacobi diagnostics.

Diagnostics only: trajectories are always driven by ``guidance``. The phase is
recovered by a greedy flood fill from the densest point, so gradients of S come
from finite differences of the unwrapped phase and never touch Im(grad psi / psi).
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import spectral
from .errors import SpinorNotSupported, UnwrapInconsistent
from .grid import Grid, Units, WaveFunction
from .guidance import interpolate, velocity_field, velocity_im_grad

MASK_FLOOR = 1e-10


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class PolarField:
    grid: Grid
    R: np.ndarray
    S: np.ndarray  # NaN where masked
    mask: np.ndarray  # True where rho is below the floor or around a vortex
    vortices: int = 0
    U: np.ndarray | None = None
    time: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return self.R**2


def _vortex_mask(theta: np.ndarray, low: np.ndarray) -> tuple[np.ndarray, int]:
    """Mark corners of plaquettes whose phase winds by a nonzero multiple of 2 pi.

    Plaquettes with a corner in ``low`` (density below the floor) are skipped.
    """
    mask = np.zeros(theta.shape, bool)
    count = 0
    for a, b in itertools.combinations(range(theta.ndim), 2):
        sl = [slice(None)] * theta.ndim

        def take(da, db):
            s = list(sl)
            s[a] = slice(da, theta.shape[a] - 1 + da)
            s[b] = slice(db, theta.shape[b] - 1 + db)
            return theta[tuple(s)], tuple(s)

        c00, s00 = take(0, 0)
        c10, s10 = take(1, 0)
        c11, s11 = take(1, 1)
        c01, s01 = take(0, 1)
        winding = (_wrap(c10 - c00) + _wrap(c11 - c10) + _wrap(c01 - c11) + _wrap(c00 - c01))
        skip = low[s00] | low[s10] | low[s11] | low[s01]
        hit = (np.abs(winding) > np.pi) & ~skip
        count += int(hit.sum())
        for s in (s00, s10, s11, s01):
            mask[s] |= hit
    return mask, count


def _flood_unwrap(theta: np.ndarray, rho: np.ndarray, mask: np.ndarray) -> np.ndarray:
    S = np.full(theta.shape, np.nan)
    if np.all(mask):
        return S
    start = np.unravel_index(np.argmax(np.where(mask, -np.inf, rho)), theta.shape)
    S[start] = theta[start]
    done = np.zeros(theta.shape, bool)
    heap = [(-rho[start], start)]
    shape = theta.shape
    while heap:
        _, node = heapq.heappop(heap)
        if done[node]:
            continue
        done[node] = True
        for ax in range(len(shape)):
            for d in (-1, 1):
                j = node[ax] + d
                if j < 0 or j >= shape[ax]:
                    continue
                nb = node[:ax] + (j,) + node[ax + 1:]
                if mask[nb] or done[nb]:
                    continue
                if np.isnan(S[nb]):
                    S[nb] = S[node] + _wrap(theta[nb] - S[node])
                heapq.heappush(heap, (-rho[nb], nb))
    # components not reachable from the densest point stay NaN
    return S


def polar_decompose(psi: WaveFunction, units: Units | None = None,
                    floor: float = MASK_FLOOR) -> PolarField:
    """R = |psi|, S = unwrapped arg(psi); the quantum potential is filled in if
    ``units`` are given."""
    if psi.spin_dim != 1:
        raise SpinorNotSupported("polar decomposition is only defined for scalar wave functions")
    a = psi.scalar
    R = np.abs(a)
    rho = R**2
    theta = np.angle(a)
    mask = rho < floor * rho.max()
    vmask, count = _vortex_mask(theta, mask) if psi.grid.ndim > 1 else (None, 0)
    if vmask is not None:
        mask = mask | vmask
    S = _flood_unwrap(theta, rho, mask)
    mask = mask | np.isnan(S)
    pf = PolarField(psi.grid, R, S, mask, count, None, psi.time)
    if units is not None:
        pf = replace(pf, U=quantum_potential(pf, units))
    return pf


def fd_gradient(f: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Fourth-order central difference without wrap-around; NaN near edges/NaNs."""
    h = grid.axes[axis].spacing
    n = f.shape[axis]
    out = np.full(f.shape, np.nan)

    def sl(lo, hi):
        s = [slice(None)] * f.ndim
        s[axis] = slice(lo, hi)
        return tuple(s)

    out[sl(2, n - 2)] = (-f[sl(4, n)] + 8 * f[sl(3, n - 1)]
                         - 8 * f[sl(1, n - 3)] + f[sl(0, n - 4)]) / (12 * h)
    return out


def phase_gradient(pf: PolarField) -> np.ndarray:
    """grad S, shape ``grid.shape + (ndim,)``; NaN where the stencil meets the mask."""
    return np.stack([fd_gradient(pf.S, pf.grid, i) for i in range(pf.grid.ndim)], axis=-1)


def polar_velocity(pf: PolarField, units: Units) -> np.ndarray:
    """v = grad S / mu."""
    return phase_gradient(pf) / units.per_axis(pf.grid.ndim)


def route_comparison(psi: WaveFunction, units: Units) -> dict[str, float]:
    """Pairwise max differences between J/rho, Im(grad psi / psi)/mu and grad S/mu
    over the unmasked points of the polar decomposition."""
    v_flux = velocity_field(psi, units, eps_rho=0.0).v
    v_log = velocity_im_grad(psi, units)
    v_phase = polar_velocity(polar_decompose(psi), units)
    ok = np.all(np.isfinite(v_phase), axis=-1) & np.all(np.isfinite(v_log), axis=-1)

    def gap(a, b):
        return float(np.max(np.abs(a - b)[ok])) if ok.any() else np.nan

    return {"flux_vs_log": gap(v_flux, v_log), "flux_vs_phase": gap(v_flux, v_phase),
            "log_vs_phase": gap(v_log, v_phase)}


def quantum_potential(pf: PolarField, units: Units) -> np.ndarray:
    """U = -sum_i (1 / 2 mu_i) (d_i^2 R) / R, NaN on the mask."""
    mu = units.per_axis(pf.grid.ndim)
    lap = spectral.laplacian(pf.R, pf.grid, weights=1.0 / (2 * mu))
    U = np.full(pf.R.shape, np.nan)
    ok = ~pf.mask
    U[ok] = -lap[ok] / pf.R[ok]
    return U


def _kinetic(pf: PolarField, units: Units) -> np.ndarray:
    gS = phase_gradient(pf)
    mu = units.per_axis(pf.grid.ndim)
    return np.sum(gS**2 / (2 * mu), axis=-1)


@dataclass(frozen=True)
class HJResidual:
    field: np.ndarray
    max: float
    l2: float
    jump_fraction: float


def hj_residual(pf0: PolarField, pf1: PolarField, V: np.ndarray, units: Units,
                dt: float | None = None, max_jump_fraction: float = 1e-3) -> HJResidual:
    """dS/dt + |grad S|^2 / 2mu + V + U from two snapshots ``dt`` apart.

    Time derivative is centred between the snapshots; the other terms are the
    average over both. Norms are taken over points valid in both snapshots.
    """
    if dt is None:
        dt = pf1.time - pf0.time
    U0 = pf0.U if pf0.U is not None else quantum_potential(pf0, units)
    U1 = pf1.U if pf1.U is not None else quantum_potential(pf1, units)
    valid = ~(pf0.mask | pf1.mask)
    d = pf1.S - pf0.S
    offset = 2 * np.pi * np.round(np.median(d[valid]) / (2 * np.pi))
    d = d - offset
    jumps = np.abs(d[valid]) > np.pi
    frac = float(jumps.mean()) if jumps.size else 0.0
    if frac > max_jump_fraction:
        raise UnwrapInconsistent(f"phase jumps > pi on {frac:.2%} of valid points")
    dSdt = _wrap(d) / dt
    rest = 0.5 * ((_kinetic(pf0, units) + U0) + (_kinetic(pf1, units) + U1)) + V
    res = np.where(valid, dSdt + rest, np.nan)
    finite = np.isfinite(res)
    vals = res[finite]
    return HJResidual(res, float(np.max(np.abs(vals))),
                      float(np.sqrt(np.sum(vals**2) * pf0.grid.cell_volume)), frac)


def quantum_force(pf: PolarField, V: np.ndarray, units: Units) -> np.ndarray:
    """-(1/mu) grad(V + U) on the grid (finite differences, NaN near the mask)."""
    U = pf.U if pf.U is not None else quantum_potential(pf, units)
    total = V + U
    mu = units.per_axis(pf.grid.ndim)
    return np.stack([-fd_gradient(total, pf.grid, i) / mu[i] for i in range(pf.grid.ndim)],
                    axis=-1)


@dataclass(frozen=True)
class NewtonReport:
    max_deviation: float
    mean_deviation: float
    max_acceleration: float


def newtonian_check(times: np.ndarray, positions: np.ndarray, polar_fields: list[PolarField],
                    V: np.ndarray, units: Units, fd_order: int = 4) -> NewtonReport:
    """Compare finite-difference accelerations along trajectories with the
    classical force of V plus the quantum potential.

    The acceleration uses a centred stencil of order ``fd_order`` in time, so the
    deviation exposes the trajectory integrator's own error.

    ``positions`` has shape ``(T, n, d)`` on equally spaced ``times``;
    ``polar_fields[j]`` is the decomposition at ``times[j]``.
    """
    times = np.asarray(times, float)
    positions = np.asarray(positions, float)
    if positions.ndim == 2:
        positions = positions[:, None, :]
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-9):
        raise ValueError("newtonian_check needs equally spaced output times")
    dt = dts[0]
    if fd_order == 2:
        w = 1
        acc = (positions[2:] - 2 * positions[1:-1] + positions[:-2]) / dt**2
    elif fd_order == 4:
        w = 2
        acc = (-positions[4:] + 16 * positions[3:-1] - 30 * positions[2:-2]
               + 16 * positions[1:-3] - positions[:-4]) / (12 * dt**2)
    else:
        raise ValueError("fd_order must be 2 or 4")
    devs, accs = [], []
    for j in range(w, len(times) - w):
        force = quantum_force(polar_fields[j], V, units)
        f = interpolate(force, polar_fields[j].grid, positions[j], order=3)
        devs.append(np.linalg.norm(acc[j - w] - f, axis=-1))
        accs.append(np.linalg.norm(acc[j - w], axis=-1))
    devs = np.concatenate(devs)
    return NewtonReport(float(np.nanmax(devs)), float(np.nanmean(devs)),
                        float(np.max(np.concatenate(accs))))


def classicality_metric(pf: PolarField, units: Units, V: np.ndarray | None = None,
                        floor: float = 1e-300) -> float:
    """Share of |U| in the rho-weighted energy budget; 0 for classical-like motion.

    A heuristic scale in [0, 1], useful for ordering states, not an absolute measure.
    """
    U = pf.U if pf.U is not None else quantum_potential(pf, units)
    kin = _kinetic(pf, units)
    Vs = np.zeros_like(pf.R) if V is None else np.abs(V - np.min(V))
    w = pf.rho
    ok = np.isfinite(U) & np.isfinite(kin)
    num = np.sum(w[ok] * np.abs(U[ok]))
    den = np.sum(w[ok] * (kin[ok] + np.abs(U[ok]) + Vs[ok])) + floor
    return float(num / den)
