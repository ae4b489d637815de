"""Probability current and the guiding velocity field v = J / rho.

For spinors the bilinears in numerator and denominator are spinor inner
products, so all components share one velocity field.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import OutOfBox, SpinorNotSupported
from .grid import Grid, Units, WaveFunction, density

DEFAULT_EPS_RHO = 1e-12


@dataclass(frozen=True, eq=False)
class CurrentField:
    grid: Grid
    J: np.ndarray  # grid.shape + (ndim,)
    rho: np.ndarray
    time: float = 0.0


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: Grid
    v: np.ndarray
    J: np.ndarray
    rho: np.ndarray
    eps_rho: float
    v_cap: float
    time: float = 0.0

    @property
    def floor(self) -> float:
        return self.eps_rho * float(np.max(self.rho))


def _derivative(amps: np.ndarray, grid: Grid, axis: int, method: str) -> np.ndarray:
    if method == "spectral":
        return spectral.gradient(amps, grid, axis)
    if method == "central":
        return spectral.gradient_central(amps, grid, axis)
    raise ValueError(f"unknown differentiation method {method!r}")


def current(psi: WaveFunction, units: Units, method: str = "spectral") -> CurrentField:
    """J_i = (1/mu_i) Im <psi, d_i psi>_spin at every grid point."""
    grid = psi.grid
    mu = units.per_axis(grid.ndim)
    a = psi.amplitudes
    J = np.empty(grid.shape + (grid.ndim,))
    for i in range(grid.ndim):
        da = _derivative(a, grid, i, method)
        J[..., i] = np.sum(a.conj() * da, axis=-1).imag / mu[i]
    rho = density(psi)
    J[rho == 0] = 0.0
    return CurrentField(grid, J, rho, psi.time)


def _soft_ratio(J: np.ndarray, rho: np.ndarray, floor: float) -> np.ndarray:
    denom = np.where(rho >= floor, rho, rho + floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = J / denom[..., None]
    return np.where(denom[..., None] > 0, v, 0.0)


def _cap(v: np.ndarray, v_cap: float) -> np.ndarray:
    if not np.isfinite(v_cap):
        return v
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(speed > v_cap, v * (v_cap / np.maximum(speed, 1e-300)), v)


def velocity_field(psi: WaveFunction, units: Units, eps_rho: float = DEFAULT_EPS_RHO,
                   v_cap: float = np.inf, method: str = "spectral") -> VelocityField:
    """Guiding field v = J / rho with a soft density floor ``eps_rho * max(rho)``."""
    cf = current(psi, units, method)
    floor = eps_rho * float(np.max(cf.rho))
    v = _cap(_soft_ratio(cf.J, cf.rho, floor), v_cap)
    return VelocityField(psi.grid, v, cf.J, cf.rho, eps_rho, v_cap, psi.time)


def velocity_im_grad(psi: WaveFunction, units: Units, method: str = "spectral") -> np.ndarray:
    """v_i = (1/mu_i) Im(d_i psi / psi); NaN where psi vanishes. Scalar only."""
    if psi.spin_dim != 1:
        raise SpinorNotSupported("Im(grad psi / psi) is defined for scalar wave functions")
    grid = psi.grid
    mu = units.per_axis(grid.ndim)
    a = psi.scalar
    v = np.full(grid.shape + (grid.ndim,), np.nan)
    nz = a != 0
    for i in range(grid.ndim):
        da = _derivative(a, grid, i, method)
        v[..., i][nz] = (da[nz] / a[nz]).imag / mu[i]
    return v


def _lagrange_weights(f: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Node offsets and weights for 1D interpolation at fractional position f."""
    if order == 1:
        return np.array([0, 1]), np.stack([1 - f, f])
    if order == 3:
        offsets = np.array([-1, 0, 1, 2])
        w = np.stack([
            -f * (f - 1) * (f - 2) / 6,
            (f + 1) * (f - 1) * (f - 2) / 2,
            -(f + 1) * f * (f - 2) / 2,
            (f + 1) * f * (f - 1) / 6,
        ])
        return offsets, w
    raise ValueError(f"interpolation order must be 1 or 3, got {order}")


def interpolate(values: np.ndarray, grid: Grid, q: np.ndarray, order: int = 1) -> np.ndarray:
    """Periodic tensor-product Lagrange interpolation of ``values`` at points ``q``.

    ``values`` has shape ``grid.shape + trailing``; the result is ``(n,) + trailing``.
    ``order=1`` is multilinear, ``order=3`` is local cubic.
    """
    q = np.atleast_2d(np.asarray(q, float))
    per_axis = []
    for i, ax in enumerate(grid.axes):
        s = (q[:, i] - ax.lower) / ax.spacing
        base = np.floor(s)
        offsets, w = _lagrange_weights(s - base, order)
        idx = (base.astype(np.int64)[None, :] + offsets[:, None]) % ax.points
        per_axis.append((idx, w))
    trailing = values.shape[grid.ndim:]
    out = np.zeros((q.shape[0],) + trailing, dtype=np.result_type(values.dtype, float))
    wshape = (q.shape[0],) + (1,) * len(trailing)
    for combo in itertools.product(*(range(len(w)) for _, w in per_axis)):
        weight = np.ones(q.shape[0])
        index = []
        for (idx, w), c in zip(per_axis, combo):
            weight = weight * w[c]
            index.append(idx[c])
        out += weight.reshape(wshape) * values[tuple(index)]
    return out


def velocity_at(vf: VelocityField, q: np.ndarray, order: int = 1) -> np.ndarray:
    """Velocity at off-grid configurations ``q`` of shape ``(n, d)`` or ``(d,)``.

    J and rho are interpolated separately and then divided with the same soft
    floor as on the grid.
    """
    q = np.asarray(q, float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    inside = vf.grid.contains(q)
    if not np.all(inside):
        bad = q[~inside][0]
        raise OutOfBox(f"configuration {bad} lies outside the grid box")
    J = interpolate(vf.J, vf.grid, q, order)
    rho = interpolate(vf.rho, vf.grid, q, order)
    if order != 1:
        rho = np.maximum(rho, 0.0)
    v = _cap(_soft_ratio(J, rho, vf.floor), vf.v_cap)
    return v[0] if single else v


def divergence(F: np.ndarray, grid: Grid, method: str = "spectral") -> np.ndarray:
    """sum_i d_i F_i for a vector field of shape ``grid.shape + (ndim,)``."""
    return sum(_derivative(F[..., i], grid, i, method) for i in range(grid.ndim))


def continuity_residual(psi0: WaveFunction, psi1: WaveFunction, units: Units,
                        method: str = "spectral") -> np.ndarray:
    """(rho1 - rho0)/dt + div (J0 + J1)/2, centred between two snapshots."""
    dt = psi1.time - psi0.time
    if not dt > 0:
        raise ValueError("snapshots must be ordered in time")
    J = 0.5 * (current(psi0, units, method).J + current(psi1, units, method).J)
    return (density(psi1) - density(psi0)) / dt + divergence(J, psi0.grid, method)
