"""Time stepping of the naturalized Schroedinger equation.

    i d psi/dt = -sum_i 1/(2 mu_i) d^2 psi/dx_i^2 + V psi + g (B . sigma) psi

Two schemes: Strang split-operator (V/2, T, V/2 with the Pauli factor fused into
the potential half steps) and Crank-Nicolson in Cayley form with a matrix-free
conjugate-gradient solve on the normal equations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .errors import GridMismatch, SolveDiverged, SpinDimMismatch, UnstableStep
from .grid import Grid, Units, WaveFunction, norm_squared, normalize

log = logging.getLogger(__name__)

SPLIT = "split"
CRANK_NICOLSON = "cn"
METHODS = (SPLIT, CRANK_NICOLSON)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Scalar potential V/hbar on the grid, plus an optional Pauli coupling.

    ``field`` has shape ``grid.shape + (3,)``; the Hamiltonian gains
    ``coupling * (field . sigma)``.
    """

    V: np.ndarray
    field: np.ndarray | None = None
    coupling: float = 0.0

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if not np.all(np.isfinite(V)):
            raise ValueError("potential must be finite on the grid")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)
        if self.coupling < 0:
            raise ValueError("Pauli coupling must be >= 0")
        if self.field is not None:
            B = np.array(self.field, dtype=float)
            if B.shape != V.shape + (3,):
                raise GridMismatch(f"field shape {B.shape} does not match potential {V.shape} + (3,)")
            if not np.all(np.isfinite(B)):
                raise ValueError("magnetic field must be finite")
            B.setflags(write=False)
            object.__setattr__(self, "field", B)

    @property
    def has_pauli(self) -> bool:
        return self.field is not None and self.coupling != 0.0

    @classmethod
    def zero(cls, grid: Grid) -> "PotentialSpec":
        return cls(np.zeros(grid.shape))


@dataclass(frozen=True)
class Propagator:
    dt: float
    units: Units = field(default_factory=Units)
    method: str = SPLIT
    tol: float = 1e-13
    max_iter: int = 500
    # with strict=False a non-converged solve or norm jump is logged, not raised
    strict: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == CRANK_NICOLSON and self.tol > 1e-10:
            raise ValueError("Crank-Nicolson solve tolerance must be <= 1e-10")

    def with_dt(self, dt: float) -> "Propagator":
        return replace(self, dt=dt)


def default_dt(grid: Grid, units: Units) -> float:
    mu = units.per_axis(grid.ndim)
    return float(np.min(0.4 * mu * grid.spacing**2 * (2 / np.pi**2)))


@lru_cache(maxsize=32)
def _kinetic_symbol(grid: Grid, mu: tuple[float, ...]) -> np.ndarray:
    ks = grid.wavenumber_mesh()
    T = sum(k**2 / (2 * m) for k, m in zip(ks, mu))
    T.setflags(write=False)
    return T


@lru_cache(maxsize=32)
def _kinetic_phase(grid: Grid, mu: tuple[float, ...], dt: float) -> np.ndarray:
    out = np.exp(-1j * dt * _kinetic_symbol(grid, mu))[..., None]
    out.setflags(write=False)
    return out


def _mu_key(grid: Grid, units: Units) -> tuple[float, ...]:
    return tuple(float(m) for m in units.per_axis(grid.ndim))


def _pauli_apply(amps: np.ndarray, B: np.ndarray, g: float, dt: float) -> np.ndarray:
    # exp(-i theta n.sigma) = cos(theta) - i sin(theta) n.sigma, theta = g dt |B|
    bnorm = np.linalg.norm(B, axis=-1)
    theta = g * dt * bnorm
    c = np.cos(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(bnorm > 0, np.sin(theta) / np.where(bnorm > 0, bnorm, 1.0), 0.0)
    sx, sy, sz = (B[..., i] * scale for i in range(3))
    up, down = amps[..., 0], amps[..., 1]
    new_up = c * up - 1j * (sz * up + (sx - 1j * sy) * down)
    new_down = c * down - 1j * ((sx + 1j * sy) * up - sz * down)
    return np.stack([new_up, new_down], axis=-1)


def pauli_substep(psi: WaveFunction, B, g: float, dt: float) -> WaveFunction:
    """Apply the exact pointwise 2x2 unitary exp(-i g dt B.sigma)."""
    if psi.spin_dim != 2:
        raise SpinDimMismatch(f"Pauli coupling needs spin_dim 2, got {psi.spin_dim}")
    B = np.broadcast_to(np.asarray(B, float), psi.grid.shape + (3,))
    return psi.replace(_pauli_apply(psi.amplitudes, B, g, dt))


def _potential_half(amps: np.ndarray, pot: PotentialSpec, dt: float) -> np.ndarray:
    amps = amps * np.exp(-0.5j * dt * pot.V)[..., None]
    if pot.has_pauli:
        amps = _pauli_apply(amps, pot.field, pot.coupling, 0.5 * dt)
    return amps


def _split_step(amps: np.ndarray, grid: Grid, pot: PotentialSpec, prop: Propagator) -> np.ndarray:
    axes = tuple(range(grid.ndim))
    amps = _potential_half(amps, pot, prop.dt)
    amps = np.fft.fftn(amps, axes=axes)
    amps *= _kinetic_phase(grid, _mu_key(grid, prop.units), prop.dt)
    amps = np.fft.ifftn(amps, axes=axes)
    return _potential_half(amps, pot, prop.dt)


def apply_hamiltonian(amps: np.ndarray, grid: Grid, pot: PotentialSpec, units: Units) -> np.ndarray:
    axes = tuple(range(grid.ndim))
    T = _kinetic_symbol(grid, _mu_key(grid, units))[..., None]
    out = np.fft.ifftn(np.fft.fftn(amps, axes=axes) * T, axes=axes)
    out += pot.V[..., None] * amps
    if pot.has_pauli:
        B = pot.field * pot.coupling
        up, down = amps[..., 0], amps[..., 1]
        out[..., 0] += B[..., 2] * up + (B[..., 0] - 1j * B[..., 1]) * down
        out[..., 1] += (B[..., 0] + 1j * B[..., 1]) * up - B[..., 2] * down
    return out


def _cn_step(amps: np.ndarray, grid: Grid, pot: PotentialSpec, prop: Propagator) -> np.ndarray:
    half = 0.5j * prop.dt

    def A(x):
        return x + half * apply_hamiltonian(x, grid, pot, prop.units)

    def A_adj(x):
        return x - half * apply_hamiltonian(x, grid, pot, prop.units)

    b = A_adj(amps)
    bnorm = np.linalg.norm(b)
    # first-order guess: x ~ (1 - i H dt) psi = 2 b - psi
    x = 2 * b - amps
    r = b - A(x)
    z = A_adj(r)
    p = z.copy()
    zz = np.vdot(z, z).real
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > prop.tol * bnorm and it < prop.max_iter:
        w = A(p)
        alpha = zz / np.vdot(w, w).real
        x += alpha * p
        r -= alpha * w
        z = A_adj(r)
        zz_new = np.vdot(z, z).real
        p = z + (zz_new / zz) * p
        zz = zz_new
        rnorm = np.linalg.norm(r)
        it += 1
    if rnorm > prop.tol * bnorm:
        msg = (f"CN solve stopped after {it} iterations with relative residual "
               f"{rnorm / bnorm:.3e} > {prop.tol:.1e}")
        if prop.strict:
            raise SolveDiverged(msg)
        log.warning(msg)
    return x


def step(psi: WaveFunction, pot: PotentialSpec, prop: Propagator) -> WaveFunction:
    """Advance ``psi`` by ``prop.dt``."""
    if pot.V.shape != psi.grid.shape:
        raise GridMismatch(f"potential shape {pot.V.shape} vs grid {psi.grid.shape}")
    if pot.has_pauli and psi.spin_dim != 2:
        raise SpinDimMismatch(f"Pauli coupling needs spin_dim 2, got {psi.spin_dim}")
    if prop.method == SPLIT:
        amps = _split_step(psi.amplitudes, psi.grid, pot, prop)
    else:
        amps = _cn_step(psi.amplitudes, psi.grid, pot, prop)
    out = WaveFunction(psi.grid, amps, psi.time + prop.dt)
    drift = abs(norm_squared(out) - norm_squared(psi))
    if drift > 1e-6:
        msg = f"norm changed by {drift:.3e} in one step (dt={prop.dt})"
        if prop.strict:
            raise UnstableStep(msg)
        log.warning(msg)
    return out


Observer = Callable[[int, WaveFunction], None]


def evolve(psi: WaveFunction, pot: PotentialSpec, prop: Propagator, n_steps: int,
           observers: Iterable[Observer] = (), stride: int | None = None
           ) -> tuple[WaveFunction, list[WaveFunction]]:
    """Apply ``step`` ``n_steps`` times.

    When ``stride`` is given, snapshots are kept (and observers called) at step 0
    and at every multiple of ``stride``.
    """
    observers = list(observers)
    snapshots: list[WaveFunction] = []

    def emit(i, state):
        if stride is not None and i % stride == 0:
            snapshots.append(state)
            for obs in observers:
                obs(i, state)

    emit(0, psi)
    for i in range(1, n_steps + 1):
        psi = step(psi, pot, prop)
        emit(i, psi)
    return psi, snapshots


@dataclass
class Stepper:
    """Binds a potential and propagator; advances by arbitrary multiples of dt."""

    pot: PotentialSpec
    prop: Propagator

    def advance(self, psi: WaveFunction, duration: float) -> WaveFunction:
        if duration == 0:
            return psi
        n = max(1, int(round(duration / self.prop.dt)))
        prop = self.prop if np.isclose(n * self.prop.dt, duration, rtol=1e-12, atol=0) \
            else self.prop.with_dt(duration / n)
        for _ in range(n):
            psi = step(psi, self.pot, prop)
        return psi


def ground_state(grid: Grid, V: np.ndarray, units: Units = Units(), tol: float = 1e-14
                 ) -> tuple[WaveFunction, float]:
    """Lowest eigenpair of the discretized scalar Hamiltonian (Lanczos).

    Unlike a sampled analytic eigenfunction, the result is stationary under the
    discrete dynamics to rounding, which the stationarity checks rely on.
    """
    from scipy.sparse.linalg import LinearOperator, eigsh

    pot = PotentialSpec(np.asarray(V, float))
    shape = grid.shape + (1,)

    def mv(x):
        return apply_hamiltonian(x.reshape(shape), grid, pot, units).ravel()

    H = LinearOperator((grid.size, grid.size), matvec=mv, dtype=complex)
    v0 = np.exp(-0.5 * sum(x**2 for x in grid.mesh())).astype(complex).ravel()
    E, vec = eigsh(H, k=1, which="SA", tol=tol, v0=v0)
    amps = vec[:, 0]
    amps = amps * np.exp(-1j * np.angle(amps[np.argmax(np.abs(amps))]))
    # H is real symmetric, so after the phase fix any imaginary part is solver noise
    psi = WaveFunction(grid, amps.real.astype(complex).reshape(shape))
    return normalize(psi), float(E[0])
