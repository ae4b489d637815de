"""Rectangular periodic grids and (spinor-valued) wave functions on them.

Everything internal is in naturalized units: hbar = 1 and each axis carries a
naturalized mass mu = m / hbar (dimension time / length**2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatch, InvalidExtent, NotNormalized

DEFAULT_POINT_BUDGET = 1 << 22
MIN_POINTS = 8


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Axis:
    lower: float
    upper: float
    points: int

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / self.points

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def nodes(self) -> np.ndarray:
        return self.lower + self.spacing * np.arange(self.points)

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)


@dataclass(frozen=True)
class Grid:
    """Periodic box; node j on an axis sits at ``lower + j * spacing``."""

    axes: tuple[Axis, ...]

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.points for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a.spacing for a in self.axes])

    @property
    def lower(self) -> np.ndarray:
        return np.array([a.lower for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a.upper for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def box_diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def nodes(self, axis: int) -> np.ndarray:
        return self.axes[axis].nodes()

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays broadcast to the full grid shape (``ij`` indexing)."""
        return np.meshgrid(*(a.nodes() for a in self.axes), indexing="ij")

    def wavenumber_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*(a.wavenumbers() for a in self.axes), indexing="ij")

    def contains(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        return np.all((q >= self.lower) & (q <= self.upper), axis=-1)

    def sub(self, axes: Sequence[int]) -> "Grid":
        return Grid(tuple(self.axes[i] for i in axes))

    def __mul__(self, other: "Grid") -> "Grid":
        return Grid(self.axes + other.axes)


def make_grid(extents, max_points: int = DEFAULT_POINT_BUDGET) -> Grid:
    """Build a grid from ``[(lower, upper, points), ...]``, one triple per axis."""
    axes = []
    for ext in extents:
        try:
            lo, hi, n = ext
        except (TypeError, ValueError) as exc:
            raise InvalidExtent(f"extent {ext!r} is not a (lower, upper, points) triple") from exc
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise InvalidExtent(f"bounds must satisfy lower < upper, got ({lo}, {hi})")
        if int(n) != n or not _is_power_of_two(int(n)) or n < MIN_POINTS:
            raise InvalidExtent(f"points must be a power of two >= {MIN_POINTS}, got {n}")
        axes.append(Axis(float(lo), float(hi), int(n)))
    if not axes or len(axes) > 3:
        raise InvalidExtent(f"grid dimension must be 1, 2 or 3, got {len(axes)}")
    grid = Grid(tuple(axes))
    if grid.size > max_points:
        raise InvalidExtent(f"{grid.size} grid points exceed the budget of {max_points}")
    return grid


@dataclass(frozen=True)
class Units:
    """Naturalized masses, one per grid axis (a scalar is broadcast).

    ``hbar`` is only used when converting SI-style inputs at the boundary.
    """

    mu: float | tuple[float, ...] = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError(f"naturalized masses must be positive, got {self.mu}")

    def per_axis(self, ndim: int) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.size == 1:
            return np.full(ndim, mu[0])
        if mu.size != ndim:
            raise GridMismatch(f"{mu.size} masses given for a {ndim}-axis grid")
        return mu

    @classmethod
    def from_masses(cls, masses, hbar: float) -> "Units":
        masses = np.atleast_1d(np.asarray(masses, dtype=float))
        return cls(mu=tuple(masses / hbar), hbar=hbar)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex amplitudes of shape ``grid.shape + (spin_dim,)``.

    The spin index is last, so each grid point stores its spinor contiguously.
    Instances are read-only snapshots.
    """

    grid: Grid
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape == self.grid.shape:
            amps = amps[..., None]
        if amps.shape[:-1] != self.grid.shape or amps.ndim != self.grid.ndim + 1:
            raise GridMismatch(f"amplitudes of shape {amps.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("wave function has non-finite amplitudes")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def spin_dim(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def scalar(self) -> np.ndarray:
        if self.spin_dim != 1:
            raise ValueError("scalar view requested for a spinor wave function")
        return self.amplitudes[..., 0]

    def replace(self, amplitudes: np.ndarray, time: float | None = None) -> "WaveFunction":
        return WaveFunction(self.grid, amplitudes, self.time if time is None else time)

    def __add__(self, other: "WaveFunction") -> "WaveFunction":
        _check_same(self, other)
        return self.replace(self.amplitudes + other.amplitudes)

    def __sub__(self, other: "WaveFunction") -> "WaveFunction":
        _check_same(self, other)
        return self.replace(self.amplitudes - other.amplitudes)

    def __mul__(self, c: complex) -> "WaveFunction":
        return self.replace(self.amplitudes * c)

    __rmul__ = __mul__

    def conj(self) -> "WaveFunction":
        return self.replace(self.amplitudes.conj())


@dataclass(frozen=True)
class Ensemble:
    """Sampled configurations, shape ``(n, d)``."""

    positions: np.ndarray
    rng_seed: int | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] == 0:
            raise ValueError("ensemble must be non-empty")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]


def _check_same(psi: WaveFunction, phi: WaveFunction) -> None:
    if psi.grid != phi.grid:
        raise GridMismatch("wave functions live on different grids")
    if psi.spin_dim != phi.spin_dim:
        raise GridMismatch(f"spin dimensions differ: {psi.spin_dim} vs {phi.spin_dim}")


def inner_product(psi: WaveFunction, phi: WaveFunction) -> complex:
    """<psi, phi>, antilinear in the first slot; spinor components are summed."""
    _check_same(psi, phi)
    return complex(np.vdot(psi.amplitudes, phi.amplitudes) * psi.grid.cell_volume)


def norm_squared(psi: WaveFunction) -> float:
    return float(np.sum(density(psi)) * psi.grid.cell_volume)


def normalize(psi: WaveFunction) -> WaveFunction:
    n2 = norm_squared(psi)
    if n2 <= 0:
        raise NotNormalized("cannot normalize the zero wave function")
    return psi.replace(psi.amplitudes / np.sqrt(n2))


def density(psi: WaveFunction) -> np.ndarray:
    """rho = sum over spin components of |psi_s|**2, shape ``grid.shape``."""
    a = psi.amplitudes
    return np.sum(a.real**2 + a.imag**2, axis=-1)


def integrate(values: np.ndarray, grid: Grid) -> float:
    return float(np.sum(values) * grid.cell_volume)


def from_function(grid: Grid, fn: Callable[..., np.ndarray], spinor=None, time: float = 0.0,
                  normalized: bool = True) -> WaveFunction:
    """Evaluate ``fn(*mesh)`` on the grid, optionally tensored with a spinor."""
    values = np.asarray(fn(*grid.mesh()), dtype=np.complex128)
    amps = values[..., None] if spinor is None else values[..., None] * np.asarray(spinor, complex)
    psi = WaveFunction(grid, amps, time)
    return normalize(psi) if normalized else psi


def gaussian(grid: Grid, center=0.0, sigma=1.0, k=0.0, spinor=None) -> WaveFunction:
    """Normalized Gaussian packet with density width ``sigma`` and mean wavenumber ``k``."""
    d = grid.ndim
    center, sigma, k = (np.broadcast_to(np.asarray(v, float), (d,)) for v in (center, sigma, k))

    def fn(*xs):
        out = np.ones(grid.shape, dtype=complex)
        for x, c, s, kk in zip(xs, center, sigma, k):
            out = out * np.exp(-((x - c) ** 2) / (4 * s**2) + 1j * kk * x)
        return out

    return from_function(grid, fn, spinor=spinor)


def plane_wave(grid: Grid, k, spinor=None) -> WaveFunction:
    k = np.broadcast_to(np.asarray(k, float), (grid.ndim,))
    return from_function(grid, lambda *xs: np.exp(1j * sum(kk * x for kk, x in zip(k, xs))),
                         spinor=spinor)


def tensor_product(psi: WaveFunction, phi: WaveFunction) -> WaveFunction:
    """psi(x) (x) phi(y) on the product grid; at most one factor may carry spin."""
    if psi.spin_dim > 1 and phi.spin_dim > 1:
        raise GridMismatch("tensor_product supports at most one spinor factor")
    a = psi.amplitudes.reshape(psi.grid.shape + (1,) * phi.grid.ndim + (psi.spin_dim,))
    b = phi.amplitudes.reshape((1,) * psi.grid.ndim + phi.grid.shape + (phi.spin_dim,))
    return WaveFunction(psi.grid * phi.grid, a * b, psi.time)


def sample_density(psi: WaveFunction, n: int, seed: int) -> Ensemble:
    """Draw ``n`` i.i.d. configurations from |psi|**2.

    A cell is chosen by inverse CDF on the flattened cell probabilities, then the
    position is drawn uniformly inside that cell (cells are centred on nodes and
    wrap periodically).
    """
    n2 = norm_squared(psi)
    if abs(n2 - 1.0) > 1e-6:
        raise NotNormalized(f"|<psi,psi> - 1| = {abs(n2 - 1.0):.3e} exceeds 1e-6")
    grid = psi.grid
    cdf = np.cumsum(density(psi).ravel())
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    jitter = rng.random((n, grid.ndim))
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    idx = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    q = grid.lower + (idx + jitter - 0.5) * grid.spacing
    q = grid.lower + np.mod(q - grid.lower, grid.upper - grid.lower)
    return Ensemble(q, seed)


def cell_cdf_1d(grid: Grid, cell_mass: np.ndarray):
    """CDF of the piecewise-uniform density that ``sample_density`` draws from.

    ``cell_mass`` holds one probability per node of a 1D grid. Returns a callable.
    """
    if grid.ndim != 1:
        raise GridMismatch("cell_cdf_1d needs a 1D grid")
    ax = grid.axes[0]
    p = np.asarray(cell_mass, float) / np.sum(cell_mass)
    h = ax.spacing
    edges = np.concatenate([[ax.lower], ax.nodes()[1:] - h / 2, [ax.upper - h / 2, ax.upper]])
    masses = np.concatenate([[p[0] / 2], p[1:], [p[0] / 2]])
    cum = np.concatenate([[0.0], np.cumsum(masses)])
    return lambda x: np.interp(x, edges, cum)


def marginal_cdf(psi: WaveFunction, axis: int = 0):
    """CDF of the |psi|**2 marginal along ``axis``, consistent with sampling."""
    rho = density(psi)
    other = tuple(i for i in range(psi.grid.ndim) if i != axis)
    return cell_cdf_1d(psi.grid.sub([axis]), rho.sum(axis=other) if other else rho)
