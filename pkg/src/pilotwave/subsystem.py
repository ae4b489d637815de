"""Conditional and effective wave functions of a subsystem in a toy universe.

The composite configuration is q = (x, y): the leading ``n_system_axes`` grid
axes belong to the x-system, the rest to its environment.  Scalar only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BinUnderflow, NullSlice, SpinorNotSupported
from .grid import (Grid, WaveFunction, cell_cdf_1d, density, inner_product, normalize,
                   norm_squared, sample_density)
from .guidance import interpolate
from .observables import (ExperimentSpec, PointerFunction, PovPipeline, SternGerlachConfig,
                          pointer_coupling, spin_state_at, stern_gerlach)
from .stats import binomial_halfwidth


@dataclass(frozen=True, eq=False)
class CompositeWaveFunction:
    psi: WaveFunction
    n_system_axes: int

    def __post_init__(self):
        if self.psi.spin_dim != 1:
            raise SpinorNotSupported("subsystem analysis is restricted to scalar wave functions")
        if not 0 < self.n_system_axes < self.psi.grid.ndim:
            raise ValueError("need at least one system axis and one environment axis")

    @property
    def x_grid(self) -> Grid:
        return self.psi.grid.sub(range(self.n_system_axes))

    @property
    def y_grid(self) -> Grid:
        return self.psi.grid.sub(range(self.n_system_axes, self.psi.grid.ndim))

    def env_major(self) -> np.ndarray:
        """Amplitudes with environment axes first: shape ``y_shape + x_shape``."""
        k = self.n_system_axes
        nd = self.psi.grid.ndim
        return np.transpose(self.psi.scalar, tuple(range(k, nd)) + tuple(range(k)))

    def y_marginal(self) -> np.ndarray:
        rho = density(self.psi)
        axes = tuple(range(self.n_system_axes))
        return rho.sum(axis=axes) * self.x_grid.cell_volume


def conditional_wf(Psi: CompositeWaveFunction, Y) -> tuple[WaveFunction, float]:
    """psi(x) proportional to Psi(x, Y), interpolated in y and normalized.

    Returns the normalized wave function and the slice norm ||Psi(., Y)||.
    """
    Y = np.atleast_1d(np.asarray(Y, float))
    amps = Psi.env_major()
    slice_ = interpolate(amps, Psi.y_grid, Y[None, :], order=1)[0]
    dx = Psi.x_grid.cell_volume
    c = float(np.sqrt(np.sum(np.abs(slice_) ** 2) * dx))
    y_axes = tuple(range(Psi.y_grid.ndim))
    slice_norms = np.sum(np.abs(amps) ** 2, axis=tuple(range(len(y_axes), amps.ndim))) * dx
    if c**2 < 1e-14 * slice_norms.max():
        raise NullSlice(f"slice norm {c:.2e} at Y={Y} is negligible")
    return WaveFunction(Psi.x_grid, slice_ / c, Psi.psi.time), c


@dataclass(frozen=True, eq=False)
class EffectiveWfReport:
    exists: bool
    psi: WaveFunction | None  # the conditional wave function when ``exists``
    defect: float  # mass of the Y-branch that is not of product form
    singular_ratio: float
    separation: float  # distance in y from Y's branch to the nearest other branch
    overlap: float  # |<effective factor, conditional wf>|
    branch_mass: float
    n_branches: int
    note: str = ""


def _periodic_labels(mask: np.ndarray) -> tuple[np.ndarray, int]:
    labels, n = ndimage.label(mask)
    for ax in range(mask.ndim):
        first = np.take(labels, 0, axis=ax)
        last = np.take(labels, -1, axis=ax)
        for a, b in zip(first.ravel(), last.ravel()):
            if a and b and a != b:
                labels[labels == b] = a
    uniq = [u for u in np.unique(labels) if u]
    remap = np.zeros(labels.max() + 1, dtype=int)
    for i, u in enumerate(uniq, 1):
        remap[u] = i
    return remap[labels], len(uniq)


def effective_wf(Psi: CompositeWaveFunction, Y, delta: float = 1e-6,
                 rank_tol: float = 1e-4) -> EffectiveWfReport:
    """Decide whether Psi = psi(x) Phi(y) + Psi_perp near Y with disjoint y-supports.

    Branches are connected regions where the y-marginal exceeds ``delta * max``;
    the branch containing Y must factorize (second/first singular value below
    ``rank_tol``).
    """
    Y = np.atleast_1d(np.asarray(Y, float))
    yg = Psi.y_grid
    marg = Psi.y_marginal()
    labels, n_branches = _periodic_labels(marg >= delta * marg.max())
    node = tuple(int(np.rint((yy - ax.lower) / ax.spacing)) % ax.points
                 for yy, ax in zip(Y, yg.axes))
    lab = labels[node]
    if lab == 0:
        return EffectiveWfReport(False, None, np.nan, np.nan, np.nan, 0.0, 0.0, n_branches,
                                 "Y lies outside every branch support")
    sel = labels == lab
    amps = Psi.env_major()
    block = amps[sel].reshape(int(sel.sum()), -1).T  # (x points, branch y points)
    s_vals = np.linalg.svd(block, compute_uv=False)
    ratio = float(s_vals[1] / s_vals[0]) if s_vals.size > 1 and s_vals[0] > 0 else 0.0
    dV = Psi.psi.grid.cell_volume
    total = norm_squared(Psi.psi)
    defect = float(np.sum(s_vals[1:] ** 2) * dV / total)
    branch_mass = float(np.sum(s_vals**2) * dV / total)
    ycoords = np.stack([m[sel] for m in yg.mesh()], axis=-1)
    others = (labels != lab) & (labels > 0)
    if others.any():
        ocoords = np.stack([m[others] for m in yg.mesh()], axis=-1)
        span = yg.upper - yg.lower
        diff = np.abs(ycoords[:, None, :] - ocoords[None, :, :])
        diff = np.minimum(diff, span - diff)
        separation = float(np.sqrt((diff**2).sum(-1)).min())
    else:
        separation = np.inf
    cond, _ = conditional_wf(Psi, Y)
    if ratio >= rank_tol:
        return EffectiveWfReport(False, None, defect, ratio, separation, 0.0, branch_mass,
                                 n_branches, "branch containing Y is entangled")
    u = np.linalg.svd(block, full_matrices=False)[0][:, 0].reshape(Psi.x_grid.shape)
    factor = normalize(WaveFunction(Psi.x_grid, u, Psi.psi.time))
    overlap = abs(inner_product(factor, cond))
    return EffectiveWfReport(True, cond, defect, ratio, separation, overlap, branch_mass,
                             n_branches)


@dataclass(frozen=True)
class ConditionalProbabilityReport:
    y_centers: np.ndarray
    counts: np.ndarray
    l1: np.ndarray  # NaN for excluded bins
    excluded: list[int]

    @property
    def mean_l1(self) -> float:
        return float(np.nanmean(self.l1))


def _cell_interval_probs(psi: WaveFunction, edges: np.ndarray) -> np.ndarray:
    cdf = cell_cdf_1d(psi.grid, density(psi))
    return np.diff(cdf(edges))


def conditional_probability_check(Psi: CompositeWaveFunction, y_edges, x_edges, n: int,
                                  seed: int, min_count: int = 100) -> ConditionalProbabilityReport:
    """Compare X-histograms within Y-bins against |conditional wf at bin centre|^2.

    Samples (X, Y) from |Psi|^2; 1D system and 1D environment.
    """
    if Psi.x_grid.ndim != 1 or Psi.y_grid.ndim != 1:
        raise ValueError("conditional_probability_check expects a 1D x 1D composite")
    y_edges = np.asarray(y_edges, float)
    x_edges = np.asarray(x_edges, float)
    ens = sample_density(normalize(Psi.psi), n, seed)
    X, Yq = ens.positions[:, 0], ens.positions[:, 1]
    which = np.digitize(Yq, y_edges) - 1
    centers = 0.5 * (y_edges[:-1] + y_edges[1:])
    counts = np.bincount(which[(which >= 0) & (which < centers.size)], minlength=centers.size)
    l1 = np.full(centers.size, np.nan)
    excluded = []
    for b, yc in enumerate(centers):
        if counts[b] < min_count:
            excluded.append(b)
            continue
        hist = np.histogram(X[which == b], bins=x_edges)[0] / counts[b]
        cond, _ = conditional_wf(Psi, [yc])
        expected = _cell_interval_probs(cond, x_edges)
        l1[b] = float(np.sum(np.abs(hist - expected)))
    if len(excluded) == centers.size:
        raise BinUnderflow(f"every Y-bin has fewer than {min_count} samples")
    return ConditionalProbabilityReport(centers, counts, l1, excluded)


@dataclass(frozen=True)
class LLNReport:
    labels: tuple[str, ...]
    frequencies: np.ndarray
    born: np.ndarray
    halfwidth: np.ndarray  # 3-sigma binomial half width per event
    M: int

    @property
    def within(self) -> np.ndarray:
        return np.abs(self.frequencies - self.born) <= self.halfwidth

    @property
    def all_within(self) -> bool:
        return bool(np.all(self.within))


def lln_quantum_equilibrium(psi: WaveFunction, edges, M: int, seed: int,
                            labels: tuple[str, ...] | None = None) -> LLNReport:
    """Empirical event frequencies across M subsystems with product wave function
    psi(x_1)...psi(x_M); events are the intervals cut by ``edges`` (1D).

    The M factors are independent, so one configuration of the M-body system is
    M independent draws from |psi|^2.
    """
    if psi.grid.ndim != 1:
        raise ValueError("lln_quantum_equilibrium uses a 1D one-body wave function")
    ax = psi.grid.axes[0]
    cuts = np.concatenate([[ax.lower], np.sort(np.asarray(edges, float)), [ax.upper]])
    born = _cell_interval_probs(psi, cuts)
    x = sample_density(psi, M, seed).positions[:, 0]
    idx = np.clip(np.searchsorted(cuts, x, side="right") - 1, 0, born.size - 1)
    freqs = np.bincount(idx, minlength=born.size) / M
    labels = labels or tuple(f"event{i}" for i in range(born.size))
    hw = np.array([binomial_halfwidth(p, M) for p in born])
    return LLNReport(tuple(labels), freqs, born, hw, M)


# collapse -------------------------------------------------------------------


def pointer_readout(spec: ExperimentSpec, shift: float, pointer_axis: int = -1) -> PointerFunction:
    """Assign each pointer position to the nearest branch centre shift * lambda_a."""
    centers = np.array([shift * lam for lam in spec.calibration])

    def fn(q):
        y = q[:, pointer_axis]
        return np.argmin(np.abs(y[:, None] - centers[None, :]), axis=1)

    return PointerFunction(spec.labels, fn)


@dataclass(frozen=True, eq=False)
class CollapseReport:
    before: WaveFunction
    after: WaveFunction
    outcome: str
    pointer_position: np.ndarray
    overlap_with_projection: float
    rerun_outcomes: np.ndarray
    effective: EffectiveWfReport

    @property
    def rerun_agreement(self) -> float:
        return float(np.mean(self.rerun_outcomes == self.outcome))


def collapse_demo(psi: WaveFunction, spec: ExperimentSpec, apparatus: WaveFunction, shift: float,
                  seed: int, n_rerun: int = 1000) -> CollapseReport:
    """Measure with an impulsive pointer coupling, read the pointer, and compare
    the system's effective wave function with P_a psi normalized; then repeat the
    measurement on the collapsed state."""
    pipe = PovPipeline(apparatus, pointer_coupling(spec, shift), pointer_readout(spec, shift))
    Psi_f = CompositeWaveFunction(pipe.final_state(psi), psi.grid.ndim)
    q = sample_density(normalize(Psi_f.psi), 1, seed).positions[0]
    Y = q[psi.grid.ndim:]
    outcome = spec.labels[int(pipe.pointer(q[None, :])[0])]
    eff = effective_wf(Psi_f, Y)
    after = eff.psi if eff.exists else conditional_wf(Psi_f, Y)[0]
    proj = spec.projectors[spec.labels.index(outcome)]
    target = normalize(psi.replace(proj.apply(psi.amplitudes)))
    overlap = abs(inner_product(after, target))
    rerun = sample_density(normalize(pipe.final_state(after)), n_rerun, seed + 1).positions
    rerun_out = np.array(spec.labels)[pipe.pointer(rerun)]
    return CollapseReport(psi, after, outcome, Y, overlap, rerun_out, eff)


@dataclass(frozen=True)
class SpinCollapseReport:
    outcome: int
    pointer_position: np.ndarray
    spin_state: np.ndarray
    overlap_with_projection: float
    rerun_values: np.ndarray

    @property
    def rerun_agreement(self) -> float:
        return float(np.mean(self.rerun_values == self.outcome))


def sg_collapse_demo(cfg: SternGerlachConfig, a: complex, b: complex, seed: int,
                     n_rerun: int = 1000) -> SpinCollapseReport:
    """Stern-Gerlach run for one particle; the spin state conditional on where the
    particle landed is compared with the projected spinor, then the experiment is
    repeated on that conditional spin state."""
    first = stern_gerlach(cfg, a, b, n_traj=1, seed=seed)
    z = first.bundle.final[0]
    value = int(first.values[0])
    spin = spin_state_at(first.psi_final, z)
    # +1 is the spin-up reading for either magnet polarity
    target = np.array([1, 0], complex) if (value == 1) else np.array([0, 1], complex)
    overlap = float(abs(np.vdot(target, spin)))
    rerun = stern_gerlach(cfg, spin[0], spin[1], n_traj=n_rerun, seed=seed + 1)
    return SpinCollapseReport(value, z, spin, overlap, rerun.values)
