"""Operators as bookkeeping for experiments.

An experiment is described by mutually orthogonal projections P_a with a
calibration lambda_a.  Outcome probabilities are ||P_a psi||^2 and the
associated self-adjoint operator is A = sum_a lambda_a P_a.  The general
(POV) case is the sequence of maps

    psi -> psi (x) Phi_0 -> Psi_t -> |Psi_t|^2 dq -> image under the pointer F

implemented by :class:`PovPipeline`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExceeded, IncompleteSpec, NotNormalized, OnSymmetryPlane, OverlapAtReadout
from .grid import (DEFAULT_POINT_BUDGET, Ensemble, Grid, Units, WaveFunction, density, gaussian,
                   inner_product, integrate, norm_squared, sample_density, tensor_product)
from .propagate import PotentialSpec, Propagator, Stepper
from .stats import total_variation
from .trajectory import IntegratorSpec, TrajectoryBundle, advect_schedule

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)

COMPLETENESS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Projector:
    """Tensor product of a grid-region indicator and a spin-space projector.

    Either factor may be omitted (identity).  ``region`` covers the leading
    axes of whatever grid the projector is applied on.
    """

    region: np.ndarray | None = None
    spin: np.ndarray | None = None

    def __post_init__(self):
        if self.region is not None:
            r = np.asarray(self.region, dtype=float)
            if not np.all((r == 0) | (r == 1)):
                raise ValueError("region indicator must be 0/1 valued")
            object.__setattr__(self, "region", r)
        if self.spin is not None:
            P = np.asarray(self.spin, dtype=complex)
            if not (np.allclose(P, P.conj().T, atol=1e-12) and np.allclose(P @ P, P, atol=1e-12)):
                raise ValueError("spin factor must be an orthogonal projector")
            object.__setattr__(self, "spin", P)

    def apply(self, amps: np.ndarray) -> np.ndarray:
        out = amps
        if self.spin is not None:
            out = out @ self.spin.T
        if self.region is not None:
            extra = out.ndim - self.region.ndim
            out = out * self.region.reshape(self.region.shape + (1,) * extra)
        return out if out is not amps else amps.copy()


def spin_projector(direction) -> np.ndarray:
    """(1 + n . sigma) / 2 for a unit vector n."""
    n = np.asarray(direction, float)
    n = n / np.linalg.norm(n)
    return 0.5 * (np.eye(2) + n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z)


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    labels: tuple[str, ...]
    projectors: tuple[Projector, ...]
    calibration: tuple[float, ...]
    # label of the "no detection" outcome; its projector is the completeness deficit
    null_label: str | None = None

    def __post_init__(self):
        if not (len(self.labels) == len(self.projectors) == len(self.calibration)):
            raise ValueError("labels, projectors and calibration must have equal length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("outcome labels must be unique")

    def sorted(self, key=None) -> "ExperimentSpec":
        order = sorted(range(len(self.labels)), key=key or (lambda i: self.labels[i]))
        return replace(self, labels=tuple(self.labels[i] for i in order),
                       projectors=tuple(self.projectors[i] for i in order),
                       calibration=tuple(self.calibration[i] for i in order))

    def check(self, shape: tuple[int, ...], seed: int = 0, trials: int = 3) -> tuple[float, float]:
        """Largest orthogonality and completeness defects on random test vectors
        of array shape ``shape`` (grid shape plus spin)."""
        rng = np.random.default_rng(seed)
        ortho = compl = 0.0
        for _ in range(trials):
            v = rng.normal(size=shape) + 1j * rng.normal(size=shape)
            v /= np.linalg.norm(v)
            parts = [P.apply(v) for P in self.projectors]
            for a, b in itertools.combinations(parts, 2):
                ortho = max(ortho, abs(np.vdot(a, b)))
            compl = max(compl, float(np.linalg.norm(sum(parts) - v)))
        return ortho, compl

    def validate(self, shape: tuple[int, ...]) -> None:
        ortho, compl = self.check(shape)
        if ortho > COMPLETENESS_TOL:
            raise IncompleteSpec(f"projections are not mutually orthogonal (defect {ortho:.2e})")
        if self.null_label is None and compl > COMPLETENESS_TOL:
            raise IncompleteSpec(f"projections do not sum to the identity (defect {compl:.2e})")


def spin_z_spec(calibration=(1.0, -1.0)) -> ExperimentSpec:
    return ExperimentSpec(("up", "down"), (Projector(spin=np.outer(UP, UP.conj())),
                                           Projector(spin=np.outer(DOWN, DOWN.conj()))),
                          tuple(calibration))


def region_spec(grid: Grid, regions: dict[str, np.ndarray], calibration: dict[str, float],
                null_label: str | None = None) -> ExperimentSpec:
    labels = tuple(regions)
    return ExperimentSpec(labels, tuple(Projector(region=regions[k]) for k in labels),
                          tuple(calibration[k] for k in labels), null_label)


def decompose(psi: WaveFunction, spec: ExperimentSpec) -> dict[str, WaveFunction]:
    """psi_a = P_a psi for every outcome (plus the null remainder if declared)."""
    spec.validate(psi.amplitudes.shape)
    parts = {lab: psi.replace(P.apply(psi.amplitudes)) for lab, P in zip(spec.labels, spec.projectors)}
    if spec.null_label is not None:
        rest = psi.amplitudes - sum(p.amplitudes for p in parts.values())
        parts[spec.null_label] = psi.replace(rest)
    return parts


@dataclass(frozen=True)
class OutcomeDistribution:
    labels: tuple
    probabilities: np.ndarray
    counts: np.ndarray | None = None

    def __getitem__(self, label) -> float:
        return float(self.probabilities[list(self.labels).index(label)])

    def as_dict(self) -> dict:
        return {lab: float(p) for lab, p in zip(self.labels, self.probabilities)}


def outcome_probabilities(psi: WaveFunction, spec: ExperimentSpec) -> OutcomeDistribution:
    """p_a = ||P_a psi||^2; a declared null outcome takes the deficit."""
    n2 = norm_squared(psi)
    if abs(n2 - 1.0) > 1e-8:
        raise NotNormalized(f"|<psi,psi> - 1| = {abs(n2 - 1):.2e}")
    parts = decompose(psi, spec)
    labels = list(spec.labels)
    probs = [norm_squared(parts[lab]) for lab in labels]
    if spec.null_label is not None:
        labels.append(spec.null_label)
        probs.append(max(0.0, 1.0 - sum(probs)))
    return OutcomeDistribution(tuple(labels), np.array(probs))


def expected_value(dist: OutcomeDistribution, spec: ExperimentSpec) -> float:
    cal = dict(zip(spec.labels, spec.calibration))
    return float(sum(p * cal.get(lab, 0.0) for lab, p in zip(dist.labels, dist.probabilities)))


@dataclass(frozen=True, eq=False)
class Operator:
    """A = sum_a lambda_a P_a, applied projector by projector."""

    spec: ExperimentSpec

    def apply(self, psi: WaveFunction) -> WaveFunction:
        out = np.zeros_like(psi.amplitudes)
        for lam, P in zip(self.spec.calibration, self.spec.projectors):
            out = out + lam * P.apply(psi.amplitudes)
        return psi.replace(out)

    def expectation(self, psi: WaveFunction) -> complex:
        return inner_product(psi, self.apply(psi))

    @property
    def matrix(self) -> np.ndarray:
        """Matrix in the spin basis; only for specs built from spin factors alone."""
        if any(P.region is not None or P.spin is None for P in self.spec.projectors):
            raise ValueError("matrix form is only available for pure spin-space experiments")
        return sum(lam * P.spin for lam, P in zip(self.spec.calibration, self.spec.projectors))


def assemble_operator(spec: ExperimentSpec) -> Operator:
    return Operator(spec)


# POV pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class PointerFunction:
    """Coarse-grained readout F: composite configuration -> index into ``values``."""

    values: tuple
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(q)), dtype=np.int64)

    @classmethod
    def constant(cls, value) -> "PointerFunction":
        return cls((value,), lambda q: np.zeros(q.shape[0], dtype=np.int64))


@dataclass(frozen=True, eq=False)
class PovPipeline:
    """psi -> psi (x) Phi_0 -> Psi_t -> |Psi_t|^2 -> distribution of F(Q_t)."""

    apparatus: WaveFunction
    evolution: Callable[[WaveFunction], WaveFunction]
    pointer: PointerFunction
    max_points: int = DEFAULT_POINT_BUDGET

    def final_state(self, psi: WaveFunction) -> WaveFunction:
        if psi.grid.size * self.apparatus.grid.size > self.max_points:
            raise BudgetExceeded(f"composite grid of {psi.grid.size * self.apparatus.grid.size} "
                                 f"points exceeds the budget of {self.max_points}")
        return self.evolution(tensor_product(psi, self.apparatus))

    def _node_values(self, grid: Grid) -> np.ndarray:
        q = np.stack([m.ravel() for m in grid.mesh()], axis=-1)
        return self.pointer(q).reshape(grid.shape)

    def masses(self, psi: WaveFunction) -> np.ndarray:
        """Unnormalized |Psi_t|^2 mass of every pointer value (quadratic in psi)."""
        Psi = self.final_state(psi)
        idx = self._node_values(Psi.grid)
        rho = density(Psi) * Psi.grid.cell_volume
        return np.bincount(idx.ravel(), weights=rho.ravel(), minlength=len(self.pointer.values))

    def exact(self, psi: WaveFunction) -> OutcomeDistribution:
        m = self.masses(psi)
        return OutcomeDistribution(self.pointer.values, m / m.sum())

    def empirical(self, psi: WaveFunction, n: int, seed: int) -> OutcomeDistribution:
        Psi = self.final_state(psi)
        ens = sample_density(Psi, n, seed)
        counts = np.bincount(self.pointer(ens.positions), minlength=len(self.pointer.values))
        return OutcomeDistribution(self.pointer.values, counts / n, counts)


@dataclass(frozen=True)
class PovResult:
    exact: OutcomeDistribution
    empirical: OutcomeDistribution
    tv_distance: float


def pov_pipeline(psi: WaveFunction, pipeline: PovPipeline, n_samples: int, seed: int) -> PovResult:
    exact = pipeline.exact(psi)
    emp = pipeline.empirical(psi, n_samples, seed)
    return PovResult(exact, emp, total_variation(exact.probabilities, emp.probabilities))


def pointer_coupling(spec: ExperimentSpec, shift: float, pointer_axis: int = -1
                     ) -> Callable[[WaveFunction], WaveFunction]:
    """Impulsive von Neumann coupling exp(-i shift A (x) p_y).

    Each branch P_a psi (x) Phi(y) becomes P_a psi (x) Phi(y - shift * lambda_a),
    i.e. the final state has the form sum_a psi_a (x) Phi_a.  The spec's
    projectors act on the leading (system) axes of the composite.
    """

    def evolve(Psi: WaveFunction) -> WaveFunction:
        grid = Psi.grid
        axis = pointer_axis % grid.ndim
        k = grid.axes[axis].wavenumbers()
        kshape = [1] * (grid.ndim + 1)
        kshape[axis] = k.size
        k = k.reshape(kshape)
        spectrum = np.fft.fft(Psi.amplitudes, axis=axis)
        out = np.zeros_like(spectrum)
        for lam, P in zip(spec.calibration, spec.projectors):
            out += P.apply(spectrum) * np.exp(-1j * shift * lam * k)
        return Psi.replace(np.fft.ifft(out, axis=axis))

    return evolve


def sesquilinear_form(pipeline: PovPipeline, outcome: int):
    """B(psi, phi) recovered from the pipeline's quadratic form by polarization."""

    def q(psi):
        return pipeline.masses(psi)[outcome]

    def B(psi: WaveFunction, phi: WaveFunction) -> complex:
        return 0.25 * sum((1j) ** (-k) * q(psi + phi * (1j) ** k) for k in range(4))

    return B


@dataclass(frozen=True)
class BilinearityReport:
    additivity_defect: float
    symmetry_defect: float
    min_diagonal: float
    normalization_defect: float

    @property
    def max_defect(self) -> float:
        return max(self.additivity_defect, self.symmetry_defect, self.normalization_defect,
                   max(0.0, -self.min_diagonal))


def pov_bilinearity_check(pipeline: PovPipeline, basis: Sequence[WaveFunction],
                          outcome: int = 0) -> BilinearityReport:
    """Additivity and conjugate symmetry of the polarized form on a test basis."""
    B = sesquilinear_form(pipeline, outcome)
    n = len(basis)
    G = np.array([[B(basis[i], basis[j]) for j in range(n)] for i in range(n)])
    sym = float(np.max(np.abs(G - G.conj().T)))
    add = 0.0
    for i, j in itertools.combinations(range(n), 2):
        s = basis[i] + basis[j]
        for k in range(n):
            add = max(add, abs(B(s, basis[k]) - G[i, k] - G[j, k]))
    norm_def = 0.0
    for psi in basis:
        total = pipeline.masses(psi).sum()
        norm_def = max(norm_def, abs(total - norm_squared(psi)))
    return BilinearityReport(add, sym, float(np.min(G.diagonal().real)), norm_def)


# Stern-Gerlach --------------------------------------------------------------


@dataclass(frozen=True)
class SternGerlachConfig:
    """Idealized magnet B = (0, 0, B0 + B1 z) (times a window along y in 2D).

    The particle's moment is taken parallel to its spin (Pauli term
    -g B . sigma), so with B1 > 0 the |up> part is pushed towards +z.
    ``orientation=-1`` reverses the magnet polarity (B -> -B) and with it
    the calibration of the two detectors.
    """

    grid: Grid  # 1D (z) or 2D (y, z)
    mu: float = 1.0
    coupling: float = 1.0
    B0: float = 1.0
    B1: float = 5.0
    interaction_time: float = 1.0
    readout_time: float = 3.0
    sigma0: float = 1.0
    beam_k: float = 0.0  # 2D only: wavenumber along +y
    beam_start: float = 0.0  # 2D only: initial y centre
    magnet_center: float = 0.0  # 2D only
    magnet_length: float = 0.0  # 2D only; 0 means the whole box
    dt: float = 0.005
    dt_traj: float = 0.01
    orientation: int = 1
    detector_plane: float = 0.0
    overlap_tol: float = 1e-6
    scheme: str = "rk4"

    @property
    def units(self) -> Units:
        return Units(self.mu)


def sg_field(cfg: SternGerlachConfig) -> np.ndarray:
    mesh = cfg.grid.mesh()
    z = mesh[-1]
    Bz = cfg.orientation * (cfg.B0 + cfg.B1 * z)
    if cfg.grid.ndim == 2 and cfg.magnet_length > 0:
        y = mesh[0]
        edge = 0.5 * cfg.magnet_length
        Bz = Bz * 0.5 * (np.tanh(4 * (y - cfg.magnet_center + edge))
                         - np.tanh(4 * (y - cfg.magnet_center - edge)))
    B = np.zeros(cfg.grid.shape + (3,))
    B[..., 2] = Bz
    return B


def sg_initial_state(cfg: SternGerlachConfig, a: complex, b: complex) -> WaveFunction:
    if abs(abs(a) ** 2 + abs(b) ** 2 - 1) > 1e-12:
        raise NotNormalized("spinor coefficients must satisfy |a|^2 + |b|^2 = 1")
    if cfg.grid.ndim == 1:
        return gaussian(cfg.grid, 0.0, cfg.sigma0, spinor=[a, b])
    return gaussian(cfg.grid, (cfg.beam_start, 0.0), cfg.sigma0, (cfg.beam_k, 0.0), spinor=[a, b])


def sg_schedule(cfg: SternGerlachConfig) -> list[tuple[Stepper, float]]:
    prop = Propagator(cfg.dt, cfg.units)
    # moment parallel to spin: H_pauli = -g B . sigma
    on = PotentialSpec(np.zeros(cfg.grid.shape), -sg_field(cfg), cfg.coupling)
    off = PotentialSpec.zero(cfg.grid)
    if cfg.grid.ndim == 2:
        return [(Stepper(on, prop), cfg.readout_time)]
    return [(Stepper(on, prop), cfg.interaction_time),
            (Stepper(off, prop), cfg.readout_time - cfg.interaction_time)]


@dataclass(frozen=True, eq=False)
class SternGerlachResult:
    values: np.ndarray  # calibrated value per member: +1, -1, or 0 for escaped (null)
    upper: np.ndarray  # bool per member: registered by the upper detector
    exact: OutcomeDistribution  # over values (+1, -1)
    bundle: TrajectoryBundle
    psi_final: WaveFunction
    component_detectors: dict  # spin component -> detector it went to

    @property
    def up_fraction(self) -> float:
        """Fraction of members reporting the value +1."""
        return float(np.mean(self.values == 1))


def _detector_masks(cfg: SternGerlachConfig) -> tuple[np.ndarray, np.ndarray]:
    z = cfg.grid.mesh()[-1]
    return z > cfg.detector_plane, z <= cfg.detector_plane


def _readout_components(cfg, psi: WaveFunction) -> dict:
    upper, lower = _detector_masks(cfg)
    placement = {}
    for idx, name in ((0, "up"), (1, "down")):
        rho = np.abs(psi.amplitudes[..., idx]) ** 2
        total = integrate(rho, cfg.grid)
        if total < cfg.overlap_tol:
            continue
        m_upper = integrate(rho * upper, cfg.grid)
        m_lower = total - m_upper
        side = "upper" if m_upper >= m_lower else "lower"
        stray = min(m_upper, m_lower)
        if stray > cfg.overlap_tol:
            raise OverlapAtReadout(f"spin-{name} packet has mass {stray:.2e} on both detectors")
        placement[name] = side
    if len(placement) == 2 and placement["up"] == placement["down"]:
        raise OverlapAtReadout("both spin packets reach the same detector")
    return placement


def stern_gerlach(cfg: SternGerlachConfig, a: complex, b: complex, n_traj: int = 0,
                  seed: int = 0, ensemble: Ensemble | None = None, threads: int = 1,
                  psi0: WaveFunction | None = None) -> SternGerlachResult:
    """Run the magnet and classify each trajectory by detector region at readout.

    Calibration: with the normal orientation the upper detector reads +1; with
    the reversed polarity it reads -1.
    """
    psi0 = sg_initial_state(cfg, a, b) if psi0 is None else psi0
    if ensemble is None:
        ensemble = sample_density(psi0, n_traj, seed)
    integ = IntegratorSpec(cfg.dt_traj, cfg.scheme, record_every=10**9)
    bundle = advect_schedule(ensemble, psi0, sg_schedule(cfg), integ, threads)
    psi_t = bundle.psi_final
    placement = _readout_components(cfg, psi_t)
    upper_mask, _ = _detector_masks(cfg)
    upper_value = 1 if cfg.orientation > 0 else -1
    p_upper = integrate(density(psi_t) * upper_mask, cfg.grid) / norm_squared(psi_t)
    p_plus = p_upper if upper_value == 1 else 1 - p_upper
    exact = OutcomeDistribution((1, -1), np.array([p_plus, 1 - p_plus]))
    zf = bundle.final[:, -1]
    upper = zf > cfg.detector_plane
    values = np.where(upper, upper_value, -upper_value)
    values = np.where(bundle.escaped, 0, values)
    return SternGerlachResult(values, upper, exact, bundle, psi_t, placement)


def spin_state_at(psi: WaveFunction, q: np.ndarray) -> np.ndarray:
    """Normalized spinor of ``psi`` at the grid node nearest to ``q``."""
    grid = psi.grid
    idx = tuple(int(np.rint((qq - ax.lower) / ax.spacing)) % ax.points
                for qq, ax in zip(np.atleast_1d(q), grid.axes))
    s = np.array(psi.amplitudes[idx])
    return s / np.linalg.norm(s)


def contextuality_demo(cfg: SternGerlachConfig, z0: np.ndarray, orientation: int,
                       threads: int = 1) -> np.ndarray:
    """Reported spin value for each initial height ``z0`` with a symmetric spinor.

    The initial state (|up> + |down>)/sqrt(2) (x) phi_0 with phi_0 even in z is
    reflection symmetric together with the magnet, so no trajectory crosses
    z = 0: the result is fixed by the initial side and flips with the magnet.
    """
    z0 = np.atleast_1d(np.asarray(z0, float))
    if np.any(z0 == 0.0):
        raise OnSymmetryPlane("initial position on the symmetry plane has no defined side")
    if cfg.grid.ndim != 1:
        raise ValueError("contextuality_demo uses the reduced 1D model")
    run_cfg = replace(cfg, orientation=orientation)
    s = 1 / np.sqrt(2)
    res = stern_gerlach(run_cfg, s, s, ensemble=Ensemble(z0[:, None]), threads=threads)
    return res.values
