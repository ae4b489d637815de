"""Named scenarios: build the state from a config, run it, and collect checks.

Every runner returns a :class:`ScenarioResult` holding plain arrays; writing them
to disk is the CLI's job.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .errors import ConfigError, PilotWaveError, ScenarioError
from .grid import (Ensemble, Grid, Units, WaveFunction, density, from_function,
                   gaussian, make_grid, marginal_cdf, norm_squared, normalize, sample_density)
from .guidance import continuity_residual, velocity_field
from .observables import (PovPipeline, SternGerlachConfig, contextuality_demo, outcome_probabilities,
                          pointer_coupling, pov_bilinearity_check, region_spec, sg_initial_state,
                          stern_gerlach)
from .polar import polar_decompose, route_comparison
from .propagate import PotentialSpec, Propagator, Stepper, ground_state, step
from .stats import binomial_halfwidth, ks_critical, ks_distance
from .subsystem import (CompositeWaveFunction, collapse_demo, conditional_probability_check,
                        lln_quantum_equilibrium, pointer_readout)
from .trajectory import IntegratorSpec, advect, crossing_check

# Names of the checks each scenario can emit; used to validate tolerance overrides.
CHECKS = {
    "free-packet": ("unitarity", "equivariance_ks", "escaped", "order_inversions",
                    "route_equivalence", "continuity_residual"),
    "equivariance": ("unitarity", "equivariance_ks", "escaped", "order_inversions",
                     "route_equivalence", "continuity_residual"),
    "harmonic": ("unitarity", "max_speed", "max_displacement", "v_plus_u_spread", "escaped"),
    "double-slit": ("unitarity", "symmetry_crossings", "escaped"),
    "stern-gerlach": ("unitarity", "exact_probability", "up_fraction", "escaped"),
    "contextuality": ("unflipped", "born_plus", "born_minus"),
    "pov-pipeline": ("exact_vs_born", "empirical_zscore", "bilinearity_defect", "collapse_overlap",
                     "rerun_disagreements"),
    "conditional": ("mean_l1",),
    "lln": ("seeds_within_band",),
}

# Support of the velocity field used by the stationarity check (rho / max rho).
# Below it v = J / rho is dominated by rounding, growing like rho^(-1/2).
STATIONARY_SUPPORT = 1e-6


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    tolerance: float
    comparison: str = "<="  # measured <comparison> tolerance

    @property
    def passed(self) -> bool:
        m, t = self.measured, self.tolerance
        if not np.isfinite(m):
            return False
        return {"<=": m <= t, "<": m < t, ">=": m >= t, "==": m == t}[self.comparison]

    def as_dict(self) -> dict:
        return {"check": self.name, "measured": _num(self.measured), "comparison": self.comparison,
                "tolerance": _num(self.tolerance), "passed": bool(self.passed)}


def _num(x):
    x = float(x)
    if np.isfinite(x) and x == int(x) and abs(x) < 2**53:
        return int(x)
    return x if np.isfinite(x) else None


@dataclass
class ScenarioResult:
    scenario: str
    checks: list[Check]
    parameters: dict = field(default_factory=dict)  # effective values actually used
    times: np.ndarray | None = None
    positions: np.ndarray | None = None  # (T, n, d)
    field_grid: Grid | None = None
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)  # (t, density)
    histograms: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


class _Context:
    """Shared construction from a config plus tolerance bookkeeping."""

    def __init__(self, cfg: ScenarioConfig, threads: int):
        self.cfg = cfg
        self.threads = threads
        self.grid = make_grid([list(e) for e in cfg.grid.extents])
        self.units = cfg.particle.units()
        self.checks: list[Check] = []

    def check(self, name: str, measured: float, tolerance: float, comparison: str = "<="):
        tol = self.cfg.checks.tolerances.get(name, tolerance)
        self.checks.append(Check(name, float(measured), float(tol), comparison))

    # construction -------------------------------------------------------

    def potential(self) -> np.ndarray:
        p, g = self.cfg.potential, self.grid
        mesh = g.mesh()
        if p.kind == "free":
            return np.zeros(g.shape)
        if p.kind == "harmonic":
            mu = self.units.per_axis(g.ndim)
            return sum(0.5 * m * p.omega**2 * x**2 for m, x in zip(mu, mesh))
        if g.ndim != 2:
            raise ConfigError("potential.kind: 'double-slit' needs a 2D grid")
        x, y = mesh
        wall = np.abs(y - p.barrier_center) <= 0.5 * p.barrier_thickness
        opening = np.abs(np.abs(x) - 0.5 * p.slit_separation) <= 0.5 * p.slit_width
        return np.where(wall & ~opening, p.barrier_height, 0.0)

    def _axes(self, vals, name) -> tuple:
        d = self.grid.ndim
        if len(vals) == 1:
            return vals * d
        if len(vals) != d:
            raise ConfigError(f"{name}: expected 1 or {d} values, got {len(vals)}")
        return vals

    def initial(self, V: np.ndarray) -> WaveFunction:
        ini = self.cfg.initial
        if ini.kind == "ground-state":
            psi, _ = ground_state(self.grid, V, self.units)
            return psi
        total = None
        for i, pk in enumerate(ini.packets()):
            g = gaussian(self.grid, self._axes(pk.center, f"initial.packet[{i}].center"),
                         self._axes(pk.sigma, f"initial.packet[{i}].sigma"),
                         self._axes(pk.k, f"initial.packet[{i}].k"), ini.spinor)
            g = g * pk.weight
            total = g if total is None else total + g
        return normalize(total)

    def propagator(self, dt: float) -> Propagator:
        p = self.cfg.propagator
        # invariant violations are reported as failed checks rather than raised
        return Propagator(dt, self.units, p.method, p.tol, p.max_iter, strict=False)

    def timing(self, t_final: float) -> tuple[float, float, int]:
        """Snap (dt_traj, dt) so that dt_traj divides t_final and dt divides dt_traj."""
        H0 = self.cfg.integrator.dt_traj
        n_traj = max(1, int(round(t_final / H0)))
        H = t_final / n_traj
        m = max(1, int(round(H / self.cfg.propagator.dt)))
        return H, H / m, n_traj

    def integrator(self, H: float) -> IntegratorSpec:
        it = self.cfg.integrator
        return IntegratorSpec(H, it.scheme, self.cfg.output.trajectory_stride, it.interp_order,
                              it.eps_rho)

    def ensemble(self, psi: WaveFunction, n: int | None = None) -> Ensemble:
        n = self.cfg.ensemble.size if n is None else n
        return sample_density(psi, n, self.cfg.seed)

    def snapshots(self, bundle) -> list[tuple[float, np.ndarray]]:
        k = self.cfg.output.snapshot_stride
        if k == 0:
            return []
        return [(float(s.time), density(s)) for s in bundle.snapshots[::k]]


def _doubling_time(ctx: _Context) -> float:
    ini = ctx.cfg.initial
    if ini.kind != "gaussian":
        raise ConfigError("run.t_final: required unless the initial state is a single gaussian")
    mu = ctx.units.per_axis(ctx.grid.ndim)[0]
    # sigma(t) = sigma0 sqrt(1 + (t / 2 mu sigma0^2)^2) reaches 2 sigma0 here
    return 2 * np.sqrt(3) * mu * ctx._axes(ini.sigma, "initial.sigma")[0] ** 2


def _hist_1d(name: str, samples: np.ndarray, grid: Grid, cdf, bins: int) -> dict:
    edges = np.linspace(grid.lower[0], grid.upper[0], bins + 1)
    counts = np.histogram(samples, bins=edges)[0]
    expected = np.diff(cdf(edges)) * samples.size
    return {"name": name, "edges": edges, "counts": counts, "expected": expected}


def _transport(ctx: _Context) -> ScenarioResult:
    cfg, grid, units = ctx.cfg, ctx.grid, ctx.units
    V = ctx.potential()
    psi0 = ctx.initial(V)
    t_final = float(cfg.run.t_final) if cfg.run.t_final is not None else _doubling_time(ctx)
    H, dt, n_traj = ctx.timing(t_final)
    stepper = Stepper(PotentialSpec(V), ctx.propagator(dt))
    bundle = advect(ctx.ensemble(psi0), psi0, stepper, ctx.integrator(H), H * n_traj, ctx.threads,
                    keep_snapshots=cfg.output.snapshot_stride > 0)
    psi_t = bundle.psi_final
    n = bundle.n_members
    ctx.check("unitarity", abs(norm_squared(psi_t) - norm_squared(psi0)), 1e-10)
    hist = []
    if n:
        alive = ~bundle.escaped
        cdf = marginal_cdf(psi_t, 0)
        ctx.check("equivariance_ks", ks_distance(bundle.final[alive, 0], cdf), ks_critical(n, 0.01))
        ctx.check("escaped", bundle.n_escaped, 0, "==")
        hist.append(_hist_1d("final_marginal_q1", bundle.final[alive, 0], grid, cdf,
                             cfg.output.histogram_bins))
        if grid.ndim == 1:
            ctx.check("order_inversions", crossing_check(bundle).count, 0, "==")
    if psi_t.spin_dim == 1:
        gaps = route_comparison(psi_t, units)
        ctx.check("route_equivalence", max(gaps.values()), 1e-6)
    psi_next = step(psi_t, stepper.pot, stepper.prop)
    res = continuity_residual(psi_t, psi_next, units)
    drho = (density(psi_next) - density(psi_t)) / dt
    ctx.check("continuity_residual", np.linalg.norm(res) / np.linalg.norm(drho), 1e-3)
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"t_final": H * n_traj, "dt": dt, "dt_traj": H, "n_members": n},
                          bundle.times, bundle.positions, grid, ctx.snapshots(bundle), hist)


def _harmonic(ctx: _Context) -> ScenarioResult:
    cfg, grid, units = ctx.cfg, ctx.grid, ctx.units
    V = ctx.potential()
    psi0 = ctx.initial(V)
    period = 2 * np.pi / cfg.potential.omega
    t_final = float(cfg.run.t_final) if cfg.run.t_final is not None else cfg.run.periods * period
    H, dt, n_traj = ctx.timing(t_final)
    stepper = Stepper(PotentialSpec(V), ctx.propagator(dt))
    bundle = advect(ctx.ensemble(psi0), psi0, stepper, ctx.integrator(H), H * n_traj, ctx.threads,
                    keep_snapshots=True)
    psi_t = bundle.psi_final
    ctx.check("unitarity", abs(norm_squared(psi_t) - norm_squared(psi0)), 1e-10)
    speed = 0.0
    for s in bundle.snapshots:
        vf = velocity_field(s, units)
        support = vf.rho >= STATIONARY_SUPPORT * vf.rho.max()
        speed = max(speed, float(np.max(np.linalg.norm(vf.v, axis=-1)[support])))
    ctx.check("max_speed", speed, 1e-8)
    if bundle.n_members:
        disp = np.max(np.abs(bundle.positions - bundle.positions[0][None]))
        ctx.check("max_displacement", disp / float(np.max(grid.upper - grid.lower)), 1e-6)
        ctx.check("escaped", bundle.n_escaped, 0, "==")
    if psi0.spin_dim == 1:
        # a property of the eigenstate itself; long runs only add rounding in the tails
        pf = polar_decompose(psi0, units)
        total = (V + pf.U)[~pf.mask]
        ctx.check("v_plus_u_spread", np.ptp(total) / abs(np.mean(total)), 1e-6)
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"t_final": H * n_traj, "dt": dt, "dt_traj": H, "period": period},
                          bundle.times, bundle.positions, grid, ctx.snapshots(bundle))


def _double_slit(ctx: _Context) -> ScenarioResult:
    cfg, grid = ctx.cfg, ctx.grid
    if grid.ndim != 2 or cfg.potential.kind != "double-slit":
        raise ConfigError("scenario 'double-slit' needs a 2D grid and potential.kind 'double-slit'")
    V = ctx.potential()
    psi0 = ctx.initial(V)
    t_final = float(cfg.run.t_final) if cfg.run.t_final is not None else 2.5
    H, dt, n_traj = ctx.timing(t_final)
    stepper = Stepper(PotentialSpec(V), ctx.propagator(dt))
    bundle = advect(ctx.ensemble(psi0), psi0, stepper, ctx.integrator(H), H * n_traj, ctx.threads,
                    keep_snapshots=cfg.output.snapshot_stride > 0)
    ctx.check("unitarity", abs(norm_squared(bundle.psi_final) - norm_squared(psi0)), 1e-10)
    if bundle.n_members:
        ctx.check("symmetry_crossings", crossing_check(bundle, axis=0, plane=0.0).count, 0, "==")
        ctx.check("escaped", bundle.n_escaped, 0, "==")
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"t_final": H * n_traj, "dt": dt, "dt_traj": H,
                           "propagator_steps": int(round(H * n_traj / dt))},
                          bundle.times, bundle.positions, grid, ctx.snapshots(bundle))


def _sg_config(ctx: _Context) -> SternGerlachConfig:
    cfg = ctx.cfg
    if ctx.grid.ndim != 1:
        raise ConfigError("grid.extents: the Stern-Gerlach scenarios use a 1D (z) grid")
    m = cfg.magnet
    return SternGerlachConfig(
        grid=ctx.grid, mu=float(ctx.units.per_axis(1)[0]), coupling=m.coupling, B0=m.B0, B1=m.B1,
        interaction_time=m.interaction_time, readout_time=m.readout_time,
        sigma0=cfg.initial.sigma[0], dt=cfg.propagator.dt, dt_traj=cfg.integrator.dt_traj,
        orientation=m.orientation, detector_plane=m.detector_plane, scheme=cfg.integrator.scheme)


def _stern_gerlach(ctx: _Context) -> ScenarioResult:
    cfg = ctx.cfg
    if cfg.initial.spinor is None:
        raise ConfigError("missing required key 'initial.spinor' for scenario 'stern-gerlach'")
    sg = _sg_config(ctx)
    a, b = np.asarray(cfg.initial.spinor) / np.linalg.norm(cfg.initial.spinor)
    n = cfg.ensemble.size
    res = stern_gerlach(sg, a, b, n_traj=n, seed=cfg.seed, threads=ctx.threads)
    p_up = abs(a) ** 2 / (abs(a) ** 2 + abs(b) ** 2)
    psi0 = sg_initial_state(sg, a, b)
    ctx.check("unitarity", abs(norm_squared(res.psi_final) - norm_squared(psi0)), 1e-10)
    ctx.check("exact_probability", abs(res.exact[1] - p_up), 1e-8)
    if n:
        ctx.check("up_fraction", abs(res.up_fraction - p_up), binomial_halfwidth(p_up, n))
        ctx.check("escaped", res.bundle.n_escaped, 0, "==")
    hist = []
    if n:
        cdf = marginal_cdf(res.psi_final, 0)
        hist.append(_hist_1d("final_z", res.bundle.final[:, 0], sg.grid, cdf,
                             cfg.output.histogram_bins))
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"p_up_born": p_up, "p_up_exact": res.exact[1],
                           "up_fraction": res.up_fraction if n else None,
                           "detectors": res.component_detectors},
                          res.bundle.times, res.bundle.positions, sg.grid, [], hist)


def _contextuality(ctx: _Context) -> ScenarioResult:
    cfg = ctx.cfg
    sg = _sg_config(ctx)
    n = cfg.magnet.n_initial
    z0 = sample_density(normalize(gaussian(sg.grid, 0.0, sg.sigma0)), n, cfg.seed).positions[:, 0]
    plus = contextuality_demo(sg, z0, 1, ctx.threads)
    minus = contextuality_demo(sg, z0, -1, ctx.threads)
    ctx.check("unflipped", int(np.sum(~((plus == -minus) & (plus != 0)))), 0, "==")
    band = binomial_halfwidth(0.5, n)
    ctx.check("born_plus", abs(np.mean(plus == 1) - 0.5), band)
    ctx.check("born_minus", abs(np.mean(minus == 1) - 0.5), band)
    hist = [{"name": "values_by_orientation", "labels": ["+1", "-1"],
             "orientation_plus": [int(np.sum(plus == 1)), int(np.sum(plus == -1))],
             "orientation_minus": [int(np.sum(minus == 1)), int(np.sum(minus == -1))]}]
    return ScenarioResult(cfg.scenario, ctx.checks, {"n_initial": n},
                          np.array([0.0]), z0[None, :, None], sg.grid, [], hist)


def _pov_basis(grid: Grid, size: int) -> list[WaveFunction]:
    L = grid.upper[0] - grid.lower[0]
    centers = np.linspace(grid.lower[0] + 0.25 * L, grid.upper[0] - 0.25 * L, size)
    return [normalize(gaussian(grid, c, 1.0, 0.5 * (i % 3 - 1))) for i, c in enumerate(centers)]


def _pov_pipeline(ctx: _Context) -> ScenarioResult:
    cfg, grid = ctx.cfg, ctx.grid
    if grid.ndim != 1:
        raise ConfigError("grid.extents: scenario 'pov-pipeline' uses a 1D system grid")
    m = cfg.measurement
    psi = ctx.initial(np.zeros(grid.shape))
    x = grid.nodes(0)
    spec = region_spec(grid, {"left": x < m.boundary, "right": x >= m.boundary},
                       {"left": -1.0, "right": 1.0})
    pgrid = make_grid([list(m.pointer_extent)])
    apparatus = normalize(gaussian(pgrid, 0.0, m.pointer_sigma))
    pipe = PovPipeline(apparatus, pointer_coupling(spec, m.shift), pointer_readout(spec, m.shift))
    born = outcome_probabilities(psi, spec)
    exact = pipe.exact(psi)
    n = cfg.ensemble.size
    ctx.check("exact_vs_born", float(np.max(np.abs(exact.probabilities - born.probabilities))), 1e-8)
    hist = []
    if n:
        emp = pipe.empirical(psi, n, cfg.seed)
        sd = np.sqrt(np.maximum(exact.probabilities * (1 - exact.probabilities), 1e-300) / n)
        z = float(np.max(np.abs(emp.probabilities - exact.probabilities) / sd))
        ctx.check("empirical_zscore", z, 3.0)
        hist.append({"name": "outcomes", "labels": list(spec.labels),
                     "counts": emp.counts, "expected": exact.probabilities * n})
    rep = pov_bilinearity_check(pipe, _pov_basis(grid, m.basis_size))
    ctx.check("bilinearity_defect", rep.max_defect, 1e-8)
    col = collapse_demo(psi, spec, apparatus, m.shift, cfg.seed, m.n_rerun)
    ctx.check("collapse_overlap", 1 - col.overlap_with_projection, 1e-6)
    ctx.check("rerun_disagreements", int(np.sum(col.rerun_outcomes != col.outcome)), 0, "==")
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"born": born.as_dict(), "outcome": col.outcome,
                           "effective_wf_exists": col.effective.exists,
                           "branch_separation": col.effective.separation}, histograms=hist)


def _conditional(ctx: _Context) -> ScenarioResult:
    cfg, grid = ctx.cfg, ctx.grid
    if grid.ndim != 2:
        raise ConfigError("grid.extents: scenario 'conditional' needs a 2D (x, y) grid")
    c = cfg.conditional
    Psi = normalize(from_function(grid, lambda x, y: np.exp(
        -(x - c.correlation * y) ** 2 / (2 * c.x_width**2) - y**2 / (2 * c.y_width**2))))
    comp = CompositeWaveFunction(Psi, 1)
    y_edges = np.arange(c.y_range[0], c.y_range[1] + 0.5 * c.y_bin, c.y_bin)
    ax = grid.axes[0]
    x_edges = np.arange(ax.lower, ax.upper + 0.5 * c.x_bin, c.x_bin)
    rep = conditional_probability_check(comp, y_edges, x_edges, c.samples, cfg.seed, c.min_count)
    ctx.check("mean_l1", rep.mean_l1, 0.05, "<")
    hist = [{"name": "per_y_bin_l1", "y_centers": rep.y_centers, "counts": rep.counts,
             "l1": rep.l1}]
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"excluded_bins": list(map(int, rep.excluded))}, histograms=hist)


def _lln(ctx: _Context) -> ScenarioResult:
    cfg, grid = ctx.cfg, ctx.grid
    if grid.ndim != 1:
        raise ConfigError("grid.extents: scenario 'lln' uses a 1D one-body grid")
    psi = ctx.initial(np.zeros(grid.shape))
    L = cfg.lln
    reports = [lln_quantum_equilibrium(psi, L.edges, L.M, cfg.seed + i) for i in range(L.seeds)]
    within = sum(r.all_within for r in reports)
    ctx.check("seeds_within_band", within, L.min_within, ">=")
    hist = [{"name": "event_frequencies", "born": reports[0].born,
             "halfwidth": reports[0].halfwidth,
             "frequencies": np.array([r.frequencies for r in reports])}]
    return ScenarioResult(cfg.scenario, ctx.checks,
                          {"born": reports[0].born, "seeds": L.seeds}, histograms=hist)


RUNNERS = {
    "free-packet": _transport,
    "equivariance": _transport,
    "harmonic": _harmonic,
    "double-slit": _double_slit,
    "stern-gerlach": _stern_gerlach,
    "contextuality": _contextuality,
    "pov-pipeline": _pov_pipeline,
    "conditional": _conditional,
    "lln": _lln,
}


def scenario_state(cfg: ScenarioConfig) -> tuple[Grid, Units, np.ndarray, WaveFunction]:
    """Grid, units, potential and initial wave function described by ``cfg``."""
    ctx = _Context(cfg, 1)
    V = ctx.potential()
    return ctx.grid, ctx.units, V, ctx.initial(V)


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    unknown = set(cfg.checks.tolerances) - set(CHECKS[cfg.scenario])
    if unknown:
        raise ConfigError(f"checks.tolerances: unknown check(s) {sorted(unknown)} for scenario "
                          f"{cfg.scenario!r}; allowed {list(CHECKS[cfg.scenario])}")
    ctx = _Context(cfg, threads)
    try:
        return RUNNERS[cfg.scenario](ctx)
    except ConfigError:
        raise
    except PilotWaveError as exc:
        raise ScenarioError(f"scenario {cfg.scenario!r} failed: {type(exc).__name__}: {exc}") from exc
