"""Ensembles of Bohmian configurations advected along the guiding field.

The wave function is stepped once per trajectory step (plus a half-step
snapshot for the Runge-Kutta stages) and every member reads the same immutable
field snapshots, so field work does not grow with the ensemble.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EscapedBox
from .grid import Ensemble, WaveFunction
from .guidance import DEFAULT_EPS_RHO, VelocityField, _cap, _soft_ratio, interpolate, velocity_field
from .propagate import Stepper, step

MIDPOINT = "midpoint"
RK4 = "rk4"


@dataclass(frozen=True)
class IntegratorSpec:
    dt_traj: float
    scheme: str = RK4
    record_every: int = 1
    interp_order: int = 1
    eps_rho: float = DEFAULT_EPS_RHO
    cap_factor: float = 10.0

    def __post_init__(self):
        if self.scheme not in (MIDPOINT, RK4):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.dt_traj > 0:
            raise ValueError("dt_traj must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    member: int
    times: np.ndarray
    points: np.ndarray  # (T, d)


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    times: np.ndarray  # (T,)
    positions: np.ndarray  # (T, n, d); rows after escape repeat the last in-box point
    escaped: np.ndarray  # (n,) bool
    psi_final: WaveFunction
    snapshots: list[WaveFunction] = field(default_factory=list)

    @property
    def n_members(self) -> int:
        return self.positions.shape[1]

    @property
    def n_escaped(self) -> int:
        return int(self.escaped.sum())

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def member(self, i: int) -> Trajectory:
        return Trajectory(i, self.times, self.positions[:, i, :])

    def trajectories(self) -> list[Trajectory]:
        return [self.member(i) for i in range(self.n_members) if not self.escaped[i]]

    def require_no_escape(self) -> None:
        if self.n_escaped:
            raise EscapedBox(f"{self.n_escaped} of {self.n_members} members left the box")


def _steps_for(stepper: Stepper, H: float) -> int:
    m = H / stepper.prop.dt
    mi = int(round(m))
    if mi < 1 or not np.isclose(m, mi, rtol=1e-9, atol=0):
        raise ValueError(f"dt_traj={H} must be a positive multiple of the propagator dt={stepper.prop.dt}")
    return mi


def _advance_with_midpoint(psi: WaveFunction, stepper: Stepper, m: int):
    """March m propagator steps; also return the state half-way through."""
    mid = None
    for i in range(m):
        if 2 * i == m:
            mid = psi
        elif 2 * i + 1 == m:
            mid = step(psi, stepper.pot, stepper.prop.with_dt(0.5 * stepper.prop.dt))
        psi = step(psi, stepper.pot, stepper.prop)
    return psi, mid


class _FieldEvaluator:
    def __init__(self, order: int, threads: int):
        self.order = order
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def __call__(self, vf: VelocityField, q: np.ndarray) -> np.ndarray:
        if self._pool is None or q.shape[0] < 2 * self.threads:
            return self._eval(vf, q)
        chunks = np.array_split(q, self.threads)
        return np.concatenate(list(self._pool.map(lambda c: self._eval(vf, c), chunks)))

    def _eval(self, vf: VelocityField, q: np.ndarray) -> np.ndarray:
        J = interpolate(vf.J, vf.grid, q, self.order)
        rho = interpolate(vf.rho, vf.grid, q, self.order)
        if self.order != 1:
            rho = np.maximum(rho, 0.0)
        return _cap(_soft_ratio(J, rho, vf.floor), vf.v_cap)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def advect(ensemble: Ensemble, psi0: WaveFunction, stepper: Stepper, integrator: IntegratorSpec,
           t_final: float, threads: int = 1, keep_snapshots: bool = False) -> TrajectoryBundle:
    """Integrate dQ/dt = v(Q, t) for every member from ``psi0.time`` to ``t_final``.

    Members that leave the box are frozen at their last in-box point and flagged.
    """
    grid = psi0.grid
    H = integrator.dt_traj
    m = _steps_for(stepper, H)
    n_steps = int(round((t_final - psi0.time) / H))
    if n_steps < 0 or not np.isclose(psi0.time + n_steps * H, t_final, rtol=1e-9, atol=1e-12):
        raise ValueError(f"t_final - t0 = {t_final - psi0.time} is not a multiple of dt_traj={H}")
    units = stepper.prop.units
    v_cap = integrator.cap_factor * grid.box_diagonal / H

    def vfield(psi):
        return velocity_field(psi, units, integrator.eps_rho, v_cap)

    Q = np.array(ensemble.positions, dtype=float)
    if Q.shape[1] != grid.ndim:
        raise ValueError(f"ensemble dimension {Q.shape[1]} does not match grid dimension {grid.ndim}")
    escaped = ~grid.contains(Q)
    times = [psi0.time]
    record = [Q.copy()]
    snaps = [psi0] if keep_snapshots else []
    evaluate = _FieldEvaluator(integrator.interp_order, threads)
    psi = psi0
    vf0 = vfield(psi)
    try:
        for k in range(1, n_steps + 1):
            psi_next, psi_mid = _advance_with_midpoint(psi, stepper, m)
            vf_mid = vfield(psi_mid)
            vf1 = vfield(psi_next)
            alive = ~escaped
            q = Q[alive]
            k1 = evaluate(vf0, q)
            if integrator.scheme == MIDPOINT:
                q_new = q + H * evaluate(vf_mid, q + 0.5 * H * k1)
            else:
                k2 = evaluate(vf_mid, q + 0.5 * H * k1)
                k3 = evaluate(vf_mid, q + 0.5 * H * k2)
                k4 = evaluate(vf1, q + H * k3)
                q_new = q + (H / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            inside = grid.contains(q_new)
            upd = np.flatnonzero(alive)
            Q[upd[inside]] = q_new[inside]
            escaped[upd[~inside]] = True
            psi, vf0 = psi_next, vf1
            if k % integrator.record_every == 0 or k == n_steps:
                times.append(psi.time)
                record.append(Q.copy())
                if keep_snapshots:
                    snaps.append(psi)
    finally:
        evaluate.close()
    return TrajectoryBundle(np.array(times), np.stack(record), escaped, psi, snaps)


@dataclass(frozen=True)
class CrossingReport:
    violations: list[tuple[float, int]]  # (time, member)
    checked_members: int

    @property
    def count(self) -> int:
        return len(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations


def crossing_check(bundle: TrajectoryBundle, axis: int = 0, plane: float | None = None
                   ) -> CrossingReport:
    """Order preservation along ``axis`` (1D, ``plane=None``) or side preservation
    relative to the plane ``q[axis] == plane``."""
    keep = ~bundle.escaped
    pos = bundle.positions[:, keep, axis]
    members = np.flatnonzero(keep)
    violations = []
    if plane is None:
        order = np.argsort(pos[0], kind="stable")
        ordered = pos[:, order]
        bad = np.diff(ordered, axis=1) < 0
        for j, i in zip(*np.nonzero(bad)):
            violations.append((float(bundle.times[j]), int(members[order[i + 1]])))
    else:
        side0 = np.sign(pos[0] - plane)
        side = np.sign(pos - plane)
        bad = (side != side0[None, :]) & (side0[None, :] != 0)
        for j, i in zip(*np.nonzero(bad)):
            violations.append((float(bundle.times[j]), int(members[i])))
    return CrossingReport(violations, int(keep.sum()))


def advect_schedule(ensemble: Ensemble, psi0: WaveFunction, schedule: list[tuple[Stepper, float]],
                    integrator: IntegratorSpec, threads: int = 1,
                    keep_snapshots: bool = False) -> TrajectoryBundle:
    """Advect through consecutive segments with piecewise-constant Hamiltonians.

    ``schedule`` lists ``(stepper, duration)`` pairs.
    """
    psi = psi0
    current = ensemble
    times, record, snaps = [], [], []
    escaped = np.zeros(len(ensemble), bool)
    for i, (stepper, duration) in enumerate(schedule):
        b = advect(current, psi, stepper, integrator, psi.time + duration, threads, keep_snapshots)
        skip = 0 if i == 0 else 1
        times.append(b.times[skip:])
        record.append(b.positions[skip:])
        if keep_snapshots:
            snaps.extend(b.snapshots[skip:])
        escaped |= b.escaped
        psi = b.psi_final
        current = Ensemble(b.final, ensemble.rng_seed)
    return TrajectoryBundle(np.concatenate(times), np.concatenate(record), escaped, psi, snaps)
