"""Observed convergence orders of the residual diagnostics and trajectory integrators.

    python scripts/convergence_study.py

Prints, for a free Gaussian packet on [-20, 20]:
  * continuity and Hamilton-Jacobi residuals under joint (h, dt) halving,
  * trajectory error against the exact scaling solution Q0 sigma(t) / sigma0,
  * the Newtonian-check deviation under dt_traj halving.
"""
import argparse
import sys

import numpy as np

from pilotwave.grid import Ensemble, Units, gaussian, make_grid
from pilotwave.guidance import continuity_residual
from pilotwave.polar import hj_residual, newtonian_check, polar_decompose
from pilotwave.propagate import PotentialSpec, Propagator, Stepper
from pilotwave.stats import convergence_order
from pilotwave.trajectory import IntegratorSpec, advect


def residuals(levels):
    cont, hj = [], []
    for n, dt in levels:
        g = make_grid([(-20, 20, n)])
        st_ = Stepper(PotentialSpec.zero(g), Propagator(dt))
        psi0 = st_.advance(gaussian(g, 0.0, 1.0, 1.0), 1.0 - dt / 2)
        psi1 = st_.advance(psi0, dt)
        cont.append(np.max(np.abs(continuity_residual(psi0, psi1, Units()))))
        hj.append(hj_residual(polar_decompose(psi0, Units()), polar_decompose(psi1, Units()),
                              np.zeros(g.shape), Units()).max)
    return cont, hj


def trajectory_errors(scheme, steps, interp_order):
    g = make_grid([(-20, 20, 1024)])
    Q0 = np.array([[-1.5], [-0.5], [1.0], [2.0]])
    st_ = Stepper(PotentialSpec.zero(g), Propagator(0.0125))
    errs = []
    for H in steps:
        b = advect(Ensemble(Q0), gaussian(g, 0.0, 1.0), st_, IntegratorSpec(H, scheme, interp_order=interp_order), 3.2)
        errs.append(np.max(np.abs(b.final - Q0 * np.sqrt(1 + 1.6**2))))
    return errs


def newton_deviation(scheme, steps):
    g = make_grid([(-20, 20, 1024)])
    st_ = Stepper(PotentialSpec.zero(g), Propagator(0.0125))
    out = []
    for H in steps:
        b = advect(Ensemble(np.linspace(-2, 2, 9)[:, None]), gaussian(g, 0.0, 1.0, 1.0), st_,
                   IntegratorSpec(H, scheme, interp_order=3), 3.2, keep_snapshots=True)
        pfs = [polar_decompose(s, Units()) for s in b.snapshots]
        out.append(newtonian_check(b.times, b.positions, pfs, np.zeros(g.shape), Units()).max_deviation)
    return out


def table(title, xs, errs, label):
    orders = [np.nan] + list(convergence_order(errs))
    print(title)
    for x, e, o in zip(xs, errs, orders):
        print(f"  {label}={x!s:<14} error={e:.3e}  order={o:.2f}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--levels", type=int, default=4, help="refinement levels for residuals")
    args = p.parse_args(argv)
    levels = [(128 * 2**i, 0.04 / 2**i) for i in range(args.levels)]
    cont, hj = residuals(levels)
    table("continuity residual (max)", levels, cont, "(n, dt)")
    table("Hamilton-Jacobi residual (max)", levels, hj, "(n, dt)")
    steps = [0.4, 0.2, 0.1, 0.05]
    for scheme in ("midpoint", "rk4"):
        table(f"trajectory error, {scheme}, cubic interpolation", steps,
              trajectory_errors(scheme, steps, 3), "dt_traj")
    table("trajectory error, rk4, linear interpolation", steps,
          trajectory_errors("rk4", steps, 1), "dt_traj")
    for scheme in ("midpoint", "rk4"):
        table(f"Newtonian check deviation, {scheme}", steps[:3], newton_deviation(scheme, steps[:3]),
              "dt_traj")
    return 0


if __name__ == "__main__":
    sys.exit(main())
