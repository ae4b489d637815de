import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotwave.errors import OutOfBox, SpinorNotSupported
from pilotwave.grid import (Units, WaveFunction, density, from_function, gaussian, make_grid,
                            normalize, plane_wave)
from pilotwave.guidance import (continuity_residual, current, interpolate, velocity_at,
                                velocity_field, velocity_im_grad)
from pilotwave.propagate import PotentialSpec, Propagator, Stepper, ground_state
from pilotwave.stats import convergence_order


def test_plane_wave_current_is_k_rho():
    g = make_grid([(-np.pi, np.pi, 64)])
    psi = plane_wave(g, 3.0)
    cf = current(psi, Units())
    assert np.allclose(cf.J[:, 0], 3.0 * cf.rho, atol=1e-13)


def test_real_ground_state_carries_no_current():
    g = make_grid([(-8, 8, 256)])
    psi, _ = ground_state(g, 0.5 * g.nodes(0) ** 2)
    assert np.max(np.abs(current(psi, Units()).J)) < 1e-12
    assert np.max(np.abs(velocity_field(psi, Units()).v)) < 1e-12


def test_standing_wave_has_zero_current_and_fringes():
    g = make_grid([(-np.pi, np.pi, 64)])
    psi = normalize(plane_wave(g, 2.0) + plane_wave(g, -2.0))
    cf = current(psi, Units())
    assert np.max(np.abs(cf.J)) < 1e-13
    assert np.ptp(cf.rho) > 0.1


def test_plane_wave_velocity_is_k_over_mu():
    g = make_grid([(-np.pi, np.pi, 64)])
    psi = plane_wave(g, 2.0)
    assert np.allclose(velocity_field(psi, Units()).v, 2.0, atol=1e-10)
    assert np.allclose(velocity_field(psi, Units(4.0)).v, 0.5, atol=1e-10)


def test_spinor_velocity_uses_spinor_bilinears():
    g = make_grid([(-np.pi, np.pi, 64)])
    up = plane_wave(g, 1.0, spinor=[1, 0])
    down = plane_wave(g, 3.0, spinor=[0, 1])
    psi = normalize(up * 0.6 + down * 0.8)
    # J = 0.36 * 1 + 0.64 * 3 per unit density
    assert np.allclose(velocity_field(psi, Units()).v, 0.36 + 0.64 * 3, atol=1e-10)


def test_free_gaussian_velocity_matches_closed_form():
    # v(x, t) = k0/mu + (x - x_c(t)) * tau / (2 mu s0^2 (1 + tau^2)), tau = t / (2 mu s0^2)
    g = make_grid([(-20, 20, 512)])
    mu, s0, k0, t = 1.5, 1.0, 0.8, 1.5
    psi = Stepper(PotentialSpec.zero(g), Propagator(0.005, Units(mu))).advance(
        gaussian(g, -1.0, s0, k0), t)
    vf = velocity_field(psi, Units(mu))
    x = g.nodes(0)
    tau = t / (2 * mu * s0**2)
    xc = -1.0 + k0 * t / mu
    v = k0 / mu + (x - xc) * tau / (2 * mu * s0**2 * (1 + tau**2))
    support = vf.rho > 1e-6 * vf.rho.max()
    assert np.max(np.abs(vf.v[support, 0] - v[support])) < 1e-6


def test_soft_floor_below_threshold():
    g = make_grid([(-8, 8, 64)])
    psi = gaussian(g, 0.0, 0.5, 1.0)
    vf = velocity_field(psi, Units(), eps_rho=1e-3)
    low = vf.rho < vf.floor
    assert np.any(low)
    expected = vf.J[low, 0] / (vf.rho[low] + vf.floor)
    assert np.allclose(vf.v[low, 0], expected)
    high = ~low
    assert np.allclose(vf.v[high, 0], vf.J[high, 0] / vf.rho[high])


def test_speed_cap():
    g = make_grid([(-np.pi, np.pi, 32), (-np.pi, np.pi, 32)])
    psi = plane_wave(g, (3.0, 4.0))
    vf = velocity_field(psi, Units(), v_cap=2.5)
    speed = np.linalg.norm(vf.v, axis=-1)
    assert np.allclose(speed, 2.5)
    assert np.allclose(vf.v[..., 0] / vf.v[..., 1], 0.75)
    q = np.array([[0.1, 0.2], [-1.0, 2.0]])
    assert np.all(np.linalg.norm(velocity_at(vf, q), axis=-1) <= 2.5 + 1e-12)


def test_velocity_at_node_equals_grid_value():
    g = make_grid([(-8, 8, 128)])
    vf = velocity_field(gaussian(g, 1.0, 1.0, 0.5) + gaussian(g, -2.0, 0.7, -1.0), Units())
    x = g.nodes(0)
    idx = [10, 50, 77]
    for order in (1, 3):
        got = velocity_at(vf, x[idx][:, None], order)
        assert np.allclose(got[:, 0], vf.v[idx, 0], rtol=1e-12, atol=1e-14)


def test_velocity_at_uniform_field():
    g = make_grid([(-np.pi, np.pi, 32), (-np.pi, np.pi, 32)])
    vf = velocity_field(plane_wave(g, (1.0, -2.0)), Units())
    q = np.random.default_rng(0).uniform(-3, 3, (20, 2))
    for order in (1, 3):
        assert np.allclose(velocity_at(vf, q, order), [1.0, -2.0], atol=1e-10)
    assert velocity_at(vf, np.array([0.3, 0.1])).shape == (2,)


def test_linear_interpolation_midpoint_is_mean():
    g = make_grid([(-4, 4, 16)])
    x = g.nodes(0)
    f = (2 * x + 1)[:, None]
    mid = 0.5 * (x[3] + x[4])
    assert interpolate(f, g, np.array([[mid]]))[0, 0] == pytest.approx(0.5 * (f[3, 0] + f[4, 0]))


def test_cubic_interpolation_exact_for_cubics_away_from_wrap():
    g = make_grid([(-4, 4, 32)])
    x = g.nodes(0)
    f = (x**3 - 2 * x + 1)[:, None]
    q = np.linspace(-3, 3, 17)[:, None]
    assert np.allclose(interpolate(f, g, q, 3)[:, 0], q[:, 0] ** 3 - 2 * q[:, 0] + 1, atol=1e-12)


def test_velocity_at_out_of_box():
    g = make_grid([(-4, 4, 16)])
    vf = velocity_field(gaussian(g), Units())
    with pytest.raises(OutOfBox):
        velocity_at(vf, np.array([[4.5]]))


def test_im_grad_route_rejects_spinors():
    g = make_grid([(-4, 4, 16)])
    with pytest.raises(SpinorNotSupported):
        velocity_im_grad(gaussian(g, spinor=[1, 0]), Units())


def test_routes_agree_in_support():
    g = make_grid([(-12, 12, 256)])
    psi = normalize(gaussian(g, -2.0, 1.0, 1.5) + gaussian(g, 2.0, 0.8, -1.0))
    vf = velocity_field(psi, Units(1.3))
    vi = velocity_im_grad(psi, Units(1.3))
    ok = vf.rho > vf.floor
    assert np.max(np.abs(vf.v[ok] - vi[ok])) < 1e-8


@pytest.mark.parametrize("method", ["spectral", "central"])
def test_continuity_residual_second_order(method):
    # oracle: discrete continuity with J at the midpoint is O(dt^2 + h^2)
    errs = []
    for n, dt in ((128, 0.04), (256, 0.02), (512, 0.01)):
        g = make_grid([(-20, 20, n)])
        st_ = Stepper(PotentialSpec.zero(g), Propagator(dt))
        psi0 = st_.advance(gaussian(g, 0.0, 1.0, 1.0), 1.0 - dt / 2)
        psi1 = st_.advance(psi0, dt)
        r = continuity_residual(psi0, psi1, Units(), method)
        errs.append(np.max(np.abs(r)))
    assert np.all(np.abs(convergence_order(errs) - 2) < 0.1)


def test_continuity_residual_requires_ordered_times():
    g = make_grid([(-4, 4, 16)])
    psi = gaussian(g)
    with pytest.raises(ValueError):
        continuity_residual(psi, psi, Units())


def test_unknown_derivative_method():
    g = make_grid([(-4, 4, 16)])
    with pytest.raises(ValueError):
        current(gaussian(g), Units(), method="upwind")


# properties ----------------------------------------------------------------

def _packet_pair(c1, c2, k1, k2):
    g = make_grid([(-16, 16, 256)])
    return normalize(gaussian(g, c1, 1.0, k1) + gaussian(g, c2, 0.8, k2) * 0.7)


params = dict(c1=st.floats(-4, 4), c2=st.floats(-4, 4), k1=st.floats(-2, 2), k2=st.floats(-2, 2))


@settings(max_examples=25, deadline=None)
@given(**params, u=st.floats(-1.5, 1.5), mu=st.floats(0.5, 3.0))
def test_galilean_boost_shifts_velocity(c1, c2, k1, k2, u, mu):
    psi = _packet_pair(c1, c2, k1, k2)
    g = psi.grid
    # keep the boost commensurate with the periodic box
    L = g.axes[0].length
    u = np.round(mu * u * L / (2 * np.pi)) * 2 * np.pi / (mu * L)
    boosted = WaveFunction(g, psi.scalar * np.exp(1j * mu * u * g.nodes(0)))
    vf, vb = velocity_field(psi, Units(mu)), velocity_field(boosted, Units(mu))
    ok = vf.rho > 1e-6 * vf.rho.max()
    assert np.max(np.abs(vb.v[ok, 0] - vf.v[ok, 0] - u)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(**params, cr=st.floats(-3, 3), ci=st.floats(-3, 3))
def test_velocity_invariant_under_scalar_multiple(c1, c2, k1, k2, cr, ci):
    c = complex(cr, ci)
    if abs(c) < 1e-2:
        c = 1.0
    psi = _packet_pair(c1, c2, k1, k2)
    a, b = velocity_field(psi, Units()), velocity_field(psi * c, Units())
    # J and rho both scale by |c|^2; what remains is rounding amplified by 1 / rho
    ok = a.rho > 1e-6 * a.rho.max()
    assert np.allclose(a.v[ok], b.v[ok], rtol=1e-10, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(**params)
def test_current_zero_where_density_zero(c1, c2, k1, k2):
    g = make_grid([(-8, 8, 64)])
    psi = from_function(g, lambda x: np.where(np.abs(x) < 3, np.cos(x * np.pi / 6), 0) *
                        np.exp(1j * k1 * x))
    cf = current(psi, Units())
    assert np.all(cf.J[density(psi) == 0] == 0)
    assert np.all(np.isfinite(velocity_field(psi, Units()).v))
