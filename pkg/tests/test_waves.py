import math

import numpy as np
import pytest

from nlwaves.errors import CollapseToEquilibrium, DomainError, NoConvergence
from nlwaves.kernels import DispersalKernel, Grid
from nlwaves.models import R_check, make_model
from nlwaves.simulate import CLAMP_BAND, FarField, SimState, StepControl, bump, run
from nlwaves.spectral import c_star
from nlwaves.waves import (WaveProfile, compute_profile, crossing, initial_guess, resample,
                           tail_direction, translate, wave_residual)

KERNEL = DispersalKernel.gaussian(1.0)


@pytest.fixture(scope="module")
def pp2_wave():
    model = make_model("pp2")
    grid = Grid.build(60.0, 0.2, KERNEL)
    return model, compute_profile(model, KERNEL, 1.1 * c_star(model, KERNEL), grid)


@pytest.fixture(scope="module")
def epidemic_wave():
    model = make_model("epidemic", {"beta": 2, "s_star": 1, "gamma": 1})
    grid = Grid.build(60.0, 0.2, KERNEL)
    return model, compute_profile(model, KERNEL, 1.2 * c_star(model, KERNEL), grid)


def test_pp2_profile(pp2_wave):
    model, prof = pp2_wave
    assert prof.residual_sup <= 1e-6
    assert np.allclose(prof.phi[:, 0], [7 / 9, 5 / 9], atol=1e-4)
    assert np.allclose(prof.phi[:, -1], [1.0, 0.0], atol=1e-4)
    assert np.all(prof.phi[:, :-CLAMP_BAND] > 0)
    assert prof.pin_error() <= 1e-8
    assert not prof.flags
    assert np.all(prof.phi <= model.box_hi[:, None] + 1e-6)
    assert R_check(model, prof).ok


def test_epidemic_profile(epidemic_wave):
    model, prof = epidemic_wave
    assert prof.residual_sup <= 1e-6
    assert np.all(prof.phi[1, CLAMP_BAND:-CLAMP_BAND] > 0)
    assert prof.phi[0, -1] == pytest.approx(1.0, abs=1e-4)
    s0 = prof.E_minus[0]
    assert 0 < s0 <= 1
    # susceptibles are depleted behind the front: phi_1 decreases as z decreases
    assert np.all(np.diff(prof.phi[0]) >= -1e-12)
    # summing the two equations and integrating: c (s* - s0) = gamma * int phi_2
    integral = np.trapezoid(prof.phi[1], prof.z)
    assert prof.c * (1.0 - s0) == pytest.approx(1.0 * integral, rel=1e-4)
    # dispersal only raises s0 above the well-mixed final size
    assert s0 > model.E_minus[0]
    assert R_check(model, prof).ok


def test_profile_is_stationary(pp2_wave):
    model, prof = pp2_wave
    state = SimState(0.0, prof.phi.copy(), prof.c, prof.far_field)
    out = run(state, model, KERNEL, prof.grid, StepControl.auto(prof.grid, prof.c, model), 50.0)
    assert np.max(np.abs(out.state.u - prof.phi)) <= 1e-7


def test_translation_changes_residual_little(pp2_wave):
    model, prof = pp2_wave
    base = prof.residual_sup
    for k in (1, 3, -2):
        s = k * prof.grid.dx
        far = prof.far_field.shifted(s)
        moved = prof.with_phi(translate(prof.phi, s, prof.grid, prof.far_field), far_field=far)
        r, _ = wave_residual(moved, KERNEL, model)
        assert r <= 2 * base


def test_bump_raises_residual_proportionally(pp2_wave):
    model, prof = pp2_wave
    phi = prof.phi.copy()
    phi[1] += 0.01 * bump(prof.z, 0.0, 3.0)
    r, _ = wave_residual(prof.with_phi(phi), KERNEL, model)
    assert 1e-3 <= r - prof.residual_sup <= 1e-1


def test_constant_profile_residual():
    model = make_model("pp2")
    grid = Grid.build(20.0, 0.2, KERNEL)
    flat = np.repeat(model.E_minus[:, None], grid.n, axis=1)
    prof = WaveProfile(c=1.7, grid=grid, phi=flat, E_plus=model.E_minus, E_minus=model.E_minus,
                       far_field=FarField.constant(model.E_minus, model.E_minus), pin_component=0)
    assert wave_residual(prof, KERNEL, model)[0] <= 1e-10


def test_save_load_round_trip(pp2_wave, tmp_path):
    _, prof = pp2_wave
    prof.save(tmp_path / "p.dat")
    back = WaveProfile.load(tmp_path / "p.dat")
    assert np.array_equal(back.phi, prof.phi)
    assert back.grid == prof.grid
    assert back.c == prof.c
    assert np.array_equal(back.far_field.right_amplitude, prof.far_field.right_amplitude)
    assert back.far_field.right_decay == prof.far_field.right_decay
    assert back.residual_sup == prof.residual_sup


def test_resample_to_finer_grid(pp2_wave):
    model, prof = pp2_wave
    fine = Grid.build(prof.grid.L, prof.grid.dx / 2, KERNEL)
    phi = resample(prof, fine)
    assert np.allclose(phi[:, ::2], prof.phi, atol=1e-12, rtol=1e-12)
    with pytest.raises(DomainError):
        resample(prof, Grid.build(2 * prof.grid.L, prof.grid.dx, KERNEL))


def test_translate_is_exact_on_exponentials():
    grid = Grid.build(10.0, 0.1, ghost=4)
    far = FarField(np.array([1.0]), np.array([0.0]), right_decay=0.7,
                   right_amplitude=np.array([math.exp(-0.7 * 10.0)]))
    u = np.exp(-0.7 * grid.z)[None, :]
    moved = translate(u, 0.37, grid, far)
    # the clamped left band is a kink in log u; its influence decays geometrically
    inner = (grid.z >= -2.0) & (grid.z <= 8.0)
    assert np.allclose(moved[0, inner], np.exp(-0.7 * (grid.z[inner] + 0.37)), rtol=1e-12)


def test_below_minimal_speed_fails():
    model = make_model("pp2")
    grid = Grid.build(60.0, 0.2, KERNEL)
    with pytest.raises((NoConvergence, CollapseToEquilibrium)):
        compute_profile(model, KERNEL, 0.5 * c_star(model, KERNEL), grid)


def test_domain_too_small():
    model = make_model("pp2")
    with pytest.raises(DomainError):
        compute_profile(model, KERNEL, 1.1 * c_star(model, KERNEL), Grid.build(10.0, 0.2, KERNEL))


def test_tail_direction():
    assert np.allclose(tail_direction(make_model("pp2")), [-0.2, 1.0])
    v = tail_direction(make_model("epidemic"))
    assert np.allclose(v, [-1.0, 0.5])
    # (J - 1) v = 0 at E+ = (s*, 0)
    m = make_model("epidemic")
    jac = np.diag(m.rates(m.E_plus)) + m.E_plus[:, None] * m.A
    assert np.allclose(jac @ v, m.spreading_rate * v)


def test_initial_guess_limits():
    model = make_model("pp2")
    grid = Grid.build(60.0, 0.2, KERNEL)
    g = initial_guess(model, grid, 0.7)
    assert np.allclose(g[:, 0], model.E_minus, atol=1e-12)
    assert np.allclose(g[:, -1], model.E_plus, atol=1e-12)
    # leading edge keeps its relative precision far ahead
    assert g[1, -1] > 0
    assert g[1, -1] == pytest.approx(model.E_minus[1] * math.exp(-0.7 * 60.0), rel=1e-10)


def test_crossing():
    z = np.linspace(-5, 5, 101)
    assert crossing(np.tanh(z - 0.33), z, 0.0) == pytest.approx(0.33, abs=2e-3)
    assert crossing(np.ones_like(z), z, 0.0) is None
