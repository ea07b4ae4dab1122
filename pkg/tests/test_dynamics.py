import math

import numpy as np
import pytest

from qnls.dynamics import IntegratorConfig, Integrator, evolve, rhs, step
from qnls.functionals import workspace_for
from qnls.model import (FieldState, GaussianPotential, GaussianRecipe, GridSpec, Model,
                        NonlinearitySpec, PowerLawPotential, make_initial_data)


def free_gaussian_1d(x, t, L, images=5):
    """Periodized closed form of the free flow ``iu_t = Δu`` from ``e^{-x²}``."""
    z = 1 - 4j * t
    return sum(z ** -0.5 * np.exp(-(x + 2 * L * n) ** 2 / z) for n in range(-images, images + 1))


def fd4_laplacian(f, dx):
    return (-np.roll(f, 2) + 16 * np.roll(f, 1) - 30 * f + 16 * np.roll(f, -1) - np.roll(f, -2)) / (12 * dx * dx)


# --- right-hand side --------------------------------------------------------

def test_rhs_lattice_mode():
    g = GridSpec(1, math.pi, 32)
    u = np.exp(3j * g.axis())
    out = rhs(FieldState(g, u), Model())
    assert np.max(np.abs(out - 9j * u)) < 1e-12


def test_rhs_zero_field():
    g = GridSpec(1, 8.0, 64)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 1.0))
    assert np.max(np.abs(rhs(FieldState(g, np.zeros(g.shape)), model))) == 0.0


def test_rhs_matches_finite_difference_oracle():
    """Fourth-order finite differences of the same expression converge at order >= 3.5."""
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(0.5, 0.7))
    errs = []
    for n in (32, 64, 128):
        g = GridSpec(1, math.pi, n)
        x = g.axis()
        u = (1.0 + 0.3 * np.cos(x) + 0.2j * np.sin(2 * x)) * np.exp(0.5j * np.cos(x))
        ws = workspace_for(model, g, dealias=False)
        spec = Integrator(model, ws).rhs(u)
        rho = np.abs(u) ** 2
        h = rho ** 0.6
        hp = 0.6 * rho ** -0.4
        conv = ws.hartree_convolution(rho)
        fd = -1j * (fd4_laplacian(u, g.dx) + 2 * u * hp * fd4_laplacian(h, g.dx) + conv * u)
        errs.append(np.max(np.abs(spec - fd)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


# --- single steps -----------------------------------------------------------

def test_step_zero_dt_is_identity():
    g = GridSpec(1, 8.0, 64)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0, 0.2))
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 1.0))
    out = step(st, model, 0.0)
    assert np.array_equal(out.u, st.u) and out.t == st.t


def test_step_free_is_exact_phase_rotation():
    g = GridSpec(1, 12.0, 256)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0))
    cap = IntegratorConfig().dt_cap(g)
    u = st
    for _ in range(10):
        u = step(u, Model(), cap)
    ref = np.fft.ifft(np.exp(1j * np.fft.fftfreq(256, g.dx / (2 * math.pi)) ** 2 * 10 * cap) * np.fft.fft(st.u))
    assert np.max(np.abs(u.u - ref)) < 1e-13


def test_step_rejects_dt_above_cap():
    g = GridSpec(1, 8.0, 64)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0))
    with pytest.raises(ValueError):
        step(st, Model(), 1.0)


def test_one_step_mass_conservation():
    g = GridSpec(1, 16.0, 256)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 2.0))
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 2.0))
    ws = workspace_for(model, g)
    dt = IntegratorConfig().dt_cap(g)
    out = step(st, model, dt, ws=ws)
    m0, m1 = ws.integrate(np.abs(st.u) ** 2), ws.integrate(np.abs(out.u) ** 2)
    assert abs(m1 - m0) / m0 < 1e-10


def test_time_convergence_order():
    g = GridSpec(1, 16.0, 256)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 2.0))
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 2.0, 0.1))
    integ = Integrator(model, workspace_for(model, g))
    T = 0.05

    def run(nsteps):
        u = st.u
        for _ in range(nsteps):
            u = integ.step(u, T / nsteps)
        return u

    ref = run(256)
    e1 = np.linalg.norm(run(16) - ref)
    e2 = np.linalg.norm(run(32) - ref)
    assert e1 / e2 >= 2 ** 3.5


# --- evolve -----------------------------------------------------------------

def test_free_evolution_matches_closed_form():
    g = GridSpec(1, 12.0, 256)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0))
    out, recs = evolve(st, Model(), IntegratorConfig(boundary_tol=math.inf), 1.0, 0.1)
    assert out.verdict == "completed" and out.t_end == 1.0
    err = math.sqrt(np.sum(np.abs(out.state.u - free_gaussian_1d(g.axis(), 1.0, 12.0)) ** 2) * g.dx)
    assert err < 1e-6
    E0 = recs[0].energy
    assert max(abs(r.energy - E0) for r in recs) / E0 < 1e-8
    assert len(recs) == 11
    assert recs[-1].t == pytest.approx(1.0)


def test_free_radial_evolution_matches_closed_form():
    g = GridSpec(3, 40.0, 1024, radial=True)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0), boundary_tol=1.0)
    out, _ = evolve(st, Model(), IntegratorConfig(boundary_tol=math.inf), 0.5, 0.25)
    z = 1 - 2j
    r = g.axis()
    exact = z ** -1.5 * np.exp(-r * r / z)
    assert np.max(np.abs(out.state.u - exact)) < 1e-10


def test_full_model_conservation_1d():
    g = GridSpec(1, 32.0, 512)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 2.0))
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 2.0))
    out, recs = evolve(st, model, IntegratorConfig(), 1.0, 0.05)
    assert out.verdict == "completed"
    M0, E0 = recs[0].mass, recs[0].energy
    assert max(abs(r.mass - M0) for r in recs) / M0 < 1e-8
    assert max(abs(r.energy - E0) for r in recs) / abs(E0) < 1e-6


def test_radial_conservation_with_singular_kernel():
    g = GridSpec(3, 24.0, 512, radial=True)
    model = Model(NonlinearitySpec.power(1.0, 1.0), PowerLawPotential(2.5, 4.0, negative=True))
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0), boundary_tol=1e-8)
    out, recs = evolve(st, model, IntegratorConfig(boundary_tol=math.inf), 0.5, 0.1)
    assert out.verdict == "completed"
    M0, E0 = recs[0].mass, recs[0].energy
    assert max(abs(r.mass - M0) for r in recs) / M0 < 1e-8
    assert max(abs(r.energy - E0) for r in recs) / abs(E0) < 1e-6


def test_verdict_aborted_boundary():
    g = GridSpec(1, 6.0, 128)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0))
    out, _ = evolve(st, Model(), IntegratorConfig(), 2.0, 0.1)
    assert out.verdict == "aborted_boundary"
    assert out.state.valid


def test_verdict_aborted_nan():
    g = GridSpec(1, 6.0, 64)
    u = np.ones(g.shape, dtype=complex)
    u[3] = np.nan
    out, recs = evolve(FieldState(g, u), Model(), IntegratorConfig(), 1.0, 0.1)
    assert out.verdict == "aborted_nan" and recs == []


def test_verdict_blowup_threshold():
    g = GridSpec(1, 12.0, 256)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0, 0.5))
    model = Model(NonlinearitySpec.zero(), GaussianPotential(20.0, 0.5))
    # a strongly attractive kernel concentrates the field; a low ratio certifies growth
    cfg = IntegratorConfig(blowup_ratio=1.5, boundary_tol=math.inf)
    out, recs = evolve(st, model, cfg, 1.0, 0.05)
    assert out.verdict == "blowup_detected"
    assert out.detector_value_at_end >= 1.5 * out.detector_initial
    assert recs[-1].t == out.t_end


def test_verdict_aborted_drift():
    g = GridSpec(1, 16.0, 128)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 2.0))
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 2.0))
    out, _ = evolve(st, model, IntegratorConfig(drift_tol=1e-300, local_tol=1e-3), 1.0, 0.1)
    assert out.verdict == "aborted_drift"


def test_integrator_config_validation():
    for bad in [dict(dt_init=0.0), dict(dt_min=1e-2, dt_init=1e-3), dict(cfl_factor=-1.0),
                dict(grow=1.0), dict(blowup_threshold=0.0)]:
        with pytest.raises(ValueError):
            IntegratorConfig(**bad)
    assert IntegratorConfig().dt_cap(GridSpec(1, 1.0, 20)) == pytest.approx(0.2 * 0.1 ** 2)


def test_callbacks_receive_every_sample():
    g = GridSpec(1, 12.0, 128)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0))
    seen = []
    out, recs = evolve(st, Model(), IntegratorConfig(boundary_tol=math.inf), 0.5, 0.1,
                       [lambda rec, s: seen.append((rec.t, s.t))])
    assert [a for a, _ in seen] == [r.t for r in recs]
    assert all(a == b for a, b in seen)
