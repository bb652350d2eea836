import math

import numpy as np
import pytest
from scipy import integrate

from tools.kam_engine import initial_state
from tools.lattice_resonance import Site
from tools.torus import GalerkinNLS, extract_torus, ode_validate, peak_frequency

from conftest import DESK_EPS, DESK_XI


@pytest.fixture
def desk_torus(desk_normal_form):
    normal, P = desk_normal_form
    return extract_torus(initial_state(normal, P))


def test_peak_frequency_recovers_tone():
    dt = 0.01
    t = np.arange(4096) * dt
    assert peak_frequency(np.exp(3.0j * t), dt) == pytest.approx(3.0, abs=1e-2)
    assert peak_frequency(np.exp(-1.7j * t), dt) == pytest.approx(-1.7, abs=1e-2)


def test_galerkin_flow_conserves_energy_and_mass():
    system = GalerkinNLS(2)
    rng = np.random.default_rng(4)
    q0 = 0.1 * (rng.normal(size=len(system.sites)) + 1j * rng.normal(size=len(system.sites)))
    sol = integrate.solve_ivp(lambda _, q: system.field(q), (0.0, 1.0), q0, method="DOP853",
                              rtol=1e-12, atol=1e-14)
    q1 = sol.y[:, -1]
    assert abs(system.energy(q1) - system.energy(q0)) <= 1e-9 * abs(system.energy(q0))
    assert np.sum(np.abs(q1) ** 2) == pytest.approx(np.sum(np.abs(q0) ** 2), rel=1e-9)


def test_linear_modes_rotate_at_their_norms():
    system = GalerkinNLS(1)
    q0 = np.zeros(len(system.sites), dtype=complex)
    j = system.sites.index(Site(1, 0))
    q0[j] = 1e-6
    q = q0 + 1e-3 * system.field(q0)
    assert (q[j] - q0[j]) / (1e-3 * q0[j]) == pytest.approx(1j, rel=1e-6)


def test_torus_frequencies_follow_time_scale(desk_torus):
    assert np.allclose(desk_torus.physical_frequencies, DESK_EPS ** 3 * np.asarray(desk_torus.omega_infty))
    assert set(desk_torus.to_dict()) >= {"S", "xi", "eps", "omega_infty", "physical_frequencies"}
    assert desk_torus.to_dict()["steps"] == 0


def test_embedding_amplitudes(desk_torus):
    q = desk_torus.embedding([0.0, 0.0])
    for site, x in zip(desk_torus.S.sites, DESK_XI):
        assert abs(q[site]) == pytest.approx(math.sqrt(DESK_EPS ** 3 * x), rel=1e-2)
    off = max(abs(q[n]) for n in desk_torus.sites)
    assert off < 1e-2 * math.sqrt(DESK_EPS ** 3)


def test_ode_validation_report(desk_torus):
    report = ode_validate(desk_torus, 2, T=5.0, dt=0.01)
    assert report.samples == 501
    assert report.energy_drift < 1e-8
    assert report.mass_drift < 1e-8
    assert len(report.frequencies_fft) == desk_torus.S.b
    assert report.frequencies_linear == [1.0, 1.0]


@pytest.mark.parametrize("T,dt", [(0.0, 0.01), (1.0, 0.0), (-1.0, 0.1)])
def test_ode_validation_rejects_bad_grid(desk_torus, T, dt):
    with pytest.raises(ValueError):
        ode_validate(desk_torus, 2, T=T, dt=dt)


def test_long_run_peaks_near_lattice_norms(desk_torus):
    report = ode_validate(desk_torus, 2, T=1000.0, dt=0.05)
    assert report.energy_drift <= 1e-8
    for fft, linear in zip(report.frequencies_fft, report.frequencies_linear):
        assert abs(fft - linear) <= 5 * report.xi_scale
