import math

import numpy as np
import pytest

from tools.config import get_settings
from tools.hamiltonian_algebra import FourierTaylorSeries, MultiIndex, lie_transform
from tools.kam_engine import (
    StepReport,
    conjugacy_defect,
    contraction_exponent,
    divisor_conditions,
    flow,
    initial_cutoff,
    initial_state,
    iterate,
    kam_step,
    lattice_ball,
    rho_for,
    run_iteration,
    schedule,
    smallness_margin,
    toeplitz_check,
)
from tools.lattice_resonance import Site, TangentialSet
from tools.normal_form import Parameters, build_normal_form

from conftest import DESK_SITES, DESK_XI


@pytest.fixture(scope="module")
def unit_scale_normal():
    """Desk sites at eps = 1, so frequencies are O(1) and second-order terms survive rounding"""
    state, _ = build_normal_form(Parameters(DESK_XI, 1.0), TangentialSet(DESK_SITES), 2, 4)
    return state


def tiny_perturbation(delta):
    """delta (I_1 e^{i theta_1} + I_1 e^{-i theta_1}) on two tangential sites"""
    return (FourierTaylorSeries.monomial(delta, b=2, k=(1, 0), l=(1, 0))
            + FourierTaylorSeries.monomial(delta, b=2, k=(-1, 0), l=(1, 0)))


def zero_perturbation():
    return FourierTaylorSeries({}, b=2)


def step_report(nu, before, after):
    return StepReport(nu=nu, K=2, eps_before=before, eps_after=after, divisor_flags=0, F_norm=0.0,
                      remainder_norm=None, contraction_exponent_estimate=None, envelope_constant=None,
                      omega_shift=0.0, p011_shift=0.0, bounds_ok=True, residual=0.0, diverged=after > before)


# ---------- schedule ----------

def test_rho_for_matches_exponent():
    K = 6
    assert rho_for(K) * K ** (1 + 3 * get_settings().rho_exponent) == pytest.approx(1.0)


def test_schedule_recursions(desk_normal_form):
    normal, P = desk_normal_form
    base = initial_state(normal, P, r=0.5, s=1.0, K0=2)
    one = schedule(1, base)
    assert one.r == pytest.approx(0.75 * base.r)
    assert one.K == 6
    assert one.Delta == 8
    assert one.s == pytest.approx(0.25 * base.eps ** (1 / 3) * base.s)
    assert one.L == pytest.approx(base.L + base.eps)
    assert schedule(2, base).K == 18
    assert schedule(0, base).K == base.K


def test_schedule_cannot_go_back(desk_normal_form):
    normal, P = desk_normal_form
    base = initial_state(normal, P)
    later = kam_step(initial_state(normal, zero_perturbation()))[0]
    assert later.nu == 1
    with pytest.raises(ValueError):
        schedule(0, later)
    assert schedule(1, base).nu == 1


def test_initial_cutoff():
    eps0, r0, r1 = 1e-6, 0.5, 0.375
    K = initial_cutoff(eps0, r0, r1)
    delta = r0 - r1
    assert K ** 2 * math.exp(-K * delta) <= eps0 ** (1 / 3)
    assert (K - 1) ** 2 * math.exp(-(K - 1) * delta) > eps0 ** (1 / 3)
    with pytest.raises(ValueError):
        initial_cutoff(eps0, 0.3, 0.4)


def test_lattice_ball_counts():
    assert len(list(lattice_ball(2, 1))) == 5
    assert len(list(lattice_ball(2, 2))) == 13
    assert all(sum(map(abs, k)) <= 3 for k in lattice_ball(3, 3))


def test_initial_state_gamma_default(desk_normal_form):
    normal, P = desk_normal_form
    state = initial_state(normal, P)
    assert state.eps > 0
    assert state.gamma == pytest.approx(state.eps ** (1 / 50))
    assert state.rho == pytest.approx(rho_for(state.K))


# ---------- steps ----------

def test_zero_perturbation_advances_schedule(desk_normal_form):
    normal, _ = desk_normal_form
    state = initial_state(normal, zero_perturbation(), K0=2)
    nxt, report = kam_step(state)
    assert nxt.nu == 1
    assert nxt.K == 6
    assert nxt.P.is_zero()
    assert report.eps_after == 0.0
    assert report.F_norm == 0.0
    assert np.allclose(nxt.normal.omega, normal.omega)


def test_zero_steps_is_empty(desk_normal_form):
    normal, P = desk_normal_form
    state = initial_state(normal, P)
    result = iterate(state, 0)
    assert result.reports == []
    assert result.state is state
    assert result.aborted is None
    with pytest.raises(ValueError):
        iterate(state, -1)


def test_small_perturbation_contracts(unit_scale_normal):
    state = initial_state(unit_scale_normal, tiny_perturbation(1e-3), K0=2)
    assert 0 < state.eps < 1
    nxt, report = kam_step(state)
    assert 0 < report.eps_after < report.eps_before
    assert not report.diverged
    assert report.contraction_exponent_estimate > 1.3
    assert report.residual < 1e-8
    assert len(nxt.transforms) == 1
    # the k = 0 action term of 1/2 {P, F}
    omega1 = unit_scale_normal.omega[0]
    assert nxt.P.coefficient(l=(1, 0)).real == pytest.approx(-2e-6 / omega1, rel=1e-3)


def test_three_steps_contract_within_frequency_bounds(unit_scale_normal):
    state = initial_state(unit_scale_normal, tiny_perturbation(1e-5), K0=2)
    assert state.eps <= 1e-4
    result = iterate(state, 3)
    assert result.aborted is None
    assert len(result.reports) == 3
    assert contraction_exponent(result.reports) >= 1.3
    assert all(r.bounds_ok for r in result.reports)
    assert all(r.omega_shift < r.eps_before for r in result.reports)
    assert not any(r.diverged for r in result.reports)


def test_contraction_exponent_skips_rounding_floor():
    reports = [step_report(0, 1e-4, 1e-8), step_report(1, 1e-8, 3e-16), step_report(2, 3e-16, 5e-16)]
    assert contraction_exponent(reports) == pytest.approx(2.0)
    assert contraction_exponent(reports, floor=0.0) < 1.3


def test_run_iteration_matches_iterate(unit_scale_normal):
    state = initial_state(unit_scale_normal, tiny_perturbation(1e-3), K0=2)
    reports = run_iteration(state, 1)
    assert len(reports) == 1
    assert reports[0].eps_after == pytest.approx(iterate(state, 1).reports[0].eps_after)


def test_divisor_conditions_vacuous_at_zero_gamma(desk_normal_form):
    normal, _ = desk_normal_form
    assert divisor_conditions(normal, 2, 0.0, 2.0, 2) == []


def test_contraction_exponent_fit():
    reports = [step_report(0, 1e-2, 1e-4), step_report(1, 1e-4, 1e-8)]
    assert contraction_exponent(reports) == pytest.approx(2.0)
    assert contraction_exponent([step_report(0, 1e-3, 1e-6)]) == pytest.approx(2.0)
    assert contraction_exponent([]) is None


def test_smallness_margin_fields(desk_normal_form):
    normal, P = desk_normal_form
    margin = smallness_margin(initial_state(normal, P))
    assert set(margin) == {"eps", "threshold", "ratio", "satisfied"}
    assert margin["satisfied"] == (margin["eps"] < margin["threshold"])


# ---------- Toeplitz-Lipschitz ----------

def test_toeplitz_vacuous_without_couplings(desk_normal_form):
    normal, _ = desk_normal_form
    report = toeplitz_check(normal, zero_perturbation(), 2, 20)
    assert report.vacuous
    assert report.lines_with_data == 0


def test_toeplitz_constant_diagonal(desk_normal_form):
    normal, _ = desk_normal_form
    P = zero_perturbation()
    for n in normal.sites:
        P = P + FourierTaylorSeries.monomial(0.3, b=2, alpha={n: 1}, beta={n: 1})
    report = toeplitz_check(normal, P, 2, 300, seed=1)
    assert not report.vacuous
    assert report.constant_lines == report.lines_with_data
    assert report.max_constant_deviation == 0.0
    assert report.constant_holds
    assert report.envelope_holds


def row_couplings(profile, kind="zzbar"):
    """profile(a1) on z_a zbar_{a+(1,0)} for rows |a2| <= 2, or on z_a z_{(-1,0)-a} along a2 = 0"""
    terms = {}
    for a1 in range(-210, 211):
        if kind == "zzbar":
            for a2 in range(-2, 3):
                a = Site(a1, a2)
                terms[MultiIndex.make(2, alpha={a: 1}, beta={a + (1, 0): 1})] = complex(profile(a1))
        elif a1 <= -1 - a1:
            terms[MultiIndex.make(2, alpha=[(Site(a1, 0), 1), (Site(-1 - a1, 0), 1)])] = complex(profile(a1))
    return FourierTaylorSeries(terms, b=2)


def test_toeplitz_inverse_t_coupling_within_envelope(desk_normal_form):
    normal, _ = desk_normal_form
    eps = 1e-3
    P = row_couplings(lambda a1: eps / (1 + abs(a1)))
    report = toeplitz_check(normal, P, 2, 200, seed=3, eps=eps, directions=[Site(1, 0)])
    assert report.lines_with_data > 0
    assert report.constant_lines == 0
    assert report.rate_constant > 0
    assert report.envelope_holds


def test_toeplitz_growing_coupling_fails(desk_normal_form):
    normal, _ = desk_normal_form
    eps = 1e-3
    P = row_couplings(lambda a1: eps * (1 + a1 ** 2))
    report = toeplitz_check(normal, P, 2, 200, seed=3, eps=eps, directions=[Site(1, 0)])
    assert report.lines_with_data > 0
    assert not report.envelope_holds
    assert report.rate_constant > 1e3 * report.envelope_bound


def test_toeplitz_reads_zz_couplings(desk_normal_form):
    normal, _ = desk_normal_form
    eps = 1e-3
    growing = toeplitz_check(normal, row_couplings(lambda a1: eps * (1 + a1 ** 2), "zz"), 2, 200, seed=5,
                             eps=eps, directions=[Site(1, 0)])
    assert growing.lines_with_data > 0
    assert not growing.envelope_holds
    decaying = toeplitz_check(normal, row_couplings(lambda a1: eps / (1 + a1 ** 2), "zz"), 2, 200, seed=5,
                              eps=eps, directions=[Site(1, 0)])
    assert decaying.envelope_holds


def test_toeplitz_weight_scales_rate(desk_normal_form):
    normal, _ = desk_normal_form
    P = row_couplings(lambda a1: 1e-3 / (1 + abs(a1)))
    flat = toeplitz_check(normal, P, 2, 100, seed=3, eps=1e-3, rho=0.0, directions=[Site(1, 0)])
    weighted = toeplitz_check(normal, P, 2, 100, seed=3, eps=1e-3, rho=0.5, directions=[Site(1, 0)])
    assert weighted.rate_constant == pytest.approx(flat.rate_constant * math.exp(0.5))


# ---------- flows and conjugacy ----------

def test_flow_rotates_a_mode():
    n = Site(0, 0)
    H = FourierTaylorSeries.monomial(1.0, alpha={n: 1}, beta={n: 1})
    z0 = 0.3 + 0.4j
    y = flow(H, np.array([z0, np.conj(z0)]), 1.0, [n])
    assert y[0] == pytest.approx(z0 * np.exp(1j), abs=1e-9)
    assert y[1] == pytest.approx(np.conj(z0 * np.exp(1j)), abs=1e-9)


def test_flow_moves_angles_against_actions():
    H = FourierTaylorSeries.monomial(2.0, b=1, l=(1,))
    y = flow(H, np.array([0.1, 0.5]), 0.5, [])
    assert y[0].real == pytest.approx(0.1 - 1.0)
    assert y[1].real == pytest.approx(0.5)


def test_time_one_map_conjugates_flows():
    n = Site(0, 0)
    a = 0.2
    H = FourierTaylorSeries.monomial(1.0, alpha={n: 1}, beta={n: 1})
    F = FourierTaylorSeries.monomial(a, alpha={n: 1}) + FourierTaylorSeries.monomial(a, beta={n: 1})
    H_plus = lie_transform(H, F, order=6)
    z0 = 0.5 - 0.1j
    defect = conjugacy_defect(H, F, H_plus, np.array([z0, np.conj(z0)]), 0.7, [n])
    assert defect < 1e-8


def test_conjugacy_with_trivial_generator():
    n = Site(1, 0)
    H = FourierTaylorSeries.monomial(1.0, alpha={n: 1}, beta={n: 1})
    zero = FourierTaylorSeries({}, b=0)
    assert conjugacy_defect(H, zero, H, np.array([0.1 + 0j, 0.1 + 0j]), 1.0, [n]) < 1e-12
