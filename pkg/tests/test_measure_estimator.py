import math

import numpy as np
import pytest

from tools.errors import FitError
from tools.lattice_resonance import LargeDivisor, TangentialSet
from tools.measure_estimator import (
    ExclusionSampler,
    MeasureEstimate,
    SetClass,
    binomial_ci95,
    bound_constant,
    det_polynomial_check,
    excluded_measure,
    fourth_derivative_report,
    gamma_scaling_fit,
    limit_divisor,
)

from conftest import DESK_EPS, DESK_MODE_BOUND, DESK_SITES, DESK_XI


@pytest.fixture(scope="module")
def sampler():
    return ExclusionSampler(TangentialSet(DESK_SITES), DESK_EPS, box=(1.0, 2.0), mode_bound=DESK_MODE_BOUND)


def synthetic(gammas, constant, exponent):
    return [MeasureEstimate(gamma=g, K=4, tau=1.0, fraction=constant * g ** exponent, ci95=0.0,
                            samples=1000, seed=0) for g in gammas]


# ---------- sampler ----------

def test_sampler_cells(sampler):
    assert len(sampler.l2_pairs) == 1
    assert sampler.cells == [(0, "A"), (0, "B")]
    pair = sampler.l2_pairs[0]
    assert pair.n not in sampler.sites and pair.m not in sampler.sites


def test_draw_stays_in_box(sampler):
    xis = sampler.draw(500, seed=3)
    assert xis.shape == (500, 2)
    assert xis.min() >= 1.0 and xis.max() <= 2.0
    assert np.array_equal(xis, sampler.draw(500, seed=3))


def test_build_specs_classes(sampler):
    specs = sampler.build_specs(0, 1, 1.0)
    classes = {s.cls for s in specs}
    assert SetClass.RK_BLOCK in classes
    assert SetClass.RK_BLOCK_BLOCK in classes
    assert all(s.shell == "(0,1]" for s in specs)
    assert all(0 < sum(map(abs, s.k)) <= 1 for s in specs)


def test_divisor_pass_agrees_with_critical_gammas(sampler):
    gamma = 50.0
    specs = sampler.build_specs(0, 1, 1.0, gamma=gamma)
    xis = sampler.draw(5, seed=11)
    crit = sampler.critical_gammas(xis, specs)
    for row, xi in enumerate(xis):
        flags = sampler.divisor_pass(xi, specs)
        clear = np.abs(crit[row] - gamma) > 1e-2 * gamma
        assert np.array_equal(flags[clear], crit[row][clear] < gamma)


# ---------- excluded measure ----------

def test_excluded_measure_is_monotone(sampler):
    fractions = [excluded_measure(sampler, g, 1, 1.0, 1000, seed=2).fraction for g in (0.0, 1e-3, 1e-1, 10.0, 1e4)]
    assert fractions[0] == 0.0
    assert fractions == sorted(fractions)
    assert all(0.0 <= f <= 1.0 for f in fractions)


def test_excluded_measure_reuses_critical_gammas():
    fresh = ExclusionSampler(TangentialSet(DESK_SITES), DESK_EPS, mode_bound=DESK_MODE_BOUND)
    first = fresh.excluded_measure(1e-2, 1, 1.0, 1000, seed=5)
    second = fresh.excluded_measure(1e2, 1, 1.0, 1000, seed=5)
    assert len(fresh._cache) == 1
    assert second.fraction >= first.fraction
    assert first.ci95 == pytest.approx(binomial_ci95(first.fraction, 1000))


def test_excluded_measure_shells(sampler):
    estimate = excluded_measure(sampler, 1.0, 2, 1.0, 1000, seed=1, shells=[1, 2])
    assert set(estimate.shell_fractions) == {"(0,1]", "(1,2]"}
    assert max(estimate.shell_fractions.values()) <= estimate.fraction


def test_excluded_measure_needs_samples(sampler):
    with pytest.raises(ValueError):
        excluded_measure(sampler, 0.1, 1, 1.0, 999, seed=0)


def test_binomial_ci95():
    assert binomial_ci95(0.5, 100) == pytest.approx(0.098)
    assert binomial_ci95(0.0, 1000) == 0.0
    assert binomial_ci95(0.3, 0) == 0.0


# ---------- line limits ----------

def test_limit_divisor_on_orthogonal_line(sampler):
    fm = sampler.frequency_map(DESK_XI)
    k = (1, -1)
    limit, rate = limit_divisor(k, (5, 0), (0, 5), (1, 1), fm, 3)
    assert limit == pytest.approx(fm.omega[0] - fm.omega[1])
    assert rate < 1e-6


def test_limit_divisor_grows_off_orthogonal(sampler):
    fm = sampler.frequency_map(DESK_XI)
    out = limit_divisor((1, 0), (1, 0), (0, 0), (1, 0), fm, 4)
    assert isinstance(out, LargeDivisor)
    assert out.inner == 1


# ---------- fits ----------

@pytest.mark.parametrize("exponent", [0.25, 1.0])
def test_gamma_scaling_fit_recovers_exponent(exponent):
    estimates = synthetic([1e-4, 1e-3, 1e-2, 1e-1, 1.0], 0.3, exponent)
    slope, constant = gamma_scaling_fit(estimates)
    assert slope == pytest.approx(exponent, rel=1e-9)
    assert constant == pytest.approx(0.3, rel=1e-9)


def test_gamma_fit_drops_zero_fractions():
    estimates = synthetic([1e-4, 1e-3, 1e-2, 1e-1], 0.3, 0.25)
    estimates.append(MeasureEstimate(gamma=1e-6, K=4, tau=1.0, fraction=0.0, ci95=0.0, samples=1000, seed=0))
    slope, _ = gamma_scaling_fit(estimates)
    assert slope == pytest.approx(0.25, rel=1e-9)


def test_gamma_fit_ignores_zero_gamma():
    estimates = synthetic([1e-4, 1e-3, 1e-2, 1e-1], 0.3, 0.5)
    estimates.insert(0, MeasureEstimate(gamma=0.0, K=4, tau=1.0, fraction=0.2, ci95=0.0, samples=1000, seed=0))
    slope, constant = gamma_scaling_fit(estimates)
    assert slope == pytest.approx(0.5, rel=1e-9)
    assert constant == pytest.approx(0.3, rel=1e-9)


def test_gamma_fit_warning_has_plain_message(caplog):
    with caplog.at_level("WARNING", logger="measure_estimator"):
        gamma_scaling_fit(synthetic([1e-3, 1e-2], 0.3, 1.0))
    assert [r.getMessage() for r in caplog.records if r.name == "measure_estimator"] == [
        "gamma fit on fewer than 4 values or under 3 decades"]


def test_gamma_fit_degenerate_inputs():
    with pytest.raises(FitError):
        gamma_scaling_fit(synthetic([1e-3, 1e-2], 0.0, 1.0))
    one = synthetic([1e-2], 0.5, 1.0) + synthetic([1e-3], 0.0, 1.0)
    with pytest.raises(FitError):
        gamma_scaling_fit(one)


def test_bound_constant():
    estimates = synthetic([1e-4, 1e-2, 1.0], 0.7, 0.25)
    assert bound_constant(estimates) == pytest.approx(0.7)
    assert bound_constant([]) == 0.0


# ---------- determinant structure ----------

def test_pair_determinant_is_polynomial(sampler):
    report = det_polynomial_check(sampler, (1, 0), (0, "A"), (0, "B"), nodes=5, checks=10, seed=4)
    assert report.passed
    assert report.max_rel_error <= 1e-8


def test_fourth_derivative_report_fields(sampler):
    k = (1, 1)
    report = fourth_derivative_report(sampler, k, (0, "A"), (0, "A"), DESK_XI)
    assert report.bound == pytest.approx(1.0)
    assert report.passed == (report.value >= report.bound)
    assert math.isfinite(report.value)
