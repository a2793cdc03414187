import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agestruct.core import (
    AgeProfile,
    AlignmentError,
    DensityRate,
    EtaMap,
    Fertility,
    MonotoneMap,
    OrderingError,
    VitalRates,
    aging_functional,
    birth_functional,
    build_grid,
    classify_rates,
    cumulative,
    integrate,
    survival,
    tabulate,
    validate_hypotheses,
    weighted_total,
)
from agestruct.equilibrium import solve_equilibrium

import oracles

P = AgeProfile.make


# ------------------------------------------------------------------ grid


def test_grid_of_standard_runs_has_800_cells():
    g = build_grid(80, 0.1, 15, 35)
    assert g.n == 800
    assert g.ages[0] == pytest.approx(0.05)
    assert g.ages[-1] == pytest.approx(79.95)


def test_minimal_grid_has_two_cells():
    assert build_grid(1, 0.5, 0.5, 1).n == 2


def test_inverted_window_is_an_ordering_error():
    with pytest.raises(OrderingError):
        build_grid(80, 0.1, 40, 35)


@pytest.mark.parametrize("args", [(80, 0.3, 15, 35), (80, 0.1, 15.05, 35), (80.05, 0.1, 15, 35)])
def test_unaligned_bounds_are_rejected(args):
    with pytest.raises(AlignmentError):
        build_grid(*args)


def test_refined_grid_halves_the_cell():
    g = build_grid(80, 0.1, 15, 35).refined()
    assert g.da == pytest.approx(0.05) and g.n == 1600


# ------------------------------------------------------------ quadrature


def test_constant_integrates_to_length(grid):
    assert integrate(grid, np.ones(grid.n)) == pytest.approx(80, rel=1e-14)


def test_linear_integrand_is_exact():
    g = build_grid(1, 0.01, 0.5, 1)
    assert integrate(g, g.ages) == pytest.approx(0.5, abs=1e-14)


def test_decaying_exponential_converges_at_second_order():
    errs = []
    for da in (0.1, 0.05, 0.025):
        g = build_grid(80, da, 15, 35)
        errs.append(abs(integrate(g, np.exp(-g.ages)) - (1 - math.exp(-80))))
    assert errs[0] < 5e-4
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.01)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.01)


@pytest.mark.xfail(strict=True, reason="cell quadrature error da^2/24 = 4.2e-4 exceeds 1e-4 at da=0.1")
def test_decaying_exponential_within_1e4_at_standard_cell(grid):
    assert abs(integrate(grid, np.exp(-grid.ages)) - (1 - math.exp(-80))) <= 1e-4


def test_unaligned_limits_rejected(grid):
    with pytest.raises(AlignmentError):
        integrate(grid, np.ones(grid.n), 0.0, 10.05)


def test_reversed_limits_rejected(grid):
    with pytest.raises(OrderingError):
        integrate(grid, np.ones(grid.n), 20, 10)


def test_cumulative_matches_antiderivative(grid):
    c = cumulative(grid, np.exp(-0.1 * grid.ages))
    # first half cell contributes the largest error, about da^2 / 8
    assert np.max(np.abs(c - (1 - np.exp(-0.1 * grid.ages)) / 0.1)) < 1.5 * grid.da ** 2 / 8


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_integrate_is_linear(alpha, beta, seed):
    g = build_grid(80, 0.1, 15, 35)
    r = np.random.default_rng(seed)
    f, h = r.normal(size=g.n), r.normal(size=g.n)
    lhs = integrate(g, alpha * f + beta * h)
    rhs = alpha * integrate(g, f) + beta * integrate(g, h)
    assert lhs == pytest.approx(rhs, abs=1e-10)


# -------------------------------------------------------- weighted totals


def test_unit_weight_total(grid):
    assert weighted_total(grid, np.ones(grid.n), np.ones(grid.n)) == pytest.approx(80)


def test_senescent_indicator_total(grid):
    w = P("indicator", lo=35, hi=80)(grid.ages, grid)
    assert weighted_total(grid, w, np.ones(grid.n)) == pytest.approx(45)


def test_equilibrium_profile_reproduces_its_weighted_size(grid, baseline):
    eq = solve_equilibrium(baseline, grid)
    assert weighted_total(grid, np.ones(grid.n), eq.phi_hat) == pytest.approx(eq.q0_hat, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unit_weight_total_is_plain_integral(seed):
    g = build_grid(80, 0.1, 15, 35)
    p = np.random.default_rng(seed).uniform(0, 10, g.n)
    assert weighted_total(g, np.ones(g.n), p) == pytest.approx(integrate(g, p, 0, g.a1), rel=1e-14)


# --------------------------------------------------------------- survival


def _only_intrinsic(profile):
    return VitalRates(fertility=Fertility(P("zero")), mu2=profile)


def test_survival_over_empty_interval_is_one(grid, baseline):
    for a in (0.0, 15.0, 80.0):
        assert survival(baseline, grid, a, a, 3.0, 2.0) == 1.0


def test_constant_mortality_survival(grid):
    r = _only_intrinsic(P("constant", value=0.03))
    for a in (10.0, 40.0, 80.0):
        assert survival(r, grid, 0.0, a, 0, 0) == pytest.approx(math.exp(-0.03 * a), rel=1e-6)


def test_base_mortality_survival_to_max_age(grid):
    r = _only_intrinsic(P("exponential", c0=0.03, c1=0.01, k=0.04))
    assert survival(r, grid, 0.0, 80.0, 0, 0) == pytest.approx(oracles.SURVIVAL_0_80, abs=1e-4)


def test_survival_rejects_reversed_ages(grid, baseline):
    with pytest.raises(OrderingError):
        survival(baseline, grid, 30, 20, 0, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 800), st.integers(0, 800), st.integers(0, 800),
       st.floats(0, 50), st.floats(0, 50))
def test_survival_is_multiplicative(i, j, k, z0, z1):
    g = build_grid(80, 0.1, 15, 35)
    from conftest import baseline_rates
    r = baseline_rates()
    b, a, c = sorted(x * g.da for x in (i, j, k))
    lhs = survival(r, g, b, a, z0, z1) * survival(r, g, a, c, z0, z1)
    assert lhs == pytest.approx(survival(r, g, b, c, z0, z1), rel=1e-10)


# ------------------------------------------------------------- functionals


def test_birth_of_empty_population(grid, baseline):
    assert birth_functional(baseline, grid, np.zeros(grid.n)) == 0.0


def test_birth_of_unit_density_without_density_dependence(grid):
    r = VitalRates(fertility=Fertility(P("gamma", c=0.5, k=0.4)))
    assert birth_functional(r, grid, np.ones(grid.n)) == pytest.approx(oracles.FERTILITY_MASS, abs=1e-3)


def test_damped_fertility_halves_at_matching_total(grid):
    shape = P("gamma", c=0.5, k=0.4)
    free = VitalRates(fertility=Fertility(shape))
    damped = VitalRates(fertility=Fertility(shape, damping=0.00022))
    total = 1 / 0.00022
    p = np.full(grid.n, total / 80)
    assert birth_functional(damped, grid, p) == pytest.approx(0.5 * birth_functional(free, grid, p), rel=1e-12)


def test_aging_of_empty_population(grid, baseline):
    assert np.all(aging_functional(baseline, grid, np.zeros(grid.n)) == 0)


def test_aging_without_mortality(grid):
    r = VitalRates(fertility=Fertility(P("gamma", c=0.5, k=0.4)))
    assert np.all(aging_functional(r, grid, np.ones(grid.n)) == 0)


def test_aging_with_constant_crowding_rate(grid, rng):
    r = VitalRates(fertility=Fertility(P("zero")), mu0=DensityRate(base=P("constant", value=0.02)))
    p = rng.uniform(0, 3, grid.n)
    assert np.allclose(aging_functional(r, grid, p), -0.02 * p, rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 100.0))
def test_birth_nonnegative_and_aging_nonpositive(seed, scale):
    from conftest import baseline_rates, example_rates
    g = build_grid(80, 0.1, 15, 35)
    p = np.random.default_rng(seed).uniform(0, scale, g.n)
    for r in (baseline_rates(), example_rates()):
        assert birth_functional(r, g, p) >= 0
        assert np.all(aging_functional(r, g, p) <= 0)


# ---------------------------------------------------------------- mapping


def test_eta_maps_and_odd_extension():
    e = EtaMap("log1p", 2.0)
    assert e(0.0) == 0.0
    assert e.odd(-3.0) == -e(3.0)
    assert e.deriv(1.0) == pytest.approx(1.0)


def test_monotone_map_inverts_forward():
    m = MonotoneMap(lambda x: x ** 3 + x)
    for y in (0.0, 1e-6, 2.0, 1e6, -5.0):
        x = m.inverse(y)
        assert m(x) == pytest.approx(y, rel=1e-9, abs=1e-12)


def test_profile_round_trip_through_dict():
    prof = P("table", ages=[0, 35, 36, 80], values=[1.0, 1.0, 2.0, 2.0])
    assert AgeProfile.from_dict(prof.to_dict()) == prof


def test_unknown_profile_parameter_rejected():
    with pytest.raises(ValueError):
        P("gamma", c=1.0, slope=2.0)


def test_rates_survive_dict_round_trip(baseline):
    assert VitalRates.from_dict(baseline.to_dict()) == baseline


def test_tabulated_fertility_vanishes_outside_window(grid, baseline):
    t = tabulate(baseline, grid)
    assert np.all(t.beta_shape[: grid.index(15)] == 0)
    assert np.all(t.beta_shape[grid.index(35):] == 0)


# -------------------------------------------------------------- hypotheses


def test_baseline_passes_every_check(grid, baseline):
    rep = validate_hypotheses(baseline, grid, 1e6)
    assert rep.admissible and rep.crowding and rep.envelopes and rep.bounded
    assert rep.all_pass and not rep.witnesses


def test_adult_juvenile_crowding_is_inadmissible(grid):
    r = VitalRates(fertility=Fertility(P("gamma", c=0.5, k=0.4)),
                   mu1=DensityRate(slope=P("indicator", value=1e-6, lo=19.9, hi=20.1)))
    rep = validate_hypotheses(r, grid, 1e6)
    assert not rep.admissible
    assert any("a=19.95" in w or "a=20.05" in w for w in rep.witnesses["admissible"])


def test_density_free_rates_have_equal_envelopes(grid):
    r = VitalRates(fertility=Fertility(P("gamma", c=0.5, k=0.4)), mu2=P("constant", value=0.05))
    rep = validate_hypotheses(r, grid, 1e6)
    assert rep.envelopes
    assert not rep.crowding  # nothing ever limits growth
    assert rep.witnesses["crowding"]


def test_every_failed_flag_carries_a_witness(grid):
    r = VitalRates(fertility=Fertility(P("gamma", c=0.5, k=0.4)),
                   mu0=DensityRate(slope=P("constant", value=-1e-6)),
                   mu1=DensityRate(slope=P("constant", value=1e-6)))
    rep = validate_hypotheses(r, grid, 1e6)
    for name, ok in rep.flags().items():
        if not ok:
            assert rep.witnesses.get(name)


def test_rate_classes(grid, example, baseline):
    assert classify_rates(example, grid) == "separable-linear"
    assert classify_rates(baseline, grid) == "separable-linear-damped"
    age_only = VitalRates(fertility=Fertility(P("gamma", c=0.5, k=0.4), damping=1e-3),
                          mu2=P("constant", value=0.03))
    assert classify_rates(age_only, grid) == "age-only-mortality"


def test_growth_bound_constant_is_sup_fertility_plus_sup_mortality(grid, baseline):
    rep = validate_hypotheses(baseline, grid, 1e3)
    t = tabulate(baseline, grid)
    expected = t.beta(0).max() + t.mortality(1e3, 1e3).max()
    assert rep.omega_bound == pytest.approx(expected, rel=1e-12)
