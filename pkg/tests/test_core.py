import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privalloc.core import (
    Allocation,
    Population,
    UnitProfile,
    allocation_value,
    brute_force_opt_value,
    gini,
    gini_baseline_gap,
    gini_sorted,
    mean_and_se,
    optimal_allocation,
    optimal_value,
    population_to_csv,
    random_allocation,
    read_population_csv,
    regret,
    treatment_effect,
    unit_profile,
    write_population_csv,
)

dyadic = st.integers(0, 1024).map(lambda v: v / 1024)


@st.composite
def populations(draw, max_p=12):
    P = draw(st.integers(1, max_p))
    w = draw(st.lists(dyadic, min_size=P, max_size=P))
    delta = draw(st.integers(1, 1024)) / 1024
    return Population.from_blocks(w, P, delta)


@pytest.mark.parametrize("w,delta,expected", [(0.3, 0.2, 0.2), (1.0, 0.2, 0.0), (0.9, 0.2, 0.1)])
def test_treatment_effect_examples(w, delta, expected):
    assert treatment_effect(w, delta) == pytest.approx(expected, abs=1e-12)


def test_treatment_effect_rejects_out_of_range():
    with pytest.raises(ValueError):
        treatment_effect(1.5, 0.2)
    with pytest.raises(ValueError):
        treatment_effect(0.5, 0.0)


def test_allocation_value_examples():
    pop = Population.from_blocks([0.0, 0.5, 0.95], 3, 0.1)
    assert allocation_value(Allocation([], 2), pop) == 0.0
    assert allocation_value(Allocation([0, 1], 2), pop) == pytest.approx(0.2, abs=1e-12)
    assert allocation_value(Allocation([0, 2], 2), pop) == pytest.approx(0.15, abs=1e-12)


def test_optimal_allocation_examples():
    pop = Population.from_blocks([0.9, 0.1, 0.5], 3, 0.2)
    assert list(optimal_allocation(pop, 2).treated) == [1, 2]
    assert len(optimal_allocation(pop, 0)) == 0
    assert list(optimal_allocation(pop, 3).treated) == [0, 1, 2]
    ties = Population.from_blocks([0.5, 0.5], 2, 0.2)
    assert list(optimal_allocation(ties, 1).treated) == [0]


def test_optimal_value_examples():
    pop = Population.from_blocks([0.0, 0.5, 0.95], 3, 0.1)
    assert optimal_value(pop, 2) == pytest.approx(0.2, abs=1e-12)
    assert optimal_value(pop, 0) == 0.0
    flat = Population.from_blocks(np.zeros(6), 6, 0.1)
    for k in range(7):
        assert optimal_value(flat, k) == pytest.approx(0.1 * k, abs=1e-12)


def test_regret_examples():
    pop = Population.from_blocks([0, 0, 1, 1], 4, 0.5)
    r = regret(Allocation([2, 3], 2), pop)
    assert (r.regret, r.normalized_regret) == (1.0, 2.0)
    assert regret(Allocation([0, 3], 2), pop).regret == 0.5
    assert regret(optimal_allocation(pop, 2), pop).regret == 0.0


def test_over_budget_regret_is_negative():
    pop = Population.from_blocks([0, 0, 0, 0], 4, 0.5)
    r = regret(Allocation([0, 1, 2], 2), pop)
    assert r.regret == pytest.approx(-0.5)
    assert Allocation([0, 1, 2], 2).over_budget


@given(populations(), st.data())
def test_sorted_allocation_is_optimal(pop, data):
    k = data.draw(st.integers(0, pop.P))
    assert optimal_value(pop, k) == brute_force_opt_value(pop, k)


@given(populations(max_p=8), st.data())
def test_no_allocation_beats_optimal(pop, data):
    k = data.draw(st.integers(0, pop.P))
    subset = data.draw(st.lists(st.integers(0, pop.P - 1), unique=True, max_size=k))
    assert allocation_value(Allocation(subset, k), pop) <= optimal_value(pop, k) + 1e-12


def test_brute_force_enumerates_above_bitmask_limit(rng):
    w = rng.integers(0, 9, size=22) / 8
    pop = Population.from_blocks(w, 22, 0.25)
    assert brute_force_opt_value(pop, 3) == optimal_value(pop, 3)


@pytest.mark.parametrize("welfare,delta,rho", [
    ([0.0, 0.0], 0.2, 0.0), ([0.9, 0.1], 0.2, 0.5), ([1.0, 1.0], 0.2, 1.0)])
def test_unit_profile_examples(welfare, delta, rho):
    assert unit_profile(Population.from_blocks(welfare, 2, delta)).rho[0] == rho


@pytest.mark.parametrize("rho,G", [([0.5, 0.5], 0.0), ([0.0, 1.0], 0.5), ([0.2, 0.4, 0.6], 2 / 9)])
def test_gini_examples(rho, G):
    assert gini(rho) == pytest.approx(G, abs=1e-12)


def test_gini_rejects_all_zero():
    with pytest.raises(ValueError):
        gini([0.0, 0.0])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30).filter(lambda r: sum(r) > 1e-3))
def test_gini_formulas_agree_and_are_bounded(rho):
    g = gini(rho)
    assert g == pytest.approx(gini_sorted(rho), abs=1e-9)
    assert -1e-12 <= g <= 1 - 1 / len(rho) + 1e-12


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30).filter(lambda r: sum(r) > 1e-3))
def test_gini_baseline_gap_at_one_unit(rho):
    lhs, rhs = gini_baseline_gap(rho, K=1)
    assert lhs >= rhs - 1e-9


def test_gini_baseline_gap_fails_for_larger_k():
    lhs, rhs = gini_baseline_gap([0.0, 0.5, 1.0], K=2)
    assert lhs < rhs


def test_rho_bar_k():
    prof = UnitProfile([0.9, 0.0, 0.5])
    assert prof.rho_bar_K(2) == 0.25
    assert prof.rho_bar_M == pytest.approx(1.4 / 3)
    with pytest.raises(ValueError):
        prof.rho_bar_K(0)


def test_random_allocation_mean_regret(rng):
    # Binary welfare with rho_bar = 0.3: a random treated person is high-welfare
    # with probability 0.3, so the mean normalized regret is k * 0.3.
    w = np.zeros(100)
    w[:30] = 1.0
    pop = Population.from_blocks(w, 10, 1.0)
    regs = [regret(random_allocation(pop, 10, rng), pop).normalized_regret
            for _ in range(20_000)]
    m, se = mean_and_se(regs)
    assert abs(m - 3.0) <= 4 * se


def test_random_allocation_all_high_has_zero_regret(rng):
    pop = Population.from_blocks(np.ones(20), 5, 0.5)
    assert regret(random_allocation(pop, 7, rng), pop).regret == 0.0
    assert len(random_allocation(pop, 20, rng)) == 20


def test_population_validation():
    with pytest.raises(ValueError):
        Population.from_blocks([0.5, 1.5], 2, 0.1)
    with pytest.raises(ValueError):
        Population(np.array([0.1, 0.2, 0.3]), np.array([0, 0, 1]), 0.1)
    with pytest.raises(ValueError):
        Population.from_blocks([0.1, 0.2, 0.3], 2, 0.1)
    with pytest.raises(ValueError):
        Allocation([1, 1], 2)


def test_population_csv_round_trip(tmp_path, rng):
    pop = Population.from_blocks(rng.random(12), 4, 0.3)
    path = tmp_path / "pop.csv"
    write_population_csv(pop, path)
    back = read_population_csv(path, 0.3)
    assert np.array_equal(back.welfare, pop.welfare)
    assert np.array_equal(back.unit_of, pop.unit_of)
    assert path.read_text() == population_to_csv(pop)


def test_mean_and_se_single_value():
    assert mean_and_se([2.0]) == (2.0, 0.0)
    m, se = mean_and_se([1.0, 3.0])
    assert (m, se) == (2.0, pytest.approx(1.0))
    assert math.isfinite(se)
