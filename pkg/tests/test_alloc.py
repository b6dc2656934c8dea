import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privalloc import alloc, synth
from privalloc.core import Population, mean_and_se, regret, unit_profile


def _two_units(rho, N, delta=0.5):
    return synth.population_from_profile(rho, N, delta, rng=0, binary=True)


def test_ila_nonprivate_examples():
    pop = Population.from_blocks([0.3, 0.1, 0.2], 3, 0.5)
    assert list(alloc.ila_nonprivate(pop, 1).treated) == [1]
    ties = Population.from_blocks([0.5, 0.5], 2, 0.5)
    assert list(alloc.ila_nonprivate(ties, 1).treated) == [0]


def test_stochastic_params_examples():
    assert alloc.ila_params_stochastic(1000, 1.0).theta == pytest.approx(3.1831e-4, rel=1e-4)
    assert alloc.ila_params_stochastic(10, 1.0).theta == pytest.approx(0.031831, rel=1e-4)
    assert alloc.ila_params_stochastic(1000, 4.0).theta == pytest.approx(
        alloc.ila_params_stochastic(1000, 1.0).theta / 2)


def test_adversarial_params_examples():
    p = alloc.ila_params_adversarial(1000, 100, 1.0)
    assert p.s == pytest.approx(3.1831e-3, rel=1e-4)
    assert p.theta == pytest.approx(3.68e-5, rel=2e-3)
    assert alloc.ila_params_adversarial(1000, 1000, 1.0).s == pytest.approx(1 / (1000 * math.pi))
    assert alloc.ila_params_adversarial(1000, 100, 100.0).s == pytest.approx(p.s / 10)


def test_params_validation():
    with pytest.raises(ValueError):
        alloc.IlaParams(psi=1.0, theta=0.0, s=0.0, k=1)
    with pytest.raises(ValueError):
        alloc.IlaParams(psi=1.0, theta=1e-9, s=0.0, k=1)
    with pytest.raises(ValueError):
        alloc.ila_params_adversarial(100, 0, 1.0)


def test_bin_count_tolerates_rounding():
    assert alloc.IlaParams(psi=1.0, theta=0.25, s=0.0, k=1).n_bins == 4
    assert alloc.IlaParams(psi=1.0, theta=1 / 3, s=0.0, k=1).n_bins == 3


def test_single_occupied_bin_treats_everyone():
    pop = Population.from_blocks(np.zeros(8), 8, 0.5)
    params = alloc.IlaParams(psi=math.inf, theta=0.5, s=0.0, k=8)
    out = alloc.ila_private(pop, params, 0)
    assert len(out.treated) == 8
    assert regret(out.treated, pop).regret == 0.0


@given(st.lists(st.integers(0, 64), min_size=2, max_size=40), st.data())
def test_noise_free_threshold_stops_below_the_kth_value(raw, data):
    # Welfare on a grid twice as coarse as the bins. The threshold is the left
    # edge of the bin holding the k-th smallest value, so everyone strictly
    # below that value is treated and nobody above it.
    w = np.array(raw) / 64
    k = data.draw(st.integers(1, len(w)))
    pop = Population.from_blocks(w, len(w), 0.5)
    params = alloc.IlaParams(psi=math.inf, theta=1 / 128, s=0.0, k=k)
    out = alloc.ila_private(pop, params, 0)
    kth = np.sort(w)[k - 1]
    expected = np.flatnonzero(w <= 0.0) if kth == 0.0 else np.flatnonzero(w < kth)
    assert set(out.treated.treated) == set(expected)


@given(st.integers(0, 2**32 - 1))
def test_treatment_bit_depends_on_threshold_and_own_score(seed):
    rng = np.random.default_rng(seed)
    pop = Population.from_blocks(rng.random(50), 50, 0.5)
    out = alloc.ila_private(pop, alloc.ila_params_adversarial(50, 10, 1.0), rng)
    mask = out.treated.mask(50)
    assert all(out.bit(i) == mask[i] for i in range(50))


def test_ila_private_is_seed_deterministic():
    pop = Population.from_blocks(np.linspace(0, 1, 100), 10, 0.5)
    params = alloc.ila_params_stochastic(100, 1.0, k=20)
    a, b = alloc.ila_private(pop, params, 5), alloc.ila_private(pop, params, 5)
    assert a.threshold == b.threshold
    assert np.array_equal(a.treated.treated, b.treated.treated)


def test_ila_private_budget_and_regret(rng):
    P, k, psi, beta = 2000, 500, 1.0, 0.1
    params = alloc.ila_params_stochastic(P, psi, beta, k=k)
    over, regs = 0, []
    for _ in range(200):
        pop = Population.from_blocks(rng.random(P), 100, 1.0)
        out = alloc.ila_private(pop, params, rng)
        over += out.treated.over_budget
        regs.append(regret(out.treated, pop).normalized_regret)
    assert over / 200 <= 0.05
    assert np.mean(regs) <= alloc.ila_stochastic_bound(P, psi, beta)


def test_ula_nonprivate_examples(rng):
    pop = _two_units([0.9, 0.0], 10)
    assert set(alloc.ula_nonprivate(pop, 10, rng).treated.treated) == set(range(10, 20))
    out = alloc.ula_nonprivate(pop, 15, rng)
    assert list(out.per_unit_counts) == [5, 10]
    assert set(range(10, 20)) <= set(out.treated.treated)


def test_ula_nonprivate_regret_within_baseline(rng):
    pop = synth.population_from_profile([0.0, 0.5, 1.0], 4, 0.01, rng)
    bound = alloc.ula_baseline(unit_profile(pop), 8, 4)
    assert bound == 2.0
    for _ in range(200):
        out = alloc.ula_nonprivate(pop, 8, rng)
        assert regret(out.treated, pop).normalized_regret <= bound + 1e-9


def test_ula_public_membership_infinite_psi_reproduces_nonprivate():
    pop = synth.population_from_profile([0.3, 0.1, 0.7, 0.5], 10, 0.5, 1)
    a = alloc.ula_nonprivate(pop, 17, 42)
    b = alloc.ula_private_public_membership(pop, 17, math.inf, 42)
    assert np.array_equal(a.treated.treated, b.treated.treated)


def test_ula_public_membership_rarely_misorders(rng):
    pop = _two_units([0.0, 1.0], 50)
    wrong = 0
    for _ in range(10_000):
        out = alloc.ula_private_public_membership(pop, 50, 1.0, rng)
        wrong += out.per_unit_counts[1] > 0
    assert wrong == 0


def test_ula_privacy_term_holds(rng):
    M, N, k, psi, beta = 20, 50, 500, 0.1, 0.05
    term = alloc.ula_privacy_term(M * N, M, N, k, psi, beta)
    hits = 0
    for _ in range(300):
        pop = synth.population_from_profile(rng.random(M), N, 0.5, rng)
        out = alloc.ula_private_public_membership(pop, k, psi, rng)
        excess = regret(out.treated, pop).normalized_regret - alloc.ula_baseline(
            unit_profile(pop), k, N)
        hits += excess <= term + 1e-9
    assert hits / 300 >= 0.95


def test_ula_constant_example():
    assert alloc.ula_constant(1000, 10, 100) == pytest.approx(447.21, abs=0.01)
    assert 2 * 100 * math.sqrt(2 * math.log(20)) == pytest.approx(489.55, abs=0.01)
    assert alloc.ula_constant(1000, 10, 500) >= alloc.ula_constant(1000, 10, 400)


def test_psi_split_examples():
    r = (3 * math.log(1e4) ** 1.5 / math.pi * 100 / (447.2 * math.sqrt(2))) ** (2 / 3)
    assert r == pytest.approx(2.6116325507364, rel=1e-12)
    psi1, psi2 = alloc.psi_split(10**4, 100, 447.2, 1.0)
    assert psi1 == pytest.approx(1 / (1 + r), rel=1e-12)
    assert psi1 + psi2 == pytest.approx(1.0)
    assert alloc.psi_split(10**4, 10**9, 447.2, 1.0)[1] > 0.999


def test_private_membership_without_noise_treats_units_below_the_marginal_one(rng):
    # Realized profile [0.8, 0.08, 0.48, 0.32]; the unit that would cross k = 50
    # sits in the threshold bin and is left out.
    pop = synth.population_from_profile([0.8, 0.1, 0.5, 0.3], 25, 0.5, 1, binary=True)
    out = alloc.ula_private_private_membership(pop, 50, math.inf, math.inf, rng)
    assert set(out.treated.treated) == set(pop.members(1))
    assert not out.treated.over_budget


def test_private_membership_treats_low_unit_first(rng):
    pop = _two_units([0.0, 1.0], 100)
    out = alloc.ula_private_private_membership(pop, 100, 50.0, 50.0, rng)
    assert set(out.treated.treated) <= set(range(100))


def test_private_membership_mean_regret_bound(rng):
    M, N, k, psi = 10, 100, 300, 1.0
    P = M * N
    C = alloc.ula_constant(P, M, k)
    psi1, psi2 = alloc.psi_split(P, N, C, psi)
    excess = []
    for _ in range(200):
        pop = synth.population_from_profile(rng.random(M), N, 0.5, rng, binary=True)
        out = alloc.ula_private_private_membership(pop, k, psi1, psi2, rng)
        excess.append(regret(out.treated, pop).normalized_regret
                      - alloc.ula_baseline(unit_profile(pop), k, N))
    m, se = mean_and_se(excess)
    assert m <= alloc.ula_private_membership_term(P, N, C, psi) + 2 * se


def test_underfill_bound_is_positive():
    params = alloc.ila_params_adversarial(1000, 100, 1.0)
    assert alloc.ila_underfill_bound(params, 1000, 0.01) > 0
