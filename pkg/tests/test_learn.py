import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privalloc import learn
from privalloc.core import Population, mean_and_se, optimal_value, regret

SPEC3 = learn.LearnerSpec(lipschitz=4.0, diameter=4.0, dim=3, smoothness=6.0)


def _quiet_train(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return learn.private_learner_train(*args, **kwargs)


def test_realizable_labels_are_learned(rng):
    # Linear targets in [0, 1] with no label noise; the squared loss should vanish.
    X = np.column_stack([rng.random(10_000), np.ones(10_000)])
    y = 0.2 + 0.6 * X[:, 0]
    spec = learn.LearnerSpec(lipschitz=4.0, diameter=4.0, dim=2, smoothness=6.0, steps=300, lr=0.5)
    model = _quiet_train(X, spec, 10.0, rng, y=y)
    X2 = np.column_stack([rng.random(5000), np.ones(5000)])
    assert np.mean((model.predict(X2) - (0.2 + 0.6 * X2[:, 0])) ** 2) <= 0.05


def test_single_example_is_uninformed(rng):
    dist = learn.CellDistribution((0.5,), 0.0, 1.0)
    X, y, _ = dist.sample(1, rng)
    model = _quiet_train(X, SPEC3, 1.0, rng, y=y)
    risk = learn.risk_decompose(model, dist, 50_000, rng)
    assert risk.measured_total >= 0.2


def test_feature_independent_labels_give_constant_predictor(rng):
    X = np.column_stack([rng.random(5000), np.ones(5000)])
    y = (rng.random(5000) < 0.3).astype(float)
    spec = learn.LearnerSpec(lipschitz=4.0, diameter=4.0, dim=2, smoothness=6.0, steps=400, lr=0.5)
    model = learn.private_learner_train(X, spec, math.inf, rng, y=y)
    pred = model.predict(X)
    assert pred.mean() == pytest.approx(y.mean(), abs=0.03)
    assert pred.std() < 0.05


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_parameters_stay_in_the_ball(seed, psi):
    rng = np.random.default_rng(seed)
    X, y, _ = learn.CellDistribution().sample(50, rng)
    spec = learn.LearnerSpec(lipschitz=4.0, diameter=2.0, dim=3, smoothness=6.0, steps=20)
    model = _quiet_train(X, spec, psi, rng, y=y)
    assert np.linalg.norm(model.theta) <= 1.0 + 1e-12


def test_labeled_examples_are_accepted(rng):
    data = [learn.LabeledExample(np.array([1.0]), 1), learn.LabeledExample(np.array([1.0]), 0)]
    model = learn.private_learner_train(data, learn.LearnerSpec(), math.inf, rng)
    assert model.to_list() == [pytest.approx(0.5, abs=0.05)]
    with pytest.raises(ValueError):
        learn.LabeledExample(np.array([1.0]), 2)


def test_smoothness_violation_warns(rng):
    X, y, _ = learn.CellDistribution().sample(20, rng)
    spec = learn.LearnerSpec(lipschitz=1.0, diameter=4.0, dim=3, smoothness=10.0, steps=5)
    with pytest.warns(RuntimeWarning):
        learn.private_learner_train(X, spec, 1.0, rng, y=y)


def test_risk_trend_with_sample_size():
    dist = learn.CellDistribution()
    small, large = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for n, out in ((20, small), (2000, large)):
            X, y, _ = dist.sample(n, rng)
            model = _quiet_train(X, SPEC3, 1.0, rng, y=y)
            out.append(learn.risk_decompose(model, dist, 20_000, rng).excess)
    assert np.mean(large) < np.mean(small)


def test_risk_decomposition_examples(rng):
    dist = learn.CellDistribution((0.5,), 0.2, 0.8)
    bayes = learn.LinearModel(dist.bayes_theta)
    r = learn.risk_decompose(bayes, dist, 100_000, rng)
    assert r.excess == pytest.approx(0.0, abs=1e-12)
    assert r.irreducible == pytest.approx(0.16, abs=0.002)
    const = learn.LinearModel(np.array([0.0, 0.0, 0.5]))
    r = learn.risk_decompose(const, dist, 100_000, rng)
    assert r.excess == pytest.approx(0.09, abs=1e-12)
    assert r.measured_total == pytest.approx(0.25, abs=4 * r.measured_se + 1e-3)
    det = learn.CellDistribution((0.5,), 0.0, 1.0)
    assert det.irreducible == 0.0


def test_default_family_statistics():
    dist = learn.CellDistribution()
    assert dist.cells == 10
    G, rb = learn.profile_stats(dist.cell_means)
    assert rb == pytest.approx(0.47)
    assert G == pytest.approx(0.2106, abs=1e-4)
    assert dist.irreducible == pytest.approx(0.16)


def test_perfect_model_ila_matches_ranking_on_eta(rng):
    dist = learn.CellDistribution()
    inst = learn.learning_instance(dist, 1000, rng)
    model = learn.LinearModel(dist.bayes_theta)
    a = learn.ila_predictive(inst.population, inst.X, model, 100, math.inf)
    assert np.all(inst.eta[a.treated] == 0.2)


def test_uninformed_model_stays_under_the_sanity_ceiling(rng):
    dist = learn.CellDistribution()
    const = learn.LinearModel(np.array([0.0, 0.0, 0.5]))
    regs = []
    for _ in range(200):
        inst = learn.learning_instance(dist, 1000, rng)
        a = learn.ila_predictive(inst.population, inst.X, const, 100, math.inf)
        regs.append(regret(a, inst.population).normalized_regret)
    assert np.mean(regs) <= 1000 * math.sqrt(0.25)


def test_private_ila_predictive_respects_pool(rng):
    dist = learn.CellDistribution()
    inst = learn.learning_instance(dist, 1000, rng)
    train, pool = learn.split_sample(1000, 200, rng)
    model = learn.LinearModel(dist.bayes_theta)
    a = learn.ila_predictive(inst.population, inst.X, model, 100, 1.0, rng, pool=pool)
    assert set(a.treated) <= set(pool)
    assert not set(a.treated) & set(train)


def test_ula_predictive_constant_model_on_equal_cells(rng):
    w = np.tile([0.0, 1.0], 50)
    pop = Population(w, np.repeat(np.arange(10), 10), 1.0)
    X = np.ones((100, 1))
    a = learn.ula_predictive(pop, X, learn.LinearModel(np.array([0.5])), pop.unit_of, 30,
                             math.inf, math.inf, rng)
    assert len(a) == 30
    assert np.array_equal(np.bincount(pop.unit_of[a.treated], minlength=10),
                          [10, 10, 10] + [0] * 7)


def test_ula_predictive_private_membership_runs(rng):
    dist = learn.CellDistribution()
    inst = learn.learning_instance(dist, 2000, rng)
    model = learn.LinearModel(dist.bayes_theta)
    a = learn.ula_predictive(inst.population, inst.X, model, inst.cell, 400, 1.0, 1.0, rng)
    assert len(a) <= 400 or a.over_budget
    with pytest.raises(ValueError):
        learn.ula_predictive(inst.population, inst.X, model, inst.cell, 10, 1.0, 1.0, rng,
                             min_unit=500)


def test_predictive_bounds_hold_in_expectation(rng):
    dist = learn.CellDistribution()
    P, k = 2000, 200
    ila, ula, ib, ub = [], [], [], []
    for _ in range(100):
        inst = learn.learning_instance(dist, P, rng)
        train, pool = learn.split_sample(P, 200, rng)
        model = _quiet_train(inst.X[train], SPEC3, 1.0, rng, y=inst.population.welfare[train])
        alpha = learn.risk_decompose(model, dist, 10_000, rng).total
        a = learn.ila_predictive(inst.population, inst.X, model, k, math.inf, pool=pool)
        u = learn.ula_predictive(inst.population, inst.X, model, inst.cell, k, math.inf,
                                 math.inf, rng, pool=pool)
        ila.append(regret(a, inst.population).normalized_regret)
        ula.append(regret(u, inst.population).normalized_regret)
        ib.append(learn.ila_predictive_bound(k, learn.mean_lowest(inst.eta[pool], k), P,
                                             alpha, 0.05))
        sizes = np.bincount(inst.cell[pool], minlength=10)
        ub.append(learn.ula_predictive_bound(learn.cell_baseline(dist.cell_means, sizes, k),
                                             P, 10, dist.irreducible, alpha))
    for vals, bounds in ((ila, ib), (ula, ub)):
        m, se = mean_and_se(vals)
        assert m <= np.mean(bounds) + 2 * se


def test_sample_size_regression_values():
    spec = learn.LearnerSpec(1.0, 1.0, 4)
    raw = learn.ila_sample_size(10**4, 0.1, 1.0, spec, capped=False)
    a = (1e5 * math.sqrt(10 * 2 ** -0.5 * 2)) ** (2 / 3)
    b = (1e5 * math.sqrt(10)) ** 0.8
    assert raw == pytest.approx(max(a, b)) == pytest.approx(25118.864315095816)
    assert learn.ila_sample_size(10**4, 0.1, 1.0, spec) == 10**4
    assert learn.ula_sample_size(10**4, 0.1, 1.0, spec, capped=False) == raw
    e = learn.ula_sample_size(10**4, 0.1, 1.0, spec, E_lower=0.01, capped=False)
    assert e == pytest.approx(29240.17738212864)
    floor = learn.ila_sample_size(10**4, 0.1, 1.0, spec, L_lower=0.25, capped=False)
    assert floor < raw
    assert learn.ila_sample_size(10**4, 1e9, 1.0, spec, capped=False) < 1
    assert learn.ula_sample_size(10**4, 0.1, 1.0, spec, E_lower=1e-12) == 10**4


def test_learning_classifier_examples():
    r = learn.classify_regime_learning(0.4, 100, 1000, 0.2, 0.5)
    assert r.product == pytest.approx(0.1)
    assert r.label == learn.ULA_DOMINANT
    assert learn.classify_regime_learning(0.4, 100, 1000, 1.0, 0.5).product == 0.0
    assert learn.classify_regime_learning(1e-9, 500, 1000, 0.0, 0.5).label == learn.ILA_DOMINANT
    zero = learn.classify_regime_learning(0.0, 100, 1000, 0.2, 0.5)
    assert zero.flagged and zero.label == learn.ILA_DOMINANT


def test_modeling_vs_sampling_examples():
    assert learn.modeling_vs_sampling(10**6, 10, 0.1, 0.01).ula == "sampling"
    P, lam = 10**6, 0.1
    M = math.ceil(math.sqrt(P / lam))
    assert learn.modeling_vs_sampling(P, M, lam, 0.0).ula in ("modeling", "either")
    E = 0.01
    assert learn.modeling_vs_sampling(P, P // 2, 2 * E ** 1.5, E).ula in ("modeling", "either")
    rec = learn.modeling_vs_sampling(1000, 10, 0.1, 0.0, k=100, L_star=0.0001)
    assert rec.ila == "modeling"


def test_helpers():
    assert learn.mean_lowest([0.5, 0.1, 0.3], 2) == pytest.approx(0.2)
    assert learn.mean_lowest([0.5], 0) == 0.0
    assert learn.cell_baseline([0.2, 0.8, 0.5], [10, 10, 10], 15) == pytest.approx(2 + 2.5)
    train, pool = learn.split_sample(10, 3, 0)
    assert len(train) == 3 and len(pool) == 7 and not set(train) & set(pool)


def test_optimal_value_reference(rng):
    dist = learn.CellDistribution()
    inst = learn.learning_instance(dist, 100, rng)
    assert optimal_value(inst.population, 0) == 0.0
