"""Acceptance checks shared by the test suite and ``privalloc check-bounds``.

Each check runs a fixed Monte Carlo experiment with fixed seeds and returns a
:class:`CriterionResult`. Tolerances are stated next to each comparison.
"""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from typing import Callable

import numpy as np

from privalloc import alloc, budget, dp, learn, synth
from privalloc.core import (
    ATOL,
    Population,
    binomial_se,
    brute_force_opt_value,
    gini_baseline_gap,
    mean_and_se,
    optimal_value,
    random_allocation,
    regret,
    unit_profile,
)


@dataclasses.dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number} ({self.name}): {self.detail} [{self.seconds:.1f}s]"


def _rngs(*key) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(list(key)).spawn(4)]


def oracle_equivalence(populations: int = 1000, seed: int = 1) -> tuple[bool, str]:
    """Sorted ILA matches exhaustive search on small dyadic-valued populations.

    Welfare and ``delta_w`` are multiples of 2**-10 so every treatment effect
    and every subset sum is exact in floating point; equality is then exact.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(populations):
        P = int(rng.integers(1, 21))
        k = int(rng.integers(0, P + 1))
        w = rng.integers(0, 1025, size=P) / 1024.0
        # Frequent ties stress the tie-breaking.
        if rng.random() < 0.3:
            w = np.round(w * 4) / 4
        pop = Population.from_blocks(w, P, int(rng.integers(1, 1025)) / 1024.0)
        bad += optimal_value(pop, k) != brute_force_opt_value(pop, k)
    secs = time.perf_counter() - t0
    return bad == 0 and secs < 10.0, f"{bad} mismatches in {populations} populations, {secs:.2f}s (< 10s)"


def _ila_stochastic_runs(psi: float, trials: int, P=2000, k=500, beta=0.1):
    over, regs = 0, []
    params = alloc.ila_params_stochastic(P, psi, beta, k=k)
    unit = np.repeat(np.arange(20), P // 20)
    for t in range(trials):
        pop_rng, mech_rng, *_ = _rngs(2, int(psi * 1000), t)
        pop = Population(pop_rng.random(P), unit, 1.0)
        out = alloc.ila_private(pop, params, mech_rng)
        over += out.treated.over_budget
        regs.append(regret(out.treated, pop).normalized_regret)
    return over, regs


def budget_safety(trials: int = 1000) -> tuple[bool, str]:
    beta = 0.1
    t0 = time.perf_counter()
    ok, parts = True, []
    for psi in (0.1, 1.0, 10.0):
        over, _ = _ila_stochastic_runs(psi, trials)
        rate = over / trials
        limit = beta / 2 + 3 * binomial_se(beta / 2, trials)
        ok &= rate <= limit
        parts.append(f"psi={psi:g}: over-budget rate {rate:.3f} <= {limit:.3f}")
    secs = time.perf_counter() - t0
    ok &= secs < 120.0
    return bool(ok), "; ".join(parts) + f"; {secs:.1f}s (< 120s)"


# Trials for the jittered spike input; the threshold search there runs over
# 2e4 to 2e6 bins per trial, so the largest psi gets fewer trials.
SPIKE_TRIALS = {0.1: 1000, 1.0: 500, 10.0: 100}


def ila_regret_bound(trials: int = 1000, spike_trials: dict | None = None) -> tuple[bool, str]:
    beta, P, k = 0.1, 2000, 500
    spike_trials = spike_trials or SPIKE_TRIALS
    ok, parts = True, []
    for psi in (0.1, 1.0, 10.0):
        _, regs = _ila_stochastic_runs(psi, trials)
        m, se = mean_and_se(regs)
        b = alloc.ila_stochastic_bound(P, psi, beta)
        good = m <= b + 2 * se
        ok &= good
        parts.append(f"iid psi={psi:g}: {m:.2f}±{se:.2f} vs {b:.2f} {'ok' if good else 'VIOLATED'}")
    unit = np.repeat(np.arange(20), P // 20)
    spike = Population(np.full(P, 0.5), unit, 0.5)
    for psi, n in spike_trials.items():
        params = alloc.ila_params_adversarial(P, k, psi, beta)
        regs = []
        for t in range(n):
            _, mech_rng, *_ = _rngs(3, int(psi * 1000), t)
            out = alloc.ila_private(spike, params, mech_rng)
            regs.append(regret(out.treated, spike).normalized_regret)
        m, se = mean_and_se(regs)
        b = alloc.ila_adversarial_bound(P, psi, beta)
        good = m <= b + 2 * se
        ok &= good
        parts.append(f"spike psi={psi:g} ({n} trials): {m:.2f}±{se:.2f} vs {b:.2f} "
                     f"{'ok' if good else 'VIOLATED'}")
    return bool(ok), "; ".join(parts)


def ula_privacy_term(trials: int = 1000) -> tuple[bool, str]:
    M, N, beta = 20, 50, 0.05
    P = M * N
    ok, parts = True, []
    for k in (100, 500, 900):
        for psi in (0.1, 1.0):
            hits = 0
            term = alloc.ula_privacy_term(P, M, N, k, psi, beta)
            for t in range(trials):
                pop_rng, mech_rng, *_ = _rngs(4, k, int(psi * 10), t)
                rho = pop_rng.random(M)
                pop = synth.population_from_profile(rho, N, 0.5, pop_rng)
                out = alloc.ula_private_public_membership(pop, k, psi, mech_rng)
                excess = (regret(out.treated, pop).normalized_regret
                          - alloc.ula_baseline(unit_profile(pop), k, N))
                hits += excess <= term + ATOL
            rate = hits / trials
            need = (1 - beta) - 3 * binomial_se(1 - beta, trials)
            ok &= rate >= need
            parts.append(f"k={k} psi={psi:g}: {rate:.3f} >= {need:.3f}")
    return bool(ok), "; ".join(parts)


def noise_calibration(draws: int = 1_000_000, sums_trials: int = 40_000) -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    psi, sens = 0.5, 1.0
    x = dp.gaussian_mechanism(np.zeros(draws), sens, psi, rng)
    var = float(np.var(x))
    target = sens ** 2 / (2 * psi)
    ok = abs(var / target - 1) <= 0.02
    parts = [f"gaussian var {var:.4f} vs {target:.4f}"]
    for n in (1, 64, 1024):
        counts = np.zeros(n)
        sq = np.zeros(n)
        for _ in range(sums_trials):
            sq += dp.private_partial_sums(counts, 1.0, rng).values ** 2
        std = np.sqrt(sq / sums_trials)  # the noise has mean zero
        smax = dp.sigma_max(n, 1.0)
        good = bool(np.all(std <= 1.02 * smax) and abs(std[-1] / smax - 1) <= 0.02)
        ok &= good
        parts.append(f"n={n}: max-coordinate std {std.max():.4f} vs sigma_max {smax:.4f}")
    return bool(ok), "; ".join(parts)


def phase_transition(trials: int = 4000) -> tuple[bool, str]:
    P, k = 200, 40
    t0 = time.perf_counter()
    ok, parts = True, []
    for lam in (0.05, 0.2, 0.5):
        econ = budget.SamplingEconomy(lam, k, P)
        regs = []
        for t in range(trials):
            pop_rng, mech_rng, *_ = _rngs(6, int(lam * 100), t)
            pop = budget.hard_instance(P, k, pop_rng)
            regs.append(regret(budget.ila_with_sampling(pop, econ, mech_rng), pop).normalized_regret)
        m, se = mean_and_se(regs)
        lo = budget.ila_sampling_lower_bound(P, k, lam)
        hi = budget.ila_sampling_upper_bound(P, k, lam)
        good = lo - 2 * se <= m <= hi + 2 * se
        ok &= good
        parts.append(f"lambda={lam:g}: {lo:.2f} <= {m:.2f}±{se:.2f} <= {hi:.2f}")
    lam = 0.95
    econ = budget.SamplingEconomy(lam, k, P)
    a, r = [], []
    for t in range(trials):
        pop_rng, s_rng, r_rng, _ = _rngs(6, 95, t)
        pop = budget.hard_instance(P, k, pop_rng)
        a.append(regret(budget.ila_with_sampling(pop, econ, s_rng), pop).normalized_regret)
        r.append(regret(random_allocation(pop, k, r_rng), pop).normalized_regret)
    (ma, sa), (mr, sr) = mean_and_se(a), mean_and_se(r)
    se = math.hypot(sa, sr)
    good = abs(ma - mr) <= 2 * se
    ok &= good
    secs = time.perf_counter() - t0
    ok &= secs < 180.0
    parts.append(f"lambda=0.95: sampling {ma:.2f} vs random {mr:.2f} (2 s.e. = {2 * se:.2f})")
    return bool(ok), "; ".join(parts) + f"; {secs:.1f}s (< 180s)"


def profile_inequalities(vectors: int = 10_000) -> tuple[bool, str]:
    """Gini-baseline gap (K = 1) and the inequality-variance bound on random profiles."""
    rng = np.random.default_rng(7)
    bad_gap = bad_var = 0
    worst_gap = worst_var = -math.inf
    for _ in range(vectors):
        M = int(rng.integers(2, 51))
        rho = rng.random(M)
        # Mix in exact zeros, ones and ties, where both inequalities are tight.
        mask = rng.random(M)
        rho[mask < 0.15] = 0.0
        rho[mask > 0.9] = 1.0
        if rng.random() < 0.2:
            rho = np.round(rho * 4) / 4
        if rho.mean() == 0.0:
            rho[0] = 1.0
        lhs, rhs = gini_baseline_gap(rho, K=1)
        worst_gap = max(worst_gap, rhs - lhs)
        bad_gap += lhs < rhs - 1e-9
        vl, vr = budget.inequality_variance_bound(rho)
        worst_var = max(worst_var, vl - vr)
        bad_var += vl > vr + 1e-9
    return bad_gap == 0 and bad_var == 0, (
        f"gini-baseline violations {bad_gap}/{vectors} (worst slack {worst_gap:.2e}); "
        f"inequality-variance violations {bad_var}/{vectors} (worst slack {worst_var:.2e})")


# Fixed before any simulation was run.
REGIME_GS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
REGIME_LAMBDAS = (0.01, 0.03, 0.1, 0.3, 1.0, 2.0)


def regime_cells(trials: int = 200, P: int = 2000, M: int = 20, k: int = 200,
                 rho_bar: float = 0.4):
    """Mean regret of sampled ILA, stratified ULA and random allocation per cell."""
    N = P // M
    cells = []
    for gi, G in enumerate(REGIME_GS):
        for li, lam in enumerate(REGIME_LAMBDAS):
            res = {"ILA": [], "ULA": [], "RAND": []}
            econ = budget.SamplingEconomy(lam, k, P)
            for t in range(trials):
                seq = np.random.SeedSequence([8, gi, li, t])
                pop_seq, a, b, c = seq.spawn(4)
                spec = synth.PopulationSpec(P, M, N, 1.0, "gini_target",
                                            {"G": G, "rho_bar": rho_bar},
                                            seed=int(pop_seq.generate_state(1)[0]), binary=True)
                pop = synth.generate(spec).population
                res["ILA"].append(regret(budget.ila_with_sampling(pop, econ, np.random.default_rng(a)),
                                         pop).normalized_regret)
                ula = budget.ula_with_sampling_private(pop, k, lam, math.inf, np.random.default_rng(b))
                res["ULA"].append(regret(ula.treated, pop).normalized_regret)
                res["RAND"].append(regret(random_allocation(pop, k, np.random.default_rng(c)),
                                          pop).normalized_regret)
            stats = {s: mean_and_se(v) for s, v in res.items()}
            label = budget.classify_regime_sampling(G, lam, rho_bar, k, P)
            cells.append((G, lam, label, stats))
    return cells


def regime_maps(trials: int = 200) -> tuple[bool, str]:
    matched = counted = 0
    misses = []
    for G, lam, label, stats in regime_cells(trials):
        order = sorted(stats, key=lambda s: stats[s][0])
        best, second = order[0], order[1]
        gap = stats[second][0] - stats[best][0]
        if gap < 2 * math.hypot(stats[best][1], stats[second][1]):
            continue
        counted += 1
        if best == label.predicted_winner:
            matched += 1
        else:
            misses.append(f"(G={G:g}, lambda={lam:g}: predicted {label.predicted_winner}, got {best})")
    rate = matched / counted if counted else math.nan
    detail = f"{matched}/{counted} separated cells match ({rate:.0%}, need >= 80%)"
    if misses:
        detail += "; misses " + " ".join(misses)
    return bool(counted and rate >= 0.8), detail


LEARNING_KS = (250, 500, 1500, 3000)
CROSSOVER_KS = (250, 1500, 3000)


def learning_runs(trials: int = 1000, P: int = 5000, n: int = 500, psi: float = 1.0):
    """Regret and bounds of model-ranked ILA and cell-ranked ULA on a two-point family."""
    dist = learn.CellDistribution()
    spec = learn.LearnerSpec(lipschitz=4.0, diameter=4.0, dim=3, smoothness=6.0)
    out = {k: {"ila": [], "ula": [], "ila_bound": [], "ula_bound": []} for k in LEARNING_KS}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for t in range(trials):
            r = [np.random.default_rng(s) for s in np.random.SeedSequence([9, t]).spawn(5)]
            inst = learn.learning_instance(dist, P, r[0])
            train, pool = learn.split_sample(P, n, r[1])
            model = learn.private_learner_train(inst.X[train], spec, psi, r[2],
                                                y=inst.population.welfare[train])
            alpha = learn.risk_decompose(model, dist, 20_000, r[3]).total
            sizes = np.bincount(inst.cell[pool], minlength=dist.cells)
            fill_rng = r[4]
            for k in LEARNING_KS:
                a = learn.ila_predictive(inst.population, inst.X, model, k, math.inf, pool=pool)
                u = learn.ula_predictive(inst.population, inst.X, model, inst.cell, k,
                                         math.inf, math.inf, fill_rng, pool=pool)
                o = out[k]
                o["ila"].append(regret(a, inst.population).normalized_regret)
                o["ula"].append(regret(u, inst.population).normalized_regret)
                o["ila_bound"].append(learn.ila_predictive_bound(
                    k, learn.mean_lowest(inst.eta[pool], k), P, alpha, 0.05))
                o["ula_bound"].append(learn.ula_predictive_bound(
                    learn.cell_baseline(dist.cell_means, sizes, k), P, dist.cells,
                    dist.irreducible, alpha))
    return dist, out


def learning_pipeline(trials: int = 1000) -> tuple[bool, str]:
    P = 5000
    dist, out = learning_runs(trials, P)
    ok, parts = True, []
    for k in LEARNING_KS:
        o = out[k]
        for name in ("ila", "ula"):
            m, se = mean_and_se(o[name])
            b = float(np.mean(o[f"{name}_bound"]))
            good = m <= b + 2 * se
            ok &= good
            parts.append(f"k={k} {name.upper()} {m:.1f}±{se:.1f} <= {b:.1f}")
    G, rb = learn.profile_stats(dist.cell_means)
    signs = []
    for k in CROSSOVER_KS:
        pred = learn.classify_regime_learning(dist.sigma, k, P, G, rb).label
        (mi, si), (mu, su) = mean_and_se(out[k]["ila"]), mean_and_se(out[k]["ula"])
        tol = 2 * math.hypot(si, su)
        # The predicted winner must not be worse than the other by more than 2 s.e.
        good = (mu - mi <= tol) if pred == learn.ULA_DOMINANT else (mi - mu <= tol)
        ok &= good
        signs.append(f"k/P={k / P:g}: predicted {pred}, ILA {mi:.1f} vs ULA {mu:.1f} "
                     f"{'match' if good else 'MISMATCH'}")
    return bool(ok), "bounds: " + "; ".join(parts) + " | crossover: " + "; ".join(signs)


def determinism(golden_dir=None) -> tuple[bool, str]:
    """Runs every CLI command twice and compares bytes, and against golden files if given."""
    import tempfile
    from pathlib import Path

    from privalloc import cli

    config = cli.DEFAULT_PRESET
    parts, ok = [], True
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "preset.cfg"
        cfg.write_text(config)
        produced = {}
        for rep in (0, 1):
            d = tmp / f"run{rep}"
            d.mkdir()
            outputs = cli.run_all_commands(cfg, d)
            produced[rep] = outputs
        for name in produced[0]:
            same = produced[0][name] == produced[1][name]
            ok &= same
            if not same:
                parts.append(f"{name} differs between runs")
        if golden_dir is not None:
            for name, data in produced[0].items():
                g = Path(golden_dir) / name
                if not g.exists():
                    ok = False
                    parts.append(f"missing golden {name}")
                elif g.read_bytes() != data:
                    ok = False
                    parts.append(f"{name} differs from golden")
    parts.insert(0, f"{len(produced[0])} command outputs byte-identical across runs"
                 if ok else "determinism broken")
    return bool(ok), "; ".join(parts)


CRITERIA: dict[int, tuple[str, Callable[[], tuple[bool, str]]]] = {
    1: ("oracle equivalence", oracle_equivalence),
    2: ("budget safety", budget_safety),
    3: ("ILA regret bound", ila_regret_bound),
    4: ("ULA privacy term", ula_privacy_term),
    5: ("noise calibration", noise_calibration),
    6: ("phase transition", phase_transition),
    7: ("profile inequalities", profile_inequalities),
    8: ("regime maps", regime_maps),
    9: ("learning pipeline", learning_pipeline),
    10: ("determinism", determinism),
}


def run_criterion(number: int, **kwargs) -> CriterionResult:
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    passed, detail = fn(**kwargs)
    return CriterionResult(number, name, passed, detail, time.perf_counter() - t0)


def run_all(only=None, log=print) -> list[CriterionResult]:
    results = []
    for number in sorted(only or CRITERIA):
        r = run_criterion(number)
        if log:
            log(r.line())
        results.append(r)
    return results
