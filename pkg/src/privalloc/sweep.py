"""Monte Carlo sweeps over strategies and parameter grids.

Trial ``t`` at grid point ``g`` spawns children of ``SeedSequence([seed, g, t])``:
child 0 builds the population and child ``s + 1`` drives strategy ``s``. All
strategies therefore see the same population in a trial, and rows are written
in grid-then-trial-then-strategy order no matter how trials are scheduled.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import math
from typing import Callable

import numpy as np

from privalloc import alloc, budget, learn
from privalloc.config import ConfigError, ExperimentConfig
from privalloc.core import (
    Allocation,
    Population,
    binomial_se,
    gini,
    mean_and_se,
    random_allocation,
    regret,
    unit_profile,
)
from privalloc.synth import Generated, PopulationSpec, generate

CSV_MAGIC = "# privalloc-csv v1"
CSV_COLUMNS = ("grid", "trial", "strategy", "P", "M", "k", "lambda", "psi", "G",
               "rho_bar", "regret", "normalized_regret", "bound")
SUMMARY_COLUMNS = ("grid", "strategy", "kind", "beta", "trials", "mean_regret", "se",
                   "mean_bound", "violation_rate", "ok")

MEAN = "mean"
HIGH_PROB = "hp"


@dataclasses.dataclass(frozen=True)
class Outcome:
    allocation: Allocation
    bound: float | None = None
    kind: str | None = None
    beta: float | None = None
    noisy_welfare: np.ndarray | None = None
    meta: dict = dataclasses.field(default_factory=dict)


class Context:
    """Everything a strategy may look at in one trial."""

    def __init__(self, spec: PopulationSpec, point: dict, seq: np.random.SeedSequence):
        self.point = point
        self.k = int(point["k"])
        self.lam = float(point.get("lambda", 0.0))
        self.psi = float(point.get("psi", math.inf))
        self.sigma = point.get("sigma")
        self._seq = seq
        self._spec = _resolve_spec(spec, point, seq)
        self._generated: Generated | None = None
        self._learning: learn.LearningInstance | None = None
        self._dist: learn.CellDistribution | None = None

    @property
    def generated(self) -> Generated:
        if self._generated is None:
            self._generated = generate(self._spec)
        return self._generated

    @property
    def pop(self) -> Population:
        return self.generated.population

    @property
    def dist(self) -> learn.CellDistribution:
        if self._dist is None:
            M = self._spec.M
            q = tuple(np.round(np.linspace(0.0, 0.9, M), 12)) if M > 1 else (0.5,)
            if self.sigma is None:
                self._dist = learn.CellDistribution(q)
            else:
                s2 = float(self.sigma) ** 2
                if not 0 <= s2 <= 0.25:
                    raise ConfigError("sigma must lie in [0, 0.5]")
                lo = (1.0 - math.sqrt(1.0 - 4.0 * s2)) / 2.0
                self._dist = learn.CellDistribution(q, lo, 1.0 - lo)
        return self._dist

    @property
    def learning(self) -> learn.LearningInstance:
        if self._learning is None:
            rng = np.random.default_rng(self._seq.spawn(1)[0])
            self._learning = learn.learning_instance(self.dist, self._spec.P, rng)
        return self._learning

    def require_psi(self, name: str) -> float:
        if "psi" not in self.point:
            raise ConfigError(f"strategy {name} needs a psi axis in [sweep]")
        return self.psi


def _resolve_spec(spec: PopulationSpec, point: dict, seq) -> PopulationSpec:
    params = dict(spec.params)
    if "G" in point:
        params["G"] = float(point["G"])
    if spec.generator == "hard_instance" and math.isnan(params.get("k", math.nan)):
        params["k"] = float(point["k"])
    if any(isinstance(v, float) and math.isnan(v) for v in params.values()):
        raise ConfigError(f"population parameters {sorted(params)} need values "
                          "(set them in [population] or sweep them)")
    seed = int(seq.generate_state(1, dtype=np.uint64)[0])
    return dataclasses.replace(spec, params=params, seed=seed)


def _baseline(pop: Population, k: int) -> float:
    return alloc.ula_baseline(unit_profile(pop), k, pop.N)


def _rand(ctx, rng, p):
    return Outcome(random_allocation(ctx.pop, ctx.k, rng))


def _ila(ctx, rng, p):
    return Outcome(alloc.ila_nonprivate(ctx.pop, ctx.k), 0.0, MEAN)


def _ila_private(ctx, rng, p):
    psi = ctx.require_psi("ila_private")
    beta = float(p.get("beta", 0.05))
    mode = p.get("params", "stochastic")
    scale = float(p.get("margin_scale", 1.0))
    P = ctx.pop.P
    if mode == "stochastic":
        params = alloc.ila_params_stochastic(P, psi, beta, k=ctx.k, margin_scale=scale)
        bound = alloc.ila_stochastic_bound(P, psi, beta, float(p.get("gamma", 1.0)))
    elif mode == "adversarial":
        params = alloc.ila_params_adversarial(P, ctx.k, psi, beta, margin_scale=scale)
        bound = alloc.ila_adversarial_bound(P, psi, beta)
    else:
        raise ConfigError(f"ila_private params must be stochastic or adversarial, got {mode}")
    out = alloc.ila_private(ctx.pop, params, rng)
    return Outcome(out.treated, bound, MEAN, None, out.noisy_welfare,
                   {"threshold": out.threshold, "theta": params.theta, "s": params.s,
                    "n_bins": params.n_bins, "margin": params.margin})


def _ula(ctx, rng, p):
    out = alloc.ula_nonprivate(ctx.pop, ctx.k, rng)
    return Outcome(out.treated, _baseline(ctx.pop, ctx.k), MEAN, None,
                   out.noisy_profile[ctx.pop.unit_of])


def _ula_private(ctx, rng, p):
    psi = ctx.require_psi("ula_private")
    beta = float(p.get("beta", 0.05))
    pop = ctx.pop
    out = alloc.ula_private_public_membership(pop, ctx.k, psi, rng)
    bound = _baseline(pop, ctx.k) + alloc.ula_privacy_term(pop.P, pop.M, pop.N, ctx.k, psi, beta)
    return Outcome(out.treated, bound, HIGH_PROB, beta, out.noisy_profile[pop.unit_of])


def _ula_private_membership(ctx, rng, p):
    psi = ctx.require_psi("ula_private_membership")
    pop = ctx.pop
    C = alloc.ula_constant(pop.P, pop.M, ctx.k)
    psi1, psi2 = alloc.psi_split(pop.P, pop.N, C, psi)
    out = alloc.ula_private_private_membership(pop, ctx.k, psi1, psi2, rng,
                                               float(p.get("beta", 0.05)))
    bound = _baseline(pop, ctx.k) + alloc.ula_private_membership_term(pop.P, pop.N, C, psi)
    return Outcome(out.treated, bound, MEAN, None, out.noisy_welfare,
                   {"psi1": psi1, "psi2": psi2, "threshold": out.threshold})


def _ila_sampling(ctx, rng, p):
    pop = ctx.pop
    econ = budget.SamplingEconomy(ctx.lam, ctx.k, pop.P)
    a = budget.ila_with_sampling(pop, econ, rng)
    plan = budget.ila_sampling_plan(econ)
    return Outcome(a, budget.ila_sampling_upper_bound(pop.P, ctx.k, ctx.lam), MEAN,
                   meta={"n": plan.n, "k_prime": plan.k_prime, "mode": plan.mode})


def _ila_sampling_private(ctx, rng, p):
    psi = ctx.require_psi("ila_sampling_private")
    beta = float(p.get("beta", 0.1))
    pop = ctx.pop
    econ = budget.SamplingEconomy(ctx.lam, ctx.k, pop.P)
    a = budget.ila_with_sampling_private(pop, econ, psi, beta, rng)
    bound = (budget.ila_sampling_private_bound(pop.P, ctx.k, ctx.lam, psi, beta)
             if ctx.lam < econ.phase_boundary and ctx.lam > 0 else None)
    return Outcome(a, bound, HIGH_PROB if bound is not None else None, beta)


def _ula_sampling(ctx, rng, p):
    psi = float(ctx.psi)
    pop = ctx.pop
    n, _ = budget.ula_sampling_plan(pop.P, pop.M, ctx.k, ctx.lam, psi)
    out = budget.ula_with_sampling_private(pop, ctx.k, ctx.lam, psi, rng, n)
    bound = budget.ula_sampling_bound(unit_profile(pop), pop.N, ctx.k, ctx.lam, psi, n)
    return Outcome(out.treated, bound, MEAN, None, out.noisy_profile[pop.unit_of], {"n": n})


def _learned_setup(ctx, rng, p):
    inst = ctx.learning
    P = inst.population.P
    spec = learn.LearnerSpec(float(p.get("lipschitz", 4.0)), float(p.get("diameter", 4.0)),
                             3, float(p.get("smoothness", 6.0)), int(p.get("steps", 100)),
                             float(p.get("lr", 0.25)))
    train_psi = float(p.get("train_psi", ctx.psi))
    if "n" in p:
        n = int(p["n"])
    elif ctx.lam > 0:
        n = learn.ila_sample_size(P, ctx.lam, train_psi, spec)
    else:
        raise ConfigError("learned strategies need n = ... or a positive lambda")
    k_prime = ctx.k - budget.SamplingEconomy(ctx.lam, ctx.k, P).cost(n)
    if k_prime < 0:
        raise ConfigError(f"training on {n} labels exceeds the budget {ctx.k}")
    split_rng, train_rng, risk_rng, alloc_rng = rng.spawn(4)
    train, pool = learn.split_sample(P, n, split_rng)
    model = learn.private_learner_train(inst.X[train], spec, train_psi, train_rng,
                                        y=inst.population.welfare[train])
    risk = learn.risk_decompose(model, ctx.dist, int(p.get("n_mc", 20_000)), risk_rng)
    return inst, model, risk, pool, k_prime, alloc_rng


def _ila_learned(ctx, rng, p):
    inst, model, risk, pool, k_prime, arng = _learned_setup(ctx, rng, p)
    beta = float(p.get("beta", 0.05))
    a = learn.ila_predictive(inst.population, inst.X, model, k_prime,
                             float(p.get("alloc_psi", math.inf)), arng, pool, beta, k=ctx.k)
    bound = learn.ila_predictive_bound(k_prime, learn.mean_lowest(inst.eta[pool], k_prime),
                                       inst.population.P, risk.total, beta)
    return Outcome(a, bound, HIGH_PROB, beta, meta={"alpha": risk.total, "excess": risk.excess})


def _ula_learned(ctx, rng, p):
    inst, model, risk, pool, k_prime, arng = _learned_setup(ctx, rng, p)
    alloc_psi = float(p.get("alloc_psi", math.inf))
    psi1 = psi2 = alloc_psi
    sizes = np.bincount(inst.cell[pool], minlength=ctx.dist.cells)
    if math.isfinite(alloc_psi):
        C = alloc.ula_constant(inst.population.P, ctx.dist.cells, k_prime)
        psi1, psi2 = alloc.psi_split(inst.population.P, int(sizes.min()), C, alloc_psi)
    a = learn.ula_predictive(inst.population, inst.X, model, inst.cell, k_prime, psi1, psi2,
                             arng, pool)
    a = Allocation(a.treated, ctx.k)
    bound = learn.ula_predictive_bound(
        learn.cell_baseline(ctx.dist.cell_means, sizes, k_prime), inst.population.P,
        ctx.dist.cells, ctx.dist.irreducible, risk.total)
    return Outcome(a, bound, MEAN, meta={"alpha": risk.total, "excess": risk.excess})


STRATEGIES: dict[str, Callable] = {
    "rand": _rand,
    "ila": _ila,
    "ila_private": _ila_private,
    "ula": _ula,
    "ula_private": _ula_private,
    "ula_private_membership": _ula_private_membership,
    "ila_sampling": _ila_sampling,
    "ila_sampling_private": _ila_sampling_private,
    "ula_sampling": _ula_sampling,
    "ila_learned": _ila_learned,
    "ula_learned": _ula_learned,
}

LEARNED = ("ila_learned", "ula_learned")

BOUND_TEXT = {
    "rand": None,
    "ila": "regret = 0 (exact ranking)",
    "ila_private": "mean normalized regret <= (2 log^1.5 P + gamma + 2 log P sqrt(log(2/beta)))"
                   " / (pi sqrt(psi)), or the jittered variant",
    "ula": "mean normalized regret <= k rho_bar_K",
    "ula_private": "P(normalized regret > k rho_bar_K + privacy term) <= beta",
    "ula_private_membership": "mean normalized regret <= k rho_bar_K + private-membership term",
    "ila_sampling": "mean normalized regret <= sampling upper bound",
    "ila_sampling_private": "P(normalized regret > private sampling bound) <= beta",
    "ula_sampling": "mean normalized regret <= stratified-sampling bound",
    "ila_learned": "P(normalized regret > k' eta_bar + P sqrt(alpha) + tail) <= beta",
    "ula_learned": "mean normalized regret <= baseline + sqrt(P cells sigma^2)"
                   " + P sqrt(alpha - sigma^2)",
}


def validate(config: ExperimentConfig) -> None:
    for s in config.strategies:
        if s.name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s.name!r}; known: {sorted(STRATEGIES)}")


@dataclasses.dataclass(frozen=True)
class Row:
    grid: int
    trial: int
    strategy: str
    P: int
    M: int
    k: int
    lam: float
    psi: float
    G: float
    rho_bar: float
    regret: float
    normalized_regret: float
    bound: float | None
    kind: str | None
    beta: float | None

    def cells(self) -> list[str]:
        return [str(self.grid), str(self.trial), self.strategy, str(self.P), str(self.M),
                str(self.k), _fmt(self.lam), _fmt(self.psi), _fmt(self.G), _fmt(self.rho_bar),
                _fmt(self.regret), _fmt(self.normalized_regret),
                "" if self.bound is None else _fmt(self.bound)]


def _fmt(x: float) -> str:
    return repr(float(x))


def trial_context(config: ExperimentConfig, g: int, t: int):
    """The shared context of trial ``t`` at grid point ``g`` and one seed per strategy."""
    seq = np.random.SeedSequence([config.seed, g, t])
    streams = seq.spawn(len(config.strategies) + 1)
    return Context(config.population, config.grid[g], streams[0]), streams[1:]


def trial_outcomes(config: ExperimentConfig, g: int, t: int):
    """Yields ``(strategy, outcome, population)`` for every strategy of one trial."""
    ctx, streams = trial_context(config, g, t)
    for s, streamseq in zip(config.strategies, streams):
        out = STRATEGIES[s.name](ctx, np.random.default_rng(streamseq), s.params)
        yield s, out, (ctx.learning.population if s.name in LEARNED else ctx.pop), ctx


def run_trial(config: ExperimentConfig, g: int, t: int) -> list[Row]:
    """All strategy rows for trial ``t`` at grid point ``g``."""
    rows = []
    for s, out, pop, ctx in trial_outcomes(config, g, t):
        rep = regret(out.allocation, pop, ctx.k)
        prof = unit_profile(pop).rho
        rb = float(prof.mean())
        G = gini_or_zero(prof)
        rows.append(Row(g, t, s.label, pop.P, pop.M, ctx.k, ctx.lam, ctx.psi, G, rb,
                        rep.regret, rep.normalized_regret, out.bound, out.kind, out.beta))
    return rows


def gini_or_zero(rho) -> float:
    return gini(rho) if float(np.mean(rho)) > 0 else 0.0


def _trial_task(args):
    config, g, t = args
    return run_trial(config, g, t)


def run_rows(config: ExperimentConfig, parallel: int = 1) -> list[Row]:
    validate(config)
    tasks = [(config, g, t) for g in range(len(config.grid)) for t in range(config.trials)]
    if parallel > 1:
        with concurrent.futures.ProcessPoolExecutor(parallel) as pool:
            chunks = list(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * parallel))))
    else:
        chunks = [_trial_task(a) for a in tasks]
    return [r for chunk in chunks for r in chunk]


@dataclasses.dataclass(frozen=True)
class SummaryRow:
    grid: int
    strategy: str
    kind: str | None
    beta: float | None
    trials: int
    mean_regret: float
    se: float
    mean_bound: float | None
    violation_rate: float | None
    ok: bool | None

    def cells(self) -> list[str]:
        def f(x):
            return "" if x is None else _fmt(x)
        return [str(self.grid), self.strategy, self.kind or "", f(self.beta), str(self.trials),
                _fmt(self.mean_regret), _fmt(self.se), f(self.mean_bound),
                f(self.violation_rate), "" if self.ok is None else str(self.ok).lower()]


def summarize(rows: list[Row]) -> list[SummaryRow]:
    """Per grid point and strategy: mean regret, bound and pass/fail.

    Expectation bounds pass when the mean regret is within 2 standard errors
    of the mean bound; high-probability bounds pass when the violation rate is
    at most ``beta`` plus 3 binomial standard errors.
    """
    groups: dict[tuple[int, str], list[Row]] = {}
    for r in rows:
        groups.setdefault((r.grid, r.strategy), []).append(r)
    out = []
    for (g, s), rs in groups.items():
        m, se = mean_and_se([r.normalized_regret for r in rs])
        bounds = [r.bound for r in rs if r.bound is not None]
        kind, beta = rs[0].kind, rs[0].beta
        if len(bounds) != len(rs) or kind is None:
            out.append(SummaryRow(g, s, None, None, len(rs), m, se, None, None, None))
            continue
        mb = float(np.mean(bounds))
        viol = float(np.mean([r.normalized_regret > r.bound + 1e-9 for r in rs]))
        if kind == HIGH_PROB:
            ok = viol <= beta + 3.0 * binomial_se(beta, len(rs))
        else:
            ok = m <= mb + 2.0 * se + 1e-9
        out.append(SummaryRow(g, s, kind, beta, len(rs), m, se, mb, viol, ok))
    return out


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    buf.write(CSV_MAGIC + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def summary_to_text(summary: list[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summary:
        w.writerow(s.cells())
    return buf.getvalue()


def run_sweep(config: ExperimentConfig, parallel: int = 1):
    """Runs the sweep and returns ``(rows, summary)``."""
    rows = run_rows(config, parallel)
    return rows, summarize(rows)


def describe(config: ExperimentConfig) -> str:
    """Human-readable plan of a sweep."""
    validate(config)
    pop = config.population
    lines = [
        f"population: generator={pop.generator} P={pop.P} M={pop.M} N={pop.N} "
        f"delta_w={pop.delta_w!r} binary={str(pop.binary).lower()}",
        "population params: " + (", ".join(f"{k}={v!r}" for k, v in sorted(pop.params.items())
                                           if not (isinstance(v, float) and math.isnan(v)))
                                 or "none"),
        "strategies: " + ", ".join(s.label for s in config.strategies),
    ]
    sizes = []
    for axis in config.axes:
        vals = config.sweep[axis]
        sizes.append(len(vals))
        lines.append(f"axis {axis}: " + ", ".join(repr(v) for v in vals))
    n_grid = len(config.grid)
    lines.append(f"grid: {' x '.join(map(str, sizes))} = {n_grid} points")
    lines.append(f"trials: {config.trials}")
    runs = n_grid * config.trials * len(config.strategies)
    lines.append(f"{runs} runs")
    lines.append(f"rows: {runs}")
    lines.append(f"seed: {config.seed}")
    lines.append("bounds:")
    for s in config.strategies:
        text = BOUND_TEXT[s.name]
        lines.append(f"  {s.label}: " + (text if text else "none (empty bound column)"))
    return "\n".join(lines) + "\n"
