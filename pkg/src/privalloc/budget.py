"""Allocation when observing a welfare score eats into the aid budget.

Observing one score costs ``lam`` units of aid, so a plan that samples ``n``
scores can treat only ``k' = k - ceil(lam * n)`` people. Regret is still
measured against the best allocation of the full budget ``k``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from privalloc import alloc, dp
from privalloc.core import (
    Allocation,
    Population,
    UnitProfile,
    as_rng,
    gini,
    random_allocation,
    spawn,
    unit_profile,
)

# Guards floor/ceil against representation error, e.g. 0.1 * 500 = 50.000000000000007.
_ROUND_EPS = 1e-9

ULA_ILA_RAND = "ULA>ILA>RAND"
ULA_ILA_EQ_RAND = "ULA>ILA=RAND"
ILA_ULA_RAND = "ILA≥ULA≥RAND"


def _floor(x: float) -> int:
    return math.floor(x + _ROUND_EPS)


def _ceil(x: float) -> int:
    return math.ceil(x - _ROUND_EPS)


@dataclasses.dataclass(frozen=True)
class SamplingEconomy:
    """Budget ``k`` (in treatments), population size ``P`` and sampling cost ``lam``."""

    lam: float
    k: int
    P: int

    def __post_init__(self):
        if not self.lam >= 0 or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be finite and non-negative, got {self.lam}")
        if not 0 <= self.k <= self.P:
            raise ValueError(f"need 0 <= k <= P, got k={self.k}, P={self.P}")

    @property
    def phase_boundary(self) -> float:
        return (self.P - self.k) / self.P

    def cost(self, n: int) -> int:
        """Aid units spent on ``n`` observations."""
        return _ceil(self.lam * n)


@dataclasses.dataclass(frozen=True)
class SamplingPlan:
    n: int
    k_prime: int
    mode: str


@dataclasses.dataclass(frozen=True)
class RegimeLabel:
    label: str
    lambda_low: float
    lambda_high: float
    degenerate: bool = False

    @property
    def predicted_winner(self) -> str:
        return "ILA" if self.label == ILA_ULA_RAND else "ULA"


def ila_sampling_plan(econ: SamplingEconomy) -> SamplingPlan:
    """Sample ``Pk/(P lam + k)`` scores below the phase boundary, else allocate at random."""
    P, k, lam = econ.P, econ.k, econ.lam
    if k == 0:
        return SamplingPlan(0, 0, "random")
    if lam >= econ.phase_boundary:
        return SamplingPlan(0, k, "random")
    n = min(P, _floor(P * k / (P * lam + k)))
    return SamplingPlan(n, k - econ.cost(n), "sample")


def _sampled_ila(pop: Population, plan: SamplingPlan, k: int, kappa, rng) -> Allocation:
    sample_rng, fill_rng = spawn(rng, 2)
    seen = np.sort(sample_rng.choice(pop.P, size=plan.n, replace=False))
    kappa = min(plan.k_prime, plan.n) if kappa is None else min(kappa, plan.k_prime, plan.n)
    order = np.argsort(pop.welfare[seen], kind="stable")
    picked = seen[order[:kappa]]
    extra = plan.k_prime - kappa
    if extra > 0:
        pool = np.setdiff1d(np.arange(pop.P), picked)
        unseen = np.setdiff1d(pool, seen)
        # Unseen people first; fall back on seen-but-unpicked ones if they run out.
        fill = fill_rng.permutation(unseen)[:extra]
        if fill.size < extra:
            rest = np.setdiff1d(pool, fill)
            fill = np.concatenate([fill, fill_rng.permutation(rest)[:extra - fill.size]])
        picked = np.concatenate([picked, fill])
    return Allocation(picked, k)


def ila_with_sampling(pop: Population, econ: SamplingEconomy, rng=None,
                      kappa: int | None = None) -> Allocation:
    """Samples scores uniformly, treats the lowest revealed, fills the rest at random.

    Args:
      pop: population; ``econ.P`` must equal ``pop.P``.
      econ: sampling economy.
      rng: seed or Generator.
      kappa: how many of the lowest revealed scores to treat; defaults to
        ``min(k', n)``. Remaining budget goes to unseen individuals at random.
    """
    _check_econ(pop, econ)
    plan = ila_sampling_plan(econ)
    if plan.mode == "random":
        return random_allocation(pop, econ.k, rng)
    return _sampled_ila(pop, plan, econ.k, kappa, rng)


def ila_with_sampling_private(pop: Population, econ: SamplingEconomy, psi: float,
                              beta: float = 0.1, rng=None) -> Allocation:
    """Runs the private threshold mechanism on a uniform sample of scores.

    The sample of ``n`` scores is treated as the whole input to the private
    mechanism with budget ``k'`` and oblivious-adversary parameters.
    """
    _check_econ(pop, econ)
    plan = ila_sampling_plan(econ)
    if math.isinf(psi) or plan.mode == "random":
        return ila_with_sampling(pop, econ, rng)
    sample_rng, ila_rng = spawn(rng, 2)
    seen = np.sort(sample_rng.choice(pop.P, size=plan.n, replace=False))
    if plan.k_prime < 1 or plan.n < 2:
        return Allocation(np.empty(0, np.int64), econ.k)
    params = alloc.ila_params_adversarial(plan.n, plan.k_prime, psi, beta)
    out = alloc.ila_private_scores(pop.welfare[seen], params, ila_rng)
    return Allocation(seen[out.treated.treated], econ.k)


def _check_econ(pop: Population, econ: SamplingEconomy) -> None:
    if econ.P != pop.P:
        raise ValueError(f"economy has P={econ.P} but population has P={pop.P}")


def hard_instance(P: int, k: int, rng=None, N: int | None = None) -> Population:
    """Binary welfare with exactly ``k`` zeros placed uniformly at random, ``delta_w = 1``.

    Only the ``k`` zero-welfare individuals benefit from treatment, so a
    random allocation finds each at rate ``k / P``.
    """
    if not 0 <= k <= P:
        raise ValueError(f"need 0 <= k <= P, got k={k}, P={P}")
    w = np.ones(P)
    w[as_rng(rng).choice(P, size=k, replace=False)] = 0.0
    return Population.from_blocks(w, N or P, 1.0)


def ila_sampling_upper_bound(P: int, k: int, lam: float) -> float:
    """Expected worst-case normalized regret achievable by sampling."""
    if lam >= (P - k) / P:
        return k * (1.0 - k / P)
    d = P * lam + k
    return P * lam * k / d + math.sqrt(min(P * k, P * P * lam) / (16.0 * d))


def ila_sampling_lower_bound(P: int, k: int, lam: float) -> float:
    """Worst-case normalized regret every sampling strategy must incur."""
    if lam >= (P - k) / P:
        return k * (1.0 - k / P)
    return (P * lam - 0.25) * k / (P * lam + k)


def ila_sampling_private_bound(P: int, k: int, lam: float, psi: float,
                               beta: float) -> float:
    """High-probability normalized-regret bound for private sampled ILA."""
    d = P * lam + k
    lb = math.log(3.0 / beta)
    lp = math.log(P)
    return (P * (lam * k + math.sqrt(lam * k * lb)) / d
            + math.sqrt(min(P * k, P * P * lam) / (16.0 * d))
            + (3.0 * lp ** 1.5 + 2.0 * lp * math.sqrt(lb)) / (math.pi * math.sqrt(psi)))


def ula_sampling_plan(P: int, M: int, k: int, lam: float, psi: float) -> tuple[int, float]:
    """Stratified sample size balancing sampling cost against ranking error.

    Returns:
      ``(n, C)``; ``lam = 0`` means sampling is free and ``n = P``.
    """
    if min(P, M) < 1 or not 0 <= k <= P:
        raise ValueError("need P, M >= 1 and 0 <= k <= P")
    if lam < 0 or not psi > 0:
        raise ValueError("need lambda >= 0 and psi > 0")
    C = alloc.ula_constant(P, M, k)
    if lam == 0:
        return P, C
    noise = 0.0 if math.isinf(psi) else (C * M / (lam * math.sqrt(2.0 * psi))) ** 0.5
    stat = (C * C * M / (16.0 * lam * lam)) ** (1.0 / 3.0)
    return min(P, _ceil(max(noise, stat))), C


def stratified_counts(n: int, M: int) -> np.ndarray:
    """``n // M`` per unit with the remainder going to the lowest-indexed units."""
    counts = np.full(M, n // M, dtype=np.int64)
    counts[: n % M] += 1
    return counts


def ula_with_sampling_private(pop: Population, k: int, lam: float, psi: float,
                              rng=None, n: int | None = None) -> alloc.UlaOutcome:
    """ULA on a privatized stratified estimate of the unit profile.

    Args:
      pop: population.
      k: full budget.
      lam: cost of one observation in aid units.
      psi: zCDP parameter; ``inf`` disables the noise.
      rng: seed or Generator.
      n: sample size override; defaults to :func:`ula_sampling_plan`.
    """
    if n is None:
        n, _ = ula_sampling_plan(pop.P, pop.M, k, lam, psi)
    k_prime = k - _ceil(lam * n)
    if k_prime < 0:
        raise ValueError(f"sampling {n} scores at cost {lam} exceeds the budget {k}")
    per_unit = stratified_counts(n, pop.M)
    if per_unit.min() < 1:
        raise ValueError(f"n={n} leaves some of the {pop.M} units unsampled")
    if per_unit.max() > pop.N:
        raise ValueError(f"n={n} exceeds the unit size {pop.N}")
    sample_rng, noise_rng, fill_rng = spawn(rng, 3)
    high = pop.high_welfare()
    est = np.empty(pop.M)
    for j in range(pop.M):
        members = sample_rng.choice(pop.members(j), size=per_unit[j], replace=False)
        est[j] = high[members].mean()
    noisy = est
    if not math.isinf(psi):
        noisy = est + noise_rng.normal(0.0, 1.0 / np.sqrt(2.0 * psi * per_unit ** 2.0))
    out = alloc._ula_greedy(pop, noisy, k_prime, fill_rng)
    return alloc.UlaOutcome(out.noisy_profile, out.per_unit_counts,
                            Allocation(out.treated.treated, k))


def ula_sampling_bound(profile: UnitProfile, N: int, k: int, lam: float, psi: float,
                       n: int) -> float:
    """Expected normalized-regret bound for stratified-sample ULA at sample size ``n``."""
    M = profile.M
    P = M * N
    if k == 0:
        return 0.0
    K = min(math.ceil(k / N), M)
    rk = profile.rho_bar_K(K)
    m = min(k, P - k)
    rb = profile.rho_bar_M
    G = gini(profile.rho) if rb > 0 else 0.0
    var_rho = max(rb * (1.0 - rb) - 3.0 * rb * rb * G * G, 0.0)
    priv = 0.0 if math.isinf(psi) else M * M / (2.0 * psi * n * n)
    t1 = math.sqrt(priv + (P - n) / (4.0 * n * N)) * 2.0 * m * math.sqrt(2.0 * math.log(2 * M))
    root = math.sqrt(priv + (P - n) * var_rho / (n * N))
    t2 = root * math.sqrt(2.0 * m * P)
    t3 = root * P * math.sqrt(2.0 / math.pi)
    return rk * k + (1.0 - rk) * lam * n + min(t1, t2, t3)


def classify_regime_sampling(G: float, lam: float, rho_bar_M: float, k: int,
                             P: int) -> RegimeLabel:
    """Labels which of ULA, ILA and random allocation wins asymptotically.

    ``degenerate`` flags ``G = 0`` above the phase boundary, where units carry
    no information and ULA only ties with the other two.
    """
    if not 0.0 <= G <= 1.0 or not 0.0 <= rho_bar_M <= 1.0 or not 0 <= k <= P:
        raise ValueError("inputs out of range")
    a = rho_bar_M * (1.0 - G)
    if a >= 1.0:
        raise ValueError("rho_bar_M * (1 - G) must be below 1")
    lo = (k / P) * a / (1.0 - a)
    hi = 1.0 - k / P
    if lam >= hi:
        return RegimeLabel(ULA_ILA_EQ_RAND, lo, hi, degenerate=G == 0.0)
    if lam > lo:
        return RegimeLabel(ULA_ILA_RAND, lo, hi)
    return RegimeLabel(ILA_ULA_RAND, lo, hi)


def inequality_variance_bound(rho) -> tuple[float, float]:
    """Both sides of the bound on mean within-unit Bernoulli variance.

    Returns ``(mean rho(1 - rho), rho_bar(1 - rho_bar) - 3 rho_bar^2 G^2)``.
    """
    r = np.asarray(rho.rho if isinstance(rho, UnitProfile) else rho, dtype=np.float64)
    rb = float(r.mean())
    if rb <= 0.0:
        raise ValueError("mean profile must be positive")
    G = gini(r)
    return float(np.mean(r * (1.0 - r))), rb * (1.0 - rb) - 3.0 * rb * rb * G * G


def private_regime_inputs(pop: Population, psi: float, rng=None) -> tuple[float, float]:
    """Noisy ``(G, rho_bar_M)`` from a psi-zCDP release of the unit profile."""
    rho = unit_profile(pop).rho
    noisy = np.clip(np.atleast_1d(dp.gaussian_mechanism(rho, 1.0 / pop.N, psi, rng)), 0.0, 1.0)
    rb = float(noisy.mean())
    return (gini(noisy) if rb > 0 else 0.0), rb
