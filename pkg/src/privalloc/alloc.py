"""Individual- and unit-level allocation, with and without privacy.

ILA ranks individuals by welfare. Its private version releases a noisy CDF of
(optionally jittered) welfare over fixed-width bins and treats everyone below
a data-dependent threshold. Each individual's treatment bit depends only on
the public threshold and their own noisy score, which is what makes the
mechanism jointly private.

ULA ranks units by their high-welfare fraction ``rho`` and fills whole units
greedily, splitting the marginal unit uniformly at random.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from privalloc import dp
from privalloc.core import (
    Allocation,
    Population,
    UnitProfile,
    as_rng,
    optimal_allocation,
    spawn,
    unit_profile,
)

DEFAULT_MAX_BINS = 10**7

# Slack for ceil() on bin counts so (1 + 2s) / theta = 4.000000001 gives 4 bins.
_BIN_RTOL = 1e-9


@dataclasses.dataclass(frozen=True)
class IlaParams:
    """Inputs of the private threshold mechanism.

    Attributes:
      psi: zCDP parameter of the partial-sum release.
      theta: bin width.
      s: half-width of the uniform jitter added to each score.
      k: aid budget.
      beta: failure probability used in the threshold margin.
      margin_scale: multiplier on the margin, 1.0 reproduces the stated rule.
      max_bins: guard against mis-parameterized bin widths.
    """

    psi: float
    theta: float
    s: float
    k: int
    beta: float = 0.05
    margin_scale: float = 1.0
    max_bins: int = DEFAULT_MAX_BINS

    def __post_init__(self):
        if not self.psi > 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if not self.theta > 0 or not math.isfinite(self.theta):
            raise ValueError(f"theta must be positive and finite, got {self.theta}")
        if not self.s >= 0:
            raise ValueError(f"s must be non-negative, got {self.s}")
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.margin_scale >= 0:
            raise ValueError("margin_scale must be non-negative")
        if self.n_bins > self.max_bins:
            raise ValueError(
                f"{self.n_bins} bins exceeds the cap of {self.max_bins}; "
                "theta is too small for this range")

    @property
    def n_bins(self) -> int:
        ratio = (1.0 + 2.0 * self.s) / self.theta
        return max(1, math.ceil(ratio * (1.0 - _BIN_RTOL)))

    @property
    def margin(self) -> float:
        """Additive slack on the noisy partial sums before comparing to k."""
        nb = self.n_bins
        if math.isinf(self.psi):
            return 0.0
        return self.margin_scale * dp.sigma_max(nb, self.psi) * (
            math.sqrt(math.log(nb)) + math.sqrt(math.log(2.0 / self.beta)))

    def left_edge(self, j: int) -> float:
        """Left endpoint of bin ``j`` (1-based)."""
        return -self.s + (j - 1) * self.theta


@dataclasses.dataclass(frozen=True)
class IlaOutcome:
    threshold: float
    noisy_welfare: np.ndarray
    treated: Allocation
    bin_index: int | None = None

    def bit(self, i: int) -> bool:
        """Treatment bit of individual ``i`` from the public threshold and its own score."""
        return bool(self.noisy_welfare[i] <= self.threshold)


@dataclasses.dataclass(frozen=True)
class UlaOutcome:
    noisy_profile: np.ndarray
    per_unit_counts: np.ndarray
    treated: Allocation


def ila_nonprivate(pop: Population, k: int) -> Allocation:
    """Treats the ``k`` lowest-welfare individuals, ties by index."""
    return optimal_allocation(pop, k)


def ila_params_stochastic(P: int, psi: float, beta: float = 0.05, k: int = 0,
                          **kwargs) -> IlaParams:
    """Bin width ``1 / (P pi sqrt(psi))`` with no jitter, for i.i.d. welfare."""
    if P < 2:
        raise ValueError("P must be at least 2")
    theta = 1.0 / (P * math.pi * math.sqrt(psi))
    return IlaParams(psi=psi, theta=theta, s=0.0, k=k, beta=beta, **kwargs)


def ila_params_adversarial(P: int, k: int, psi: float, beta: float = 0.05,
                           **kwargs) -> IlaParams:
    """Jitter ``s = 1/(k pi sqrt(psi))`` and ``theta = 2 s log^1.5 P / (P pi sqrt(psi))``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if P < 2:
        raise ValueError("P must be at least 2")
    root = math.pi * math.sqrt(psi)
    s = 1.0 / (k * root)
    theta = 2.0 * s * math.log(P) ** 1.5 / (P * root)
    return IlaParams(psi=psi, theta=theta, s=s, k=k, beta=beta, **kwargs)


def ila_private_scores(welfare, params: IlaParams, rng=None) -> IlaOutcome:
    """Runs the private threshold mechanism on a raw score vector.

    Args:
      welfare: scores, normally in [0, 1].
      params: mechanism parameters; ``params.k`` is the budget.
      rng: seed or Generator.

    Returns:
      The public threshold, every individual's noisy score and the induced
      allocation ``{i : noisy_i <= threshold}``. If no bin clears the
      budget test, the threshold is the top of the range and all are treated.
    """
    w = np.asarray(welfare, dtype=np.float64)
    jitter_rng, sums_rng = spawn(rng, 2)
    s, theta, nb = params.s, params.theta, params.n_bins
    w_hat = w + jitter_rng.uniform(-s, s, size=w.size) if s > 0 else w.copy()
    # Bin 1 is [-s, -s + theta]; bin j > 1 is (left_j, left_j + theta].
    idx = np.clip(np.ceil((w_hat + s) / theta), 1, nb).astype(np.int64)
    counts = np.bincount(idx - 1, minlength=nb)
    sums = dp.private_partial_sums(counts, params.psi, sums_rng).values
    hits = np.flatnonzero(sums + params.margin >= params.k)
    if hits.size:
        j_star = int(hits[0]) + 1
        threshold = params.left_edge(j_star)
    else:
        j_star = None
        threshold = 1.0 + s
    w_hat.setflags(write=False)
    treated = Allocation(np.flatnonzero(w_hat <= threshold), params.k)
    return IlaOutcome(threshold, w_hat, treated, j_star)


def ila_private(pop: Population, params: IlaParams, rng=None) -> IlaOutcome:
    """Jointly private ILA on a population."""
    return ila_private_scores(pop.welfare, params, rng)


def _ula_greedy(pop: Population, scores: np.ndarray, k: int, rng) -> UlaOutcome:
    if not 0 <= k <= pop.P:
        raise ValueError(f"k must lie in [0, {pop.P}], got {k}")
    order = np.argsort(scores, kind="stable")
    counts = np.zeros(pop.M, dtype=np.int64)
    picked = []
    left = k
    rng = as_rng(rng)
    for j in order:
        if left == 0:
            break
        take = min(pop.N, left)
        members = pop.members(int(j))
        if take < members.size:
            members = rng.choice(members, size=take, replace=False)
        picked.append(members)
        counts[j] = take
        left -= take
    treated = np.concatenate(picked) if picked else np.empty(0, np.int64)
    return UlaOutcome(np.asarray(scores, dtype=np.float64), counts,
                      Allocation(treated, k))


def ula_nonprivate(pop: Population, k: int, rng=None) -> UlaOutcome:
    """Fills units in ascending ``rho`` order; the marginal unit is sampled uniformly."""
    _, fill_rng = spawn(rng, 2)
    return _ula_greedy(pop, unit_profile(pop).rho, k, fill_rng)


def ula_private_public_membership(pop: Population, k: int, psi: float,
                                  rng=None) -> UlaOutcome:
    """ULA on ``rho + N(0, 1/(2 N^2 psi))``, which is psi-zCDP.

    With ``psi = inf`` this reproduces :func:`ula_nonprivate` for the same seed.
    """
    noise_rng, fill_rng = spawn(rng, 2)
    rho = unit_profile(pop).rho
    noisy = dp.gaussian_mechanism(rho, 1.0 / pop.N, psi, noise_rng)
    return _ula_greedy(pop, np.atleast_1d(noisy), k, fill_rng)


def ula_private_private_membership(pop: Population, k: int, psi1: float,
                                   psi2: float, rng=None, beta: float = 0.05,
                                   margin_scale: float = 1.0) -> IlaOutcome:
    """Jointly (psi1 + psi2)-zCDP ULA when unit membership is itself private.

    Releases ``rho`` with sensitivity ``sqrt(2)/N`` at ``psi1``, gives every
    individual the noisy score of its unit (clipped to [0, 1]) and runs the
    private threshold mechanism at ``psi2`` with the oblivious-adversary
    parameters.
    """
    noise_rng, ila_rng = spawn(rng, 2)
    rho = unit_profile(pop).rho
    noisy = np.atleast_1d(
        dp.gaussian_mechanism(rho, math.sqrt(2.0) / pop.N, psi1, noise_rng))
    scores = np.clip(noisy[pop.unit_of], 0.0, 1.0)
    if math.isinf(psi2):
        params = IlaParams(psi=psi2, theta=1.0 / (pop.P * pop.N), s=0.0, k=k,
                           beta=beta, margin_scale=margin_scale)
    else:
        params = ila_params_adversarial(pop.P, max(k, 1), psi2, beta,
                                        margin_scale=margin_scale)
        params = dataclasses.replace(params, k=k)
    return ila_private_scores(scores, params, ila_rng)


def ula_constant(P: int, M: int, k: int) -> float:
    """The constant ``C``: the smallest of the three privacy-error scalings."""
    m = min(k, P - k)
    return min(2.0 * m * math.sqrt(2.0 * math.log(2 * M)),
               math.sqrt(2.0 * m * P),
               P * math.sqrt(2.0 / math.pi))


def psi_split(P: int, N: int, C: float, psi: float) -> tuple[float, float]:
    """Splits ``psi`` between the profile release and the threshold mechanism."""
    if min(P, N, C, psi) <= 0:
        raise ValueError("P, N, C and psi must be positive")
    r = (3.0 * math.log(P) ** 1.5 / math.pi * N / (C * math.sqrt(2.0))) ** (2.0 / 3.0)
    return psi / (1.0 + r), psi * r / (1.0 + r)


def ula_baseline(profile: UnitProfile, k: int, N: int) -> float:
    """``k * rho_bar_K`` with ``K = ceil(k / N)`` units touched."""
    if k <= 0:
        return 0.0
    K = min(math.ceil(k / N), profile.M)
    return k * profile.rho_bar_K(K)


def ila_stochastic_bound(P: int, psi: float, beta: float, gamma: float = 1.0) -> float:
    """Normalized-regret bound for i.i.d. welfare with density at most ``gamma``."""
    lp = math.log(P)
    return (2.0 * lp ** 1.5 + gamma + 2.0 * lp * math.sqrt(math.log(2.0 / beta))) / (
        math.pi * math.sqrt(psi))


def ila_adversarial_bound(P: int, psi: float, beta: float) -> float:
    """Normalized-regret bound for arbitrary welfare with jitter."""
    lp = math.log(P)
    return (3.0 * lp ** 1.5 + 2.0 * lp * math.sqrt(math.log(2.0 / beta))) / (
        math.pi * math.sqrt(psi))


def ila_underfill_bound(params: IlaParams, n: int, p: float) -> float:
    """High-probability cap on ``k - |treated|`` when bin hits are independent.

    ``p`` bounds the probability that any single score lands in any given bin.
    """
    nb = params.n_bins
    spread = math.sqrt(math.log(nb)) + math.sqrt(math.log(2.0 / params.beta))
    return (params.k * params.s + n * p
            + (2.0 * dp.sigma_max(nb, params.psi) + math.sqrt(n * p)) * spread)


def ula_privacy_term(P: int, M: int, N: int, k: int, psi: float,
                     beta: float) -> float:
    """High-probability excess over ``k rho_bar_K`` for public-membership ULA."""
    m = min(k, P - k)
    tail = math.sqrt(math.log(1.0 / beta))
    best = min(2.0 * m * math.sqrt(math.log(2 * M)) + tail,
               math.sqrt(m * P) + tail,
               P / math.sqrt(math.pi) + math.sqrt(M * math.log(1.0 / beta)))
    return best / (N * math.sqrt(psi))


def ula_private_membership_term(P: int, N: int, C: float, psi: float) -> float:
    """Expected excess over ``k rho_bar_K`` for private-membership ULA."""
    inner = (3.0 / math.pi) ** (2.0 / 3.0) * math.log(P) + (
        C * math.sqrt(2.0) / N) ** (2.0 / 3.0)
    return inner ** 1.5 / math.sqrt(psi)
