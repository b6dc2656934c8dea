"""Allocation model: populations, treatment effects, value, regret and Gini.

Welfare lives in [0, 1] and treating individual ``i`` raises it by a fixed
``delta_w`` capped at 1. Allocations are index sets; regret is measured against
the best allocation of exactly ``k`` individuals.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import math
from pathlib import Path
from typing import Iterable

import numpy as np

# Absolute tolerance for every bound comparison in the package.
ATOL = 1e-9

# Exhaustive enumeration limits for the brute-force oracle.
_BITMASK_MAX_P = 20
_BRUTE_FORCE_MAX_P = 25


def as_rng(seed) -> np.random.Generator:
    """Returns a Generator for an int seed, SeedSequence, or Generator."""
    return np.random.default_rng(seed)


def spawn(seed, n: int) -> list[np.random.Generator]:
    """Splits a seed into ``n`` independent generators."""
    return as_rng(seed).spawn(n)


@dataclasses.dataclass(frozen=True)
class Population:
    """Welfare scores of ``P = M * N`` individuals split into ``M`` units.

    Attributes:
      welfare: float64 array of length P, entries in [0, 1].
      unit_of: int array of length P mapping individual to unit index.
      delta_w: homogeneous treatment increment in (0, 1].
    """

    welfare: np.ndarray
    unit_of: np.ndarray
    delta_w: float

    def __post_init__(self):
        w = np.asarray(self.welfare, dtype=np.float64)
        u = np.asarray(self.unit_of, dtype=np.int64)
        if w.ndim != 1 or u.shape != w.shape:
            raise ValueError("welfare and unit_of must be 1-d arrays of equal length")
        if w.size == 0:
            raise ValueError("population is empty")
        if np.any(~np.isfinite(w)) or w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("welfare entries must lie in [0, 1]")
        if not 0.0 < self.delta_w <= 1.0:
            raise ValueError(f"delta_w must lie in (0, 1], got {self.delta_w}")
        if u.min() < 0:
            raise ValueError("unit indices must be non-negative")
        sizes = np.bincount(u)
        if np.any(sizes != sizes[0]):
            raise ValueError("every unit must have the same number of members")
        w.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "welfare", w)
        object.__setattr__(self, "unit_of", u)
        object.__setattr__(self, "delta_w", float(self.delta_w))

    @classmethod
    def from_blocks(cls, welfare, N: int, delta_w: float) -> "Population":
        """Builds a population whose units are contiguous blocks of size N."""
        welfare = np.asarray(welfare, dtype=np.float64)
        if N < 1 or welfare.size % N:
            raise ValueError(f"population size {welfare.size} not divisible by N={N}")
        return cls(welfare, np.arange(welfare.size) // N, delta_w)

    @property
    def P(self) -> int:
        return int(self.welfare.size)

    @property
    def M(self) -> int:
        return int(self.unit_of.max()) + 1

    @property
    def N(self) -> int:
        return self.P // self.M

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.unit_of == j)

    def high_welfare(self) -> np.ndarray:
        """Boolean mask of individuals with welfare above ``1 - delta_w``."""
        return self.welfare > 1.0 - self.delta_w


@dataclasses.dataclass(frozen=True)
class Allocation:
    """A set of treated individuals together with the budget it was built for.

    Randomized private strategies may overshoot ``k`` with small probability,
    so the constructor does not enforce ``len(treated) <= k``; use
    ``over_budget`` to check.
    """

    treated: np.ndarray
    k: int

    def __post_init__(self):
        t = np.unique(np.asarray(self.treated, dtype=np.int64))
        if t.size != np.asarray(self.treated).size:
            raise ValueError("treated indices must be distinct")
        t.setflags(write=False)
        object.__setattr__(self, "treated", t)
        object.__setattr__(self, "k", int(self.k))

    def __len__(self) -> int:
        return int(self.treated.size)

    @property
    def over_budget(self) -> bool:
        return len(self) > self.k

    def mask(self, P: int) -> np.ndarray:
        m = np.zeros(P, dtype=bool)
        m[self.treated] = True
        return m

    def check(self, pop: Population) -> None:
        if self.treated.size and (self.treated[0] < 0 or self.treated[-1] >= pop.P):
            raise IndexError(f"treated index out of range [0, {pop.P})")


@dataclasses.dataclass(frozen=True)
class UnitProfile:
    """Per-unit fraction of high-welfare individuals."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.ndim != 1 or rho.size == 0:
            raise ValueError("rho must be a non-empty 1-d array")
        if rho.min() < 0.0 or rho.max() > 1.0:
            raise ValueError("rho entries must lie in [0, 1]")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def M(self) -> int:
        return int(self.rho.size)

    @property
    def rho_bar_M(self) -> float:
        return float(self.rho.mean())

    def rho_bar_K(self, K: int) -> float:
        """Mean of the ``K`` smallest entries."""
        if not 1 <= K <= self.M:
            raise ValueError(f"K must lie in [1, {self.M}], got {K}")
        return float(np.sort(self.rho)[:K].mean())


@dataclasses.dataclass(frozen=True)
class RegretReport:
    value: float
    opt_value: float
    regret: float
    normalized_regret: float
    n_treated: int
    bound: float | None = None


def treatment_effect(w, delta_w: float):
    """Welfare gain ``min(1, w + delta_w) - w``; vectorized over ``w``."""
    arr = np.asarray(w, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("welfare must lie in [0, 1]")
    if not 0.0 < delta_w <= 1.0:
        raise ValueError(f"delta_w must lie in (0, 1], got {delta_w}")
    tau = np.minimum(1.0, arr + delta_w) - arr
    return float(tau) if tau.ndim == 0 else tau


def allocation_value(alloc: Allocation, pop: Population) -> float:
    alloc.check(pop)
    if len(alloc) == 0:
        return 0.0
    return math.fsum(treatment_effect(pop.welfare[alloc.treated], pop.delta_w))


def optimal_allocation(pop: Population, k: int) -> Allocation:
    """Treats the ``k`` lowest-welfare individuals, ties to the lower index."""
    if not 0 <= k <= pop.P:
        raise ValueError(f"k must lie in [0, {pop.P}], got {k}")
    order = np.argsort(pop.welfare, kind="stable")
    return Allocation(order[:k], k)


def optimal_value(pop: Population, k: int) -> float:
    return allocation_value(optimal_allocation(pop, k), pop)


def brute_force_opt_value(pop: Population, k: int) -> float:
    """Best value over all k-subsets, by exhaustive enumeration.

    Independent of the sorting argument: for P <= 20 every subset sum is
    formed by doubling, otherwise k-subsets are enumerated directly.
    """
    P = pop.P
    if P > _BRUTE_FORCE_MAX_P:
        raise ValueError(f"brute force limited to P <= {_BRUTE_FORCE_MAX_P}, got {P}")
    if not 0 <= k <= P:
        raise ValueError(f"k must lie in [0, {P}], got {k}")
    tau = treatment_effect(pop.welfare, pop.delta_w)
    if P <= _BITMASK_MAX_P:
        sums = np.zeros(1)
        sizes = np.zeros(1, dtype=np.int8)
        for t in tau:
            sums = np.concatenate([sums, sums + t])
            sizes = np.concatenate([sizes, sizes + 1])
        cand = np.flatnonzero(sizes == k)
        best = int(cand[np.argmax(sums[cand])])
        # Bit j of the winning index says whether element j is in the subset.
        members = [j for j in range(P) if best >> j & 1]
        return math.fsum(tau[members])
    best = -math.inf
    for combo in itertools.combinations(range(P), k):
        best = max(best, math.fsum(tau[list(combo)]))
    return float(best)


def regret(alloc: Allocation, pop: Population, k: int | None = None,
           bound: float | None = None) -> RegretReport:
    """Regret of ``alloc`` against the best k-allocation.

    ``k`` defaults to the allocation's own budget. Regret is reported raw, so
    an over-budget allocation can show negative regret.
    """
    k = alloc.k if k is None else k
    value = allocation_value(alloc, pop)
    opt = optimal_value(pop, k)
    r = opt - value
    return RegretReport(value=value, opt_value=opt, regret=r,
                        normalized_regret=r / pop.delta_w,
                        n_treated=len(alloc), bound=bound)


def unit_profile(pop: Population) -> UnitProfile:
    high = pop.high_welfare().astype(np.float64)
    counts = np.bincount(pop.unit_of, weights=high, minlength=pop.M)
    return UnitProfile(counts / pop.N)


def _rho_array(rho) -> np.ndarray:
    if isinstance(rho, UnitProfile):
        return rho.rho
    return UnitProfile(rho).rho


def gini(rho) -> float:
    """Gini coefficient of a unit profile, by the ordered-pair double sum."""
    r = _rho_array(rho)
    M = r.size
    mean = r.mean()
    if mean <= 0.0:
        raise ValueError("Gini coefficient undefined for an all-zero profile")
    total = np.abs(r[:, None] - r[None, :]).sum()
    return float(total / (2.0 * M * M * mean))


def gini_sorted(rho) -> float:
    """Gini coefficient via the weighted sum over the sorted profile."""
    r = np.sort(_rho_array(rho))
    M = r.size
    mean = r.mean()
    if mean <= 0.0:
        raise ValueError("Gini coefficient undefined for an all-zero profile")
    weights = 2.0 * np.arange(1, M + 1) - M - 1
    return float(weights @ r / (M * M * mean))


def gini_baseline_gap(rho, K: int = 1) -> tuple[float, float]:
    """Returns ``(rho_bar_M - rho_bar_K, G * M * rho_bar_M / (M - 1))``.

    The first entry dominates the second for ``K = 1``. For larger ``K`` the
    inequality can fail, e.g. ``rho = [0, 0.5, 1]`` with ``K = 2``.
    """
    prof = rho if isinstance(rho, UnitProfile) else UnitProfile(rho)
    if prof.M < 2:
        raise ValueError("need at least two units")
    g = gini(prof)
    lhs = prof.rho_bar_M - prof.rho_bar_K(K)
    rhs = g * prof.M * prof.rho_bar_M / (prof.M - 1)
    return lhs, rhs


def random_allocation(pop: Population, k: int, rng=None) -> Allocation:
    """Treats ``k`` individuals drawn uniformly without replacement."""
    if not 0 <= k <= pop.P:
        raise ValueError(f"k must lie in [0, {pop.P}], got {k}")
    return Allocation(as_rng(rng).choice(pop.P, size=k, replace=False), k)


def mean_and_se(values: Iterable[float]) -> tuple[float, float]:
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                   dtype=np.float64)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


POPULATION_HEADER = ("individual", "welfare", "unit")


def population_to_csv(pop: Population) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(POPULATION_HEADER)
    for i, (w, u) in enumerate(zip(pop.welfare, pop.unit_of)):
        writer.writerow((i, repr(float(w)), int(u)))
    return buf.getvalue()


def write_population_csv(pop: Population, path) -> None:
    Path(path).write_text(population_to_csv(pop))


def read_population_csv(path, delta_w: float) -> Population:
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if tuple(rows[0]) != POPULATION_HEADER:
        raise ValueError(f"expected header {','.join(POPULATION_HEADER)}, got {rows[0]}")
    body = sorted(rows[1:], key=lambda r: int(r[0]))
    if [int(r[0]) for r in body] != list(range(len(body))):
        raise ValueError("individual column must enumerate 0..P-1")
    welfare = np.array([float(r[1]) for r in body])
    units = np.array([int(r[2]) for r in body])
    return Population(welfare, units, delta_w)
