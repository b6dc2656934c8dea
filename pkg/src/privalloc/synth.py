"""Synthetic populations with a controlled unit profile.

Each unit ``j`` gets exactly ``round(rho_j * N)`` high-welfare members, so the
realized profile equals the target up to rounding to multiples of ``1/N``.
"""

from __future__ import annotations

import dataclasses
from typing import Mapping

import numpy as np
from scipy import optimize

from privalloc.budget import hard_instance
from privalloc.core import Population, UnitProfile, as_rng, gini, unit_profile

GENERATORS = ("two_point", "beta_units", "gini_target", "hard_instance")

_GINI_TOL = 0.02


@dataclasses.dataclass(frozen=True)
class PopulationSpec:
    """Recipe for a synthetic population.

    Attributes:
      P: population size; must equal ``M * N``.
      M: number of units.
      N: unit size.
      delta_w: treatment effect size.
      generator: one of ``GENERATORS``.
      params: generator parameters:
        two_point: ``low_fraction`` (share of low-welfare people in every unit).
        beta_units: ``a``, ``b`` (Beta law of each unit's profile).
        gini_target: ``G``, ``rho_bar``.
        hard_instance: ``k`` (number of zero-welfare individuals).
      seed: integer seed.
      binary: use welfare in {0, 1} instead of continuous draws.
    """

    P: int
    M: int
    N: int
    delta_w: float = 1.0
    generator: str = "gini_target"
    params: Mapping[str, float] = dataclasses.field(default_factory=dict)
    seed: int = 0
    binary: bool = False

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.P != self.M * self.N:
            raise ValueError(f"need P = M * N, got P={self.P}, M={self.M}, N={self.N}")
        if not 0.0 < self.delta_w <= 1.0:
            raise ValueError(f"delta_w must lie in (0, 1], got {self.delta_w}")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; pick from {GENERATORS}")
        need = {"two_point": {"low_fraction"}, "beta_units": {"a", "b"},
                "gini_target": {"G", "rho_bar"}, "hard_instance": {"k"}}[self.generator]
        missing = need - set(self.params)
        if missing:
            raise ValueError(f"{self.generator} needs params {sorted(missing)}")
        object.__setattr__(self, "params", dict(self.params))


@dataclasses.dataclass(frozen=True)
class Generated:
    population: Population
    rho: np.ndarray
    G: float
    rho_bar: float


def _stats(pop: Population) -> Generated:
    rho = unit_profile(pop).rho
    rb = float(rho.mean())
    return Generated(pop, rho, gini(rho) if rb > 0 else 0.0, rb)


def population_from_profile(rho, N: int, delta_w: float, rng=None,
                            binary: bool = False) -> Population:
    """Realizes a profile with exactly ``round(rho_j N)`` high-welfare people per unit."""
    rho = UnitProfile(rho).rho
    rng = as_rng(rng)
    M = rho.size
    high = np.zeros((M, N), dtype=bool)
    n_high = np.rint(rho * N).astype(np.int64)
    for j in range(M):
        high[j, rng.choice(N, size=n_high[j], replace=False)] = True
    high = high.ravel()
    if binary:
        w = high.astype(np.float64)
    else:
        u = 1.0 - rng.random(M * N)  # in (0, 1]
        v = rng.random(M * N)        # in [0, 1)
        w = np.where(high, (1.0 - delta_w) + u * delta_w, (1.0 - delta_w) * v)
    return Population.from_blocks(w, N, delta_w)


def _spread_profile(M: int, rho_bar: float, h: float) -> np.ndarray:
    """Evenly spaced profile around ``rho_bar``, clipped and re-centred on ``rho_bar``."""
    t = (2.0 * np.arange(1, M + 1) - M - 1) / (M - 1)
    raw = rho_bar + h * t
    if raw.min() >= 0.0 and raw.max() <= 1.0:
        return raw

    def gap(c):
        return np.clip(raw + c, 0.0, 1.0).mean() - rho_bar

    c = optimize.brentq(gap, -1.0 - h, 1.0 + h, xtol=1e-14)
    return np.clip(raw + c, 0.0, 1.0)


def gini_targeted_profile(M: int, G: float, rho_bar: float) -> UnitProfile:
    """Evenly spaced unit profile with mean ``rho_bar`` and Gini ``G``.

    Without clipping the half-range is ``3 M rho_bar G / (M + 1)`` and the Gini
    is exact. Otherwise entries are clipped to [0, 1], the profile is shifted
    back to mean ``rho_bar`` and the spread is tuned by root finding.

    Raises:
      ValueError: if the target Gini cannot be met within 0.02.
    """
    if not 0.0 < rho_bar <= 1.0:
        raise ValueError(f"rho_bar must lie in (0, 1], got {rho_bar}")
    if not 0.0 <= G < 1.0:
        raise ValueError(f"G must lie in [0, 1), got {G}")
    if G == 0.0:
        return UnitProfile(np.full(M, rho_bar))
    if M < 2:
        raise ValueError("a single unit always has Gini 0")
    h = 3.0 * M * rho_bar * G / (M + 1)
    if h <= min(rho_bar, 1.0 - rho_bar):
        return UnitProfile(_spread_profile(M, rho_bar, h))
    h_max = M + 1.0  # every off-centre entry saturates at 0 or 1
    top = gini(_spread_profile(M, rho_bar, h_max))
    if top < G:
        if G - top > _GINI_TOL:
            raise ValueError(f"Gini {G} unreachable with M={M}, rho_bar={rho_bar}; max {top:.4f}")
        return UnitProfile(_spread_profile(M, rho_bar, h_max))
    h = optimize.brentq(lambda x: gini(_spread_profile(M, rho_bar, x)) - G,
                        0.0, h_max, xtol=1e-12)
    prof = _spread_profile(M, rho_bar, h)
    if abs(gini(prof) - G) > _GINI_TOL:
        raise ValueError(f"Gini {G} unreachable with M={M}, rho_bar={rho_bar}")
    return UnitProfile(prof)


def target_profile(spec: PopulationSpec, rng=None) -> np.ndarray:
    """The intended unit profile before rounding to multiples of ``1/N``."""
    p = spec.params
    if spec.generator == "two_point":
        q = float(p["low_fraction"])
        if not 0.0 <= q <= 1.0:
            raise ValueError("low_fraction must lie in [0, 1]")
        return np.full(spec.M, 1.0 - q)
    if spec.generator == "beta_units":
        return as_rng(rng).beta(float(p["a"]), float(p["b"]), size=spec.M)
    if spec.generator == "gini_target":
        return gini_targeted_profile(spec.M, float(p["G"]), float(p["rho_bar"])).rho
    raise ValueError(f"{spec.generator} has no unit profile")


def generate(spec: PopulationSpec) -> Generated:
    """Builds the population described by ``spec`` with its realized statistics."""
    profile_rng, fill_rng = as_rng(spec.seed).spawn(2)
    if spec.generator == "hard_instance":
        k = float(spec.params["k"])
        if k != int(k):
            raise ValueError("hard_instance needs an integer k")
        return _stats(hard_instance(spec.P, int(k), fill_rng, spec.N))
    rho = target_profile(spec, profile_rng)
    return _stats(population_from_profile(rho, spec.N, spec.delta_w, fill_rng, spec.binary))
