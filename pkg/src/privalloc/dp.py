"""Differential-privacy primitives under zero-concentrated DP.

Noise scales follow the zCDP Gaussian mechanism: a query with L2 sensitivity
``Delta`` released as ``N(q, Delta**2 / (2 * psi))`` is ``psi``-zCDP.

Prefix sums are released with the square-root factorization of the
lower-triangular all-ones matrix ``A = L @ L``, where ``L`` is Toeplitz with
coefficients ``c_0 = 1, c_j = c_{j-1} * (2j - 1) / (2j)``. The output is
``A @ x + L @ z``, so a unit change in one count moves ``L @ x`` by at most the
first column norm of ``L``.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np
import scipy.fft

from privalloc.core import as_rng

EULER_GAMMA = 0.5772156649015329

# Base of every logarithm in the noise and margin formulas.
LOG = math.log


@dataclasses.dataclass(frozen=True)
class PrivacyBudget:
    psi: float
    beta: float = 0.05

    def __post_init__(self):
        if not self.psi > 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    def split(self, psi1: float) -> tuple["PrivacyBudget", "PrivacyBudget"]:
        if not 0.0 < psi1 < self.psi:
            raise ValueError("psi1 must lie strictly inside (0, psi)")
        return (PrivacyBudget(psi1, self.beta),
                PrivacyBudget(self.psi - psi1, self.beta))


def _psi(budget) -> float:
    psi = budget.psi if isinstance(budget, PrivacyBudget) else float(budget)
    if not psi > 0:
        raise ValueError(f"psi must be positive, got {psi}")
    return psi


def gaussian_sigma(sensitivity: float, psi: float) -> float:
    """Noise standard deviation ``Delta / sqrt(2 psi)``."""
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    psi = _psi(psi)
    if math.isinf(psi):
        return 0.0
    return sensitivity / math.sqrt(2.0 * psi)


def gaussian_mechanism(true_value, sensitivity: float, budget, rng=None):
    """Adds Gaussian noise with variance ``sensitivity**2 / (2 psi)``.

    Works elementwise on arrays; ``psi = inf`` returns the input unchanged.
    """
    sigma = gaussian_sigma(sensitivity, _psi(budget))
    value = np.asarray(true_value, dtype=np.float64)
    if sigma == 0.0:
        out = value.copy()
    else:
        out = value + as_rng(rng).normal(0.0, sigma, size=value.shape)
    return float(out) if out.ndim == 0 else out


def toeplitz_sqrt_coefficients(n: int) -> np.ndarray:
    """First ``n`` coefficients of the Toeplitz square root of the prefix-sum matrix."""
    if n < 1:
        raise ValueError("n must be at least 1")
    j = np.arange(1, n, dtype=np.float64)
    return np.concatenate([[1.0], np.cumprod((2.0 * j - 1.0) / (2.0 * j))])


def partial_sums_sensitivity(n: int) -> float:
    """L2 norm of the largest column of the factor applied to the counts."""
    c = toeplitz_sqrt_coefficients(n)
    return float(math.sqrt(c @ c))


def sigma_max(n: int, psi: float) -> float:
    """Largest per-coordinate noise std: ``(1 + (log n + gamma) / pi) / sqrt(psi)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    psi = _psi(psi)
    if math.isinf(psi):
        return 0.0
    return (1.0 + (LOG(n) + EULER_GAMMA) / math.pi) / math.sqrt(psi)


def partial_sums_noise_scale(n: int, psi: float) -> float:
    """Std of the i.i.d. Gaussian vector fed through the Toeplitz factor.

    Chosen so the last (noisiest) prefix sum has std exactly ``sigma_max``.
    """
    return sigma_max(n, psi) / partial_sums_sensitivity(n)


def partial_sums_coordinate_std(n: int, psi: float) -> np.ndarray:
    c = toeplitz_sqrt_coefficients(n)
    return partial_sums_noise_scale(n, psi) * np.sqrt(np.cumsum(c * c))


def partial_sums_is_calibrated(n: int, psi: float) -> bool:
    """True when the injected noise meets the psi-zCDP requirement.

    The requirement is ``noise_scale >= sensitivity / sqrt(2 psi)``.
    """
    need = partial_sums_sensitivity(n) / math.sqrt(2.0 * _psi(psi))
    return partial_sums_noise_scale(n, psi) >= need


@functools.lru_cache(maxsize=32)
def _coef_spectrum(n: int) -> tuple[int, np.ndarray]:
    size = scipy.fft.next_fast_len(2 * n - 1, real=True)
    return size, scipy.fft.rfft(toeplitz_sqrt_coefficients(n), size)


def toeplitz_apply(z: np.ndarray) -> np.ndarray:
    """Computes ``L @ z`` (first ``len(z)`` terms of ``c * z``) via FFT."""
    n = z.size
    if n <= 64:
        return np.convolve(toeplitz_sqrt_coefficients(n), z)[:n]
    size, spec = _coef_spectrum(n)
    return scipy.fft.irfft(spec * scipy.fft.rfft(z, size), size)[:n]


@dataclasses.dataclass(frozen=True)
class NoisyPrefixSums:
    values: np.ndarray
    sigma_max: float

    def __len__(self) -> int:
        return int(self.values.size)


def private_partial_sums(counts, psi: float, rng=None) -> NoisyPrefixSums:
    """Releases all prefix sums of ``counts`` under psi-zCDP.

    Args:
      counts: non-negative integer counts; one individual changes one count by 1.
      psi: zCDP parameter; ``inf`` disables noise.
      rng: seed or Generator.

    Returns:
      Noisy prefix sums with zero-mean correlated Gaussian error whose largest
      per-coordinate standard deviation is ``sigma_max(len(counts), psi)``.
    """
    x = np.asarray(counts, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("counts must be a non-empty 1-d vector")
    if np.any(x < 0):
        raise ValueError("counts must be non-negative")
    n = x.size
    exact = np.cumsum(x)
    psi = _psi(psi)
    if math.isinf(psi):
        return NoisyPrefixSums(exact, 0.0)
    z = as_rng(rng).normal(0.0, partial_sums_noise_scale(n, psi), size=n)
    return NoisyPrefixSums(exact + toeplitz_apply(z), sigma_max(n, psi))


def max_gaussian_bound(n: int, sigma_star: float, beta: float) -> float:
    """High-probability envelope ``sigma*(sqrt(2 log n) + sqrt(2 log(1/beta)))``.

    Holds with probability at least ``1 - beta`` for the maximum of ``n``
    (possibly dependent) centred Gaussians with stds at most ``sigma_star``.
    """
    if n < 1 or sigma_star < 0 or not 0.0 < beta < 1.0:
        raise ValueError("need n >= 1, sigma_star >= 0 and beta in (0, 1)")
    return sigma_star * (math.sqrt(2.0 * LOG(n)) + math.sqrt(2.0 * LOG(1.0 / beta)))


def hypergeometric_deviation_bound(P: int, k: int, beta: float) -> float:
    """Serfling radius for ``|X/k - p|`` of a hypergeometric sample of size k."""
    if not 1 <= k <= P or not 0.0 < beta < 1.0:
        raise ValueError("need 1 <= k <= P and beta in (0, 1)")
    return math.sqrt((P - k) / P) * math.sqrt(LOG(2.0 / beta) / k)
