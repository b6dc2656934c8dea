"""Allocation from predicted welfare.

A linear model of ``eta(x) = P(y = 1 | x)`` is fit privately on a paid sample,
then the rest of the population is ranked either individually by prediction
(ILA) or by the mean prediction of each feature-space cell (ULA). Training and
allocation use disjoint individuals so their privacy costs do not add.
"""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np

from privalloc import alloc, dp
from privalloc.core import Allocation, Population, as_rng, gini, spawn

ULA_DOMINANT = "ULA"
ILA_DOMINANT = "ILA"


@dataclasses.dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclasses.dataclass(frozen=True)
class LearnerSpec:
    """Constants of the convex learning problem.

    Attributes:
      lipschitz: per-example gradient norm cap ``L``.
      diameter: diameter ``D`` of the parameter ball.
      dim: feature dimension ``p``.
      smoothness: smoothness ``xi`` of the loss.
      steps: gradient steps of the reference learner.
      lr: step size of the reference learner.
    """

    lipschitz: float = 1.0
    diameter: float = 1.0
    dim: int = 1
    smoothness: float = 1.0
    steps: int = 100
    lr: float = 0.25

    def __post_init__(self):
        if min(self.lipschitz, self.diameter, self.smoothness, self.lr) <= 0:
            raise ValueError("lipschitz, diameter, smoothness and lr must be positive")
        if self.dim < 1 or self.steps < 1:
            raise ValueError("dim and steps must be at least 1")


@dataclasses.dataclass(frozen=True)
class LinearModel:
    """Predicts ``clip(x @ theta, 0, 1)``."""

    theta: np.ndarray

    def raw(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.theta

    def predict(self, X) -> np.ndarray:
        return np.clip(self.raw(X), 0.0, 1.0)

    def to_list(self) -> list[float]:
        return [float(v) for v in self.theta]


@dataclasses.dataclass(frozen=True)
class RiskDecomposition:
    """Squared-loss risk split into excess and irreducible parts.

    ``total`` is ``excess + irreducible`` by construction; ``measured_total``
    is the direct Monte Carlo estimate of the loss against fresh labels and
    ``measured_se`` its standard error.
    """

    total: float
    excess: float
    irreducible: float
    measured_total: float = math.nan
    measured_se: float = math.nan


def _as_arrays(data, y=None) -> tuple[np.ndarray, np.ndarray]:
    if y is None:
        X = np.stack([np.asarray(e.features, dtype=np.float64) for e in data])
        y = np.array([e.label for e in data], dtype=np.float64)
        return X, y
    return np.asarray(data, dtype=np.float64), np.asarray(y, dtype=np.float64)


def private_learner_train(data, spec: LearnerSpec, psi: float, rng=None,
                          y=None) -> LinearModel:
    """Fits a linear predictor by noisy projected full-batch gradient descent.

    Each of ``spec.steps`` rounds clips per-example squared-loss gradients to
    norm ``L``, adds Gaussian noise to their sum at ``psi / steps``-zCDP
    (replace-one sensitivity ``2L``) and projects onto the ball of radius
    ``D / 2``. Composition over rounds gives psi-zCDP overall.

    Args:
      data: list of ``LabeledExample`` or a feature matrix when ``y`` is given.
      spec: learner constants.
      psi: total zCDP budget; ``inf`` trains without noise.
      rng: seed or Generator.
      y: labels, when ``data`` is a matrix.

    Returns:
      The final iterate.
    """
    X, y = _as_arrays(data, y)
    n, p = X.shape
    if n < 1:
        raise ValueError("need at least one training example")
    if p != spec.dim:
        raise ValueError(f"features have dimension {p}, spec says {spec.dim}")
    L, D = spec.lipschitz, spec.diameter
    if math.isfinite(psi) and (D / L) * min(4.0 / math.sqrt(n),
                                            math.sqrt(2.0 * psi) / math.sqrt(p)) > 2.0 / spec.smoothness:
        warnings.warn("smoothness condition of the private learner is violated; "
                      "risk guarantees may not hold", RuntimeWarning, stacklevel=2)
    rng = as_rng(rng)
    sigma = 0.0 if math.isinf(psi) else dp.gaussian_sigma(2.0 * L, psi / spec.steps)
    theta = np.zeros(p)
    radius = D / 2.0
    for _ in range(spec.steps):
        grads = (2.0 * (X @ theta - y))[:, None] * X
        norms = np.linalg.norm(grads, axis=1)
        grads *= np.minimum(1.0, L / np.maximum(norms, 1e-300))[:, None]
        g = grads.sum(axis=0)
        if sigma > 0:
            g = g + rng.normal(0.0, sigma, size=p)
        theta = theta - spec.lr * g / n
        norm = np.linalg.norm(theta)
        if norm > radius:
            theta *= radius / norm
    return LinearModel(theta)


@dataclasses.dataclass(frozen=True)
class CellDistribution:
    """Synthetic features with a binary latent trait and a cell grid.

    Each individual has ``u`` uniform on [0, 1], a cell ``floor(u * cells)``,
    a trait ``b ~ Bernoulli(q[cell])`` and ``eta = eta_low + (eta_high - eta_low) b``.
    Features are ``(u, b, 1)`` so a linear model can represent ``eta`` exactly.
    The label is ``y ~ Bernoulli(eta)`` and welfare equals the label.

    Attributes:
      q: per-cell trait probabilities; their count is the number of cells.
      eta_low: conditional mean when ``b = 0``.
      eta_high: conditional mean when ``b = 1``.
    """

    q: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 0.9, 10), 12))
    eta_low: float = 0.2
    eta_high: float = 0.8

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 1 or q.size < 1 or q.min() < 0 or q.max() > 1:
            raise ValueError("q must be a non-empty vector of probabilities")
        if not 0.0 <= self.eta_low <= 1.0 or not 0.0 <= self.eta_high <= 1.0:
            raise ValueError("eta levels must lie in [0, 1]")
        object.__setattr__(self, "q", tuple(float(v) for v in q))

    @property
    def cells(self) -> int:
        return len(self.q)

    @property
    def dim(self) -> int:
        return 3

    @property
    def cell_means(self) -> np.ndarray:
        """Per-cell mean of ``eta``, i.e. the cell's expected high-welfare share."""
        q = np.asarray(self.q)
        return self.eta_low + (self.eta_high - self.eta_low) * q

    @property
    def irreducible(self) -> float:
        """Bayes risk ``E[eta (1 - eta)]``."""
        q = np.asarray(self.q)
        lo, hi = self.eta_low, self.eta_high
        return float(np.mean((1 - q) * lo * (1 - lo) + q * hi * (1 - hi)))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.irreducible)

    @property
    def bayes_theta(self) -> np.ndarray:
        return np.array([0.0, self.eta_high - self.eta_low, self.eta_low])

    def eta(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.eta_low + (self.eta_high - self.eta_low) * X[:, 1]

    def sample(self, n: int, rng=None, stratified: bool = False):
        """Draws ``n`` individuals.

        Returns:
          ``(X, y, cell)``. With ``stratified=True``, ``n`` must be a multiple
          of the cell count and every cell gets exactly ``n / cells`` members,
          stored cell by cell.
        """
        rng = as_rng(rng)
        C = self.cells
        if stratified:
            if n % C:
                raise ValueError(f"n={n} is not a multiple of {C} cells")
            cell = np.repeat(np.arange(C), n // C)
            u = (cell + rng.random(n)) / C
        else:
            u = rng.random(n)
            cell = np.minimum((u * C).astype(np.int64), C - 1)
        b = (rng.random(n) < np.asarray(self.q)[cell]).astype(np.float64)
        X = np.column_stack([u, b, np.ones(n)])
        y = (rng.random(n) < self.eta(X)).astype(np.float64)
        return X, y, cell


@dataclasses.dataclass(frozen=True)
class LearningInstance:
    """A realized population with features, true ``eta`` and cell labels."""

    population: Population
    X: np.ndarray
    eta: np.ndarray
    cell: np.ndarray


def learning_instance(dist: CellDistribution, P: int, rng=None) -> LearningInstance:
    """Population of ``P`` individuals, ``P / cells`` per cell, welfare = label."""
    X, y, cell = dist.sample(P, rng, stratified=True)
    pop = Population(y, cell, 1.0)
    return LearningInstance(pop, X, dist.eta(X), cell)


def risk_decompose(model, dist: CellDistribution, n_mc: int = 200_000,
                   rng=None) -> RiskDecomposition:
    """Monte Carlo excess and irreducible risk of ``model`` under ``dist``.

    Raises:
      ValueError: if ``dist`` cannot report its conditional mean.
    """
    if not hasattr(dist, "eta"):
        raise ValueError("distribution does not expose its conditional mean")
    X, y, _ = dist.sample(n_mc, rng)
    f = model.predict(X)
    eta = dist.eta(X)
    excess = float(np.mean((f - eta) ** 2))
    irreducible = float(np.mean(eta * (1.0 - eta)))
    loss = (f - y) ** 2
    return RiskDecomposition(excess + irreducible, excess, irreducible,
                             float(loss.mean()), float(loss.std(ddof=1) / math.sqrt(n_mc)))


def split_sample(P: int, n: int, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint ``(train, pool)`` index sets with ``|train| = n``."""
    if not 0 <= n <= P:
        raise ValueError(f"need 0 <= n <= P, got n={n}")
    perm = as_rng(rng).permutation(P)
    return np.sort(perm[:n]), np.sort(perm[n:])


def ila_predictive(pop: Population, X, model, k_prime: int, psi: float, rng=None,
                   pool=None, beta: float = 0.05, k: int | None = None) -> Allocation:
    """Ranks the allocation pool by predicted ``eta`` and treats the lowest ``k_prime``.

    With finite ``psi`` the private threshold mechanism runs on the predictions
    with oblivious-adversary parameters.

    Args:
      pop: population; welfare is only used downstream for evaluation.
      X: features for every individual in ``pop``.
      model: object with ``predict``.
      k_prime: treatments available after paying for the sample.
      psi: zCDP parameter of the allocation step.
      rng: seed or Generator.
      pool: individuals eligible for treatment (those not used for training).
      beta: failure probability of the threshold mechanism.
      k: budget recorded on the allocation; defaults to ``k_prime``.
    """
    pool = np.arange(pop.P) if pool is None else np.asarray(pool, dtype=np.int64)
    k = k_prime if k is None else k
    k_prime = min(k_prime, pool.size)
    scores = model.predict(np.asarray(X)[pool])
    if k_prime <= 0:
        return Allocation(np.empty(0, np.int64), k)
    if math.isinf(psi):
        order = np.argsort(scores, kind="stable")
        return Allocation(pool[order[:k_prime]], k)
    params = alloc.ila_params_adversarial(max(pool.size, 2), k_prime, psi, beta)
    out = alloc.ila_private_scores(scores, params, rng)
    return Allocation(pool[out.treated.treated], k)


def _greedy_cells(scores: np.ndarray, groups: list[np.ndarray], k: int, rng) -> np.ndarray:
    picked, left = [], k
    for c in np.argsort(scores, kind="stable"):
        if left == 0:
            break
        members = groups[c]
        take = min(left, members.size)
        if take < members.size:
            members = rng.choice(members, size=take, replace=False)
        picked.append(members)
        left -= take
    return np.concatenate(picked) if picked else np.empty(0, np.int64)


def ula_predictive(pop: Population, X, model, partition, k: int, psi1: float,
                   psi2: float, rng=None, pool=None, min_unit: int = 1,
                   beta: float = 0.05) -> Allocation:
    """Ranks cells by their mean prediction and fills the lowest first.

    With finite privacy parameters each individual receives its cell's noisy
    mean prediction (sensitivity ``sqrt(2)/N`` at ``psi1``, clipped to
    [0, 1]) and the private threshold mechanism allocates at ``psi2``.

    Args:
      pop: population.
      X: features for every individual.
      model: object with ``predict``.
      partition: cell label of every individual.
      k: budget.
      psi1: zCDP parameter of the cell-mean release.
      psi2: zCDP parameter of the threshold mechanism.
      rng: seed or Generator.
      pool: individuals eligible for treatment.
      min_unit: declared minimum cell size within the pool.
      beta: failure probability of the threshold mechanism.

    Raises:
      ValueError: if a cell in the pool is smaller than ``min_unit``.
    """
    pool = np.arange(pop.P) if pool is None else np.asarray(pool, dtype=np.int64)
    part = np.asarray(partition)[pool]
    cells, inverse = np.unique(part, return_inverse=True)
    sizes = np.bincount(inverse)
    if sizes.min() < min_unit:
        raise ValueError(f"a cell has {sizes.min()} members, below the minimum {min_unit}")
    pred = model.predict(np.asarray(X)[pool])
    means = np.bincount(inverse, weights=pred) / sizes
    noise_rng, ila_rng = spawn(rng, 2)
    k = min(k, pool.size)
    if math.isinf(psi1) and math.isinf(psi2):
        groups = [pool[inverse == c] for c in range(cells.size)]
        return Allocation(_greedy_cells(means, groups, k, ila_rng), k)
    N = int(sizes.min())
    noisy = np.atleast_1d(dp.gaussian_mechanism(means, math.sqrt(2.0) / N, psi1, noise_rng))
    scores = np.clip(noisy[inverse], 0.0, 1.0)
    if math.isinf(psi2):
        groups = [pool[inverse == c] for c in range(cells.size)]
        return Allocation(_greedy_cells(noisy, groups, k, ila_rng), k)
    params = alloc.ila_params_adversarial(max(pool.size, 2), max(k, 1), psi2, beta)
    params = dataclasses.replace(params, k=k)
    out = alloc.ila_private_scores(scores, params, ila_rng)
    return Allocation(pool[out.treated.treated], k)


def _generic_n(P, lam, psi, spec: LearnerSpec) -> float:
    LD = spec.lipschitz * spec.diameter
    a = (P / lam * math.sqrt(10.0 * LD * (2.0 * psi) ** -0.5 * math.sqrt(spec.dim))) ** (2.0 / 3.0)
    b = (P / lam * math.sqrt(10.0 * LD)) ** 0.8
    return max(a, b)


def _instance_n(P, lam, psi, spec: LearnerSpec, floor: float) -> float:
    LD = spec.lipschitz * spec.diameter
    a = math.sqrt(5.0 * P * LD * math.sqrt(spec.dim) / (lam * math.sqrt(2.0 * psi * floor)))
    b = (5.0 * P * LD / (lam * math.sqrt(floor))) ** (2.0 / 3.0)
    return max(a, b)


def _cap(n: float, P: int, capped: bool) -> int | float:
    return min(P, math.ceil(n)) if capped else n


def ila_sample_size(P: int, lam: float, psi: float, spec: LearnerSpec,
                    L_lower: float | None = None, capped: bool = True):
    """Training-sample size trading label cost against model risk for ILA.

    Uses the instance-specific rule when a lower bound ``L_lower`` on the best
    achievable risk is known. ``capped=False`` returns the raw real value.
    """
    if min(P, lam, psi) <= 0:
        raise ValueError("P, lambda and psi must be positive")
    if L_lower is None:
        return _cap(_generic_n(P, lam, psi, spec), P, capped)
    if not L_lower > 0:
        raise ValueError("L_lower must be positive")
    return _cap(_instance_n(P, lam, psi, spec, L_lower), P, capped)


def ula_sample_size(P: int, lam: float, psi: float, spec: LearnerSpec,
                    E_lower: float | None = None, capped: bool = True):
    """As :func:`ila_sample_size` with a lower bound on the excess risk instead."""
    if min(P, lam, psi) <= 0:
        raise ValueError("P, lambda and psi must be positive")
    if E_lower is None:
        return _cap(_generic_n(P, lam, psi, spec), P, capped)
    if not E_lower > 0:
        raise ValueError("E_lower must be positive for the instance-specific rule")
    return _cap(_instance_n(P, lam, psi, spec, E_lower), P, capped)


@dataclasses.dataclass(frozen=True)
class LearningRegime:
    label: str
    product: float
    general_lhs: float | None = None
    general_rhs: float | None = None
    flagged: bool = False


def classify_regime_learning(sigma: float, k: int, P: int, G: float, rho_bar_M: float,
                             L_star: float | None = None) -> LearningRegime:
    """Whether ranking cells beats ranking individuals for a Bayes-in-class model.

    ULA dominates when ``(1/sigma)(k/P)(1 - G) rho_bar_M <= 1/2``. If the
    optimal risk ``L_star`` is given, the general sufficient condition
    ``2 (k/P)(1 - G) rho_bar_M sqrt(L_star) <= sigma^2`` is also reported.
    ``sigma = 0`` is labelled ILA and flagged.
    """
    if sigma < 0 or not 0 <= G <= 1 or not 0 <= rho_bar_M <= 1 or not 0 <= k <= P:
        raise ValueError("inputs out of range")
    core_term = (k / P) * (1.0 - G) * rho_bar_M
    lhs = rhs = None
    if L_star is not None:
        lhs, rhs = 2.0 * core_term * math.sqrt(L_star), sigma * sigma
    if sigma == 0:
        return LearningRegime(ILA_DOMINANT, math.inf if core_term > 0 else math.nan,
                              lhs, rhs, flagged=True)
    product = core_term / sigma
    return LearningRegime(ULA_DOMINANT if product <= 0.5 else ILA_DOMINANT, product, lhs, rhs)


@dataclasses.dataclass(frozen=True)
class Recommendation:
    ula: str
    sampling_excess: float
    modeling_excess: float
    ila: str | None = None


# Within this factor the two excess-regret rates are reported as a tie.
_EITHER_RATIO = 1.25


def modeling_vs_sampling(P: int, M: int, lam: float, E_star: float,
                         k: int | None = None, L_star: float | None = None) -> Recommendation:
    """Compares the excess regret of stratified sampling with that of a learned model.

    For ULA the sampling route costs about ``(P^2 M lam)^(1/3)`` and the
    modeling route about ``lam^(1/5) P^(4/5) + P sqrt(E_star)``. For ILA,
    modeling wins when ``P lam k / (P lam + k) > P sqrt(L_star)``.
    """
    if min(P, M) < 1 or lam <= 0 or E_star < 0:
        raise ValueError("need P, M >= 1, lambda > 0 and E_star >= 0")
    sampling = (P * P * M * lam) ** (1.0 / 3.0)
    modeling = lam ** 0.2 * P ** 0.8 + P * math.sqrt(E_star)
    ratio = sampling / modeling
    if ratio > _EITHER_RATIO:
        ula = "modeling"
    elif ratio < 1.0 / _EITHER_RATIO:
        ula = "sampling"
    else:
        ula = "either"
    ila = None
    if k is not None and L_star is not None:
        ila = "modeling" if P * lam * k / (P * lam + k) > P * math.sqrt(L_star) else "sampling"
    return Recommendation(ula, sampling, modeling, ila)


def mean_lowest(values, m: int) -> float:
    """Mean of the ``m`` smallest entries, 0 when ``m = 0``."""
    if m <= 0:
        return 0.0
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[:m].mean())


def ila_predictive_bound(k_prime: int, eta_bar: float, P: int, alpha: float,
                         beta: float) -> float:
    """High-probability regret bound for ranking individuals by a model with risk ``alpha``."""
    return (k_prime * eta_bar + P * math.sqrt(alpha)
            + P ** 0.75 * math.sqrt(math.log(1.0 / beta) / 2.0))


def cell_baseline(cell_means, sizes, k: int) -> float:
    """Best expected high-welfare count among ``k`` treated when whole cells are ranked."""
    order = np.argsort(cell_means, kind="stable")
    left, total = k, 0.0
    for c in order:
        take = min(left, int(sizes[c]))
        total += take * float(cell_means[c])
        left -= take
        if left == 0:
            break
    return total


def ula_predictive_bound(baseline: float, P: int, cells: int, sigma2: float,
                         alpha: float) -> float:
    """Expected regret bound for ranking cells by mean prediction."""
    return baseline + math.sqrt(P * cells * sigma2) + P * math.sqrt(max(alpha - sigma2, 0.0))


def profile_stats(cell_means) -> tuple[float, float]:
    """``(G, rho_bar)`` of a cell profile."""
    r = np.asarray(cell_means, dtype=np.float64)
    rb = float(r.mean())
    return (gini(r) if rb > 0 else 0.0), rb
