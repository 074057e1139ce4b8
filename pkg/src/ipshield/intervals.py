"""Emission-interval learning from labeled counts.

Per-entry Clopper-Pearson confidence bounds are combined into a dataset-level
probability that the whole learned interval set contains the true emission
matrix: 1 - sum of per-entry budgets under the union bound, or the product of
per-entry confidences when independence of the failure events is assumed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import betainc

from .model import EmissionIntervals, PointEmission

UNIFORM = "uniform"
PER_ENTRY = "per_entry"
UNION_BOUND = "union"
INDEPENDENCE_PRODUCT = "independence"

_BISECT_TOL = 1e-10


class InvalidCounts(Exception):
    """Counts are malformed for the requested construction."""


@dataclass(frozen=True)
class CountsTable:
    """Per-state sample sizes and per-(state, observation) outcome counts."""

    n: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        k = np.asarray(self.k, dtype=np.int64)
        if n.ndim != 1 or k.ndim != 2 or k.shape[0] != n.shape[0]:
            raise ValueError("counts need n of shape (S,) and k of shape (S, O)")
        if np.any(n < 0) or np.any(k < 0):
            raise ValueError("counts must be nonnegative")
        if np.any(k.sum(axis=1) != n):
            raise ValueError("per-state counts must sum to the sample size")
        n.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    @property
    def num_states(self) -> int:
        return self.n.shape[0]

    @property
    def num_observations(self) -> int:
        return self.k.shape[1]


@dataclass(frozen=True)
class AlphaBudget:
    """How the total failure budget is split across matrix entries.

    allocation None means uniform: alpha_total / (S*O) per entry.  A matrix
    allocation must keep the union-bound constraint sum <= alpha_total when
    the union-bound combiner is selected.
    """

    alpha_total: float
    allocation: Optional[np.ndarray] = None
    combiner: str = UNION_BOUND

    def __post_init__(self):
        if not 0.0 < self.alpha_total < 1.0:
            raise ValueError("alpha_total must lie in (0, 1)")
        if self.combiner not in (UNION_BOUND, INDEPENDENCE_PRODUCT):
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if self.allocation is not None:
            a = np.asarray(self.allocation, dtype=float)
            if np.any(a <= 0.0) or np.any(a >= 1.0):
                raise ValueError("per-entry budgets must lie in (0, 1)")
            if self.combiner == UNION_BOUND and a.sum() > self.alpha_total + 1e-12:
                raise ValueError("per-entry budgets exceed alpha_total under the union bound")
            a.setflags(write=False)
            object.__setattr__(self, "allocation", a)

    def entries(self, shape: tuple[int, int]) -> np.ndarray:
        if self.allocation is None:
            return np.full(shape, self.alpha_total / (shape[0] * shape[1]))
        if self.allocation.shape != shape:
            raise ValueError(f"allocation shape {self.allocation.shape} != {shape}")
        return self.allocation


def _beta_inv(q: float, a: float, b: float) -> float:
    """Quantile of Beta(a, b) by bisection on the regularized incomplete beta."""
    lo, hi = 0.0, 1.0
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, alpha_entry: float) -> tuple[float, float]:
    """Exact equal-tail binomial confidence interval for k successes in n.

    Edge conventions: the lower bound is 0 at k = 0 and the upper bound is 1
    at k = n.
    """
    if n < 1 or k < 0 or k > n:
        raise InvalidCounts(f"need 0 <= k <= n with n >= 1, got k={k}, n={n}")
    if not 0.0 < alpha_entry < 1.0:
        raise ValueError("alpha_entry must lie in (0, 1)")
    half = alpha_entry / 2.0
    lo = 0.0 if k == 0 else _beta_inv(half, k, n - k + 1)
    hi = 1.0 if k == n else _beta_inv(1.0 - half, k + 1, n - k)
    return lo, hi


def build_emission_intervals(
    counts: CountsTable, budget: AlphaBudget
) -> tuple[EmissionIntervals, float]:
    """Entrywise Clopper-Pearson bounds plus the dataset-level confidence.

    States with no samples get vacuous [0, 1] entries and a warning; their
    budget entries still count toward the (conservative) confidence level.
    """
    shape = (counts.num_states, counts.num_observations)
    alphas = budget.entries(shape)
    lower = np.zeros(shape)
    upper = np.ones(shape)
    empty = np.flatnonzero(counts.n == 0)
    if empty.size:
        warnings.warn(
            f"states with no samples get vacuous [0,1] intervals: {empty.tolist()}",
            stacklevel=2,
        )
    for s in range(shape[0]):
        if counts.n[s] == 0:
            continue
        for o in range(shape[1]):
            lower[s, o], upper[s, o] = clopper_pearson(
                int(counts.k[s, o]), int(counts.n[s]), float(alphas[s, o])
            )
    if budget.combiner == UNION_BOUND:
        lam = 1.0 - float(alphas.sum())
    else:
        lam = float(np.prod(1.0 - alphas))
    return EmissionIntervals(lower, upper), lam


def point_estimate(counts: CountsTable) -> PointEmission:
    """Empirical emission matrix k/n; requires at least one sample per state."""
    if np.any(counts.n == 0):
        raise InvalidCounts(
            f"states without samples: {np.flatnonzero(counts.n == 0).tolist()}"
        )
    return PointEmission(counts.k / counts.n[:, None])
