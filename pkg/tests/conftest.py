import numpy as np
import pytest

from ipshield.envelope import BeliefEnvelope
from ipshield.model import (
    Belief,
    EmissionIntervals,
    Ipomdp,
    PointEmission,
    SafetyLabels,
    SpaceIndex,
    TransitionKernel,
)


def sample_box_simplex_row(lower, upper, rng):
    """Oracle-side sampler: a point of the simplex inside [lower, upper].

    Independent of the library implementation on purpose; plain proportional
    slack repair of iid uniforms.
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    u = rng.uniform(lower, upper)
    for _ in range(100):
        delta = 1.0 - u.sum()
        if abs(delta) < 1e-13:
            break
        slack = (upper - u) if delta > 0 else (u - lower)
        total = slack.sum()
        if total <= 0:
            break
        u = u + delta * slack / total
    return np.clip(u, lower, upper)


def build_model(
    T,
    Z_lower,
    Z_upper,
    *,
    fail=(),
    safe=None,
    b0=None,
    horizon=10,
    point=None,
):
    T = np.asarray(T, float)
    ns, na, _ = T.shape
    no = np.asarray(Z_lower).shape[1]
    if safe is None:
        safe = set(range(ns)) - set(fail)
    if b0 is None:
        b0 = np.full(ns, 1.0 / ns)
    return Ipomdp(
        states=SpaceIndex.fromsize("s", ns),
        actions=SpaceIndex.fromsize("a", na),
        observations=SpaceIndex.fromsize("o", no),
        transitions=TransitionKernel(T),
        emissions=EmissionIntervals(np.asarray(Z_lower, float), np.asarray(Z_upper, float)),
        labels=SafetyLabels(frozenset(safe), frozenset(fail)),
        initial_belief=Belief(np.asarray(b0, float)),
        horizon=horizon,
        point_emission=None if point is None else PointEmission(np.asarray(point, float)),
    )


def random_ipomdp(rng, max_states=5, max_obs=4, width_scale=0.25):
    """Small random model with interval emissions built around a random kernel."""
    ns = int(rng.integers(2, max_states + 1))
    na = int(rng.integers(1, 4))
    no = int(rng.integers(2, max_obs + 1))
    T = rng.dirichlet(np.ones(ns), size=(ns, na))
    Zstar = rng.dirichlet(np.ones(no), size=ns)
    w = rng.uniform(0.0, width_scale, size=(ns, no))
    lo = np.clip(Zstar - w, 0.0, 1.0)
    hi = np.clip(Zstar + w, 0.0, 1.0)
    return build_model(T, lo, hi, point=Zstar), Zstar


def random_envelope(rng, n):
    center = rng.dirichlet(np.ones(n))
    lo = np.clip(center - rng.uniform(0, 0.3, n), 0.0, 1.0)
    hi = np.clip(center + rng.uniform(0, 0.3, n), 0.0, 1.0)
    return BeliefEnvelope(lower=lo, upper=hi)


def exact_posterior(b, Ta, w):
    """Independent one-step Bayes arithmetic used as the containment oracle."""
    y = b @ Ta
    u = y * w
    total = u.sum()
    if total <= 1e-12:
        return None
    return u / total


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
