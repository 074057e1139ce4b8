"""Cross-backend regression guard: the self-contained simplex and the HiGHS
adapter must agree wherever both are exact, and the process-pool episode path
must reproduce the serial path for every shield kind."""

import numpy as np
import pytest

from ipshield.benchio import ObstacleGrid, generate
from ipshield.envelope import PropagationConfig, propagate
from ipshield.model import History
from ipshield.simulate import (
    Controller,
    PerceptionRegime,
    ShieldSpec,
    replay_admitted,
    run_batch,
)

from conftest import build_model, random_envelope


def test_propagation_backends_agree_small_models(rng):
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 8))
        T = rng.dirichlet(np.ones(n), size=(n, 2))
        Z = rng.dirichlet(np.ones(3), size=n)
        w = rng.uniform(0.02, 0.3, size=(n, 3))
        model = build_model(T, np.clip(Z - w, 0, 1), np.clip(Z + w, 0, 1))
        env = random_envelope(rng, n)
        a = propagate(env, 0, 1, model, PropagationConfig(lp_backend="bland"))
        b = propagate(env, 0, 1, model, PropagationConfig(lp_backend="highs"))
        worst = max(
            worst,
            float(np.max(np.abs(a.lower - b.lower))),
            float(np.max(np.abs(a.upper - b.upper))),
        )
    assert worst <= 1e-9, worst


@pytest.mark.parametrize("kind", ["observation", "single", "envelope", "fwd", "support"])
def test_process_pool_reproduces_serial(kind):
    model, _ = generate(
        ObstacleGrid(rows=2, cols=4, obstacles=((1, 2),), horizon=6), seed=1
    )
    spec = ShieldSpec(kind, beta=0.6, gamma=0.8, budget=40, kernels_per_step=10)
    a = run_batch(model, spec, Controller(), PerceptionRegime(), 8, seed=5, threads=1)
    b = run_batch(model, spec, Controller(), PerceptionRegime(), 8, seed=5, threads=2)
    assert (a.fail_rate, a.stuck_rate, a.safe_rate, a.inconsistent_rate) == (
        b.fail_rate, b.stuck_rate, b.safe_rate, b.inconsistent_rate
    )


def test_replay_rejects_malformed_history():
    model, _ = generate(
        ObstacleGrid(rows=2, cols=4, obstacles=((1, 2),), horizon=4), seed=1
    )
    spec = ShieldSpec("single", beta=0.5, gamma=0.8)
    with pytest.raises(ValueError, match="action"):
        replay_admitted(model, spec, History(((9, 0),)))
    with pytest.raises(ValueError, match="horizon"):
        replay_admitted(model, spec, History(tuple((0, 0) for _ in range(9))))
