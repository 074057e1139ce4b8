#!/usr/bin/env python3
"""Threshold sweeps and operating-point selection.

Each shield admits an action when its (worst-case) safety score clears the
threshold.  Sweeping the threshold traces the fail / stuck / safe tradeoff;
two selectors pick operating points: lowest failure (stuck as tiebreaker) and
most safe completions.
"""

from ipshield.benchio import ObstacleGrid, generate
from ipshield.simulate import (
    Controller,
    PerceptionRegime,
    ShieldSpec,
    sweep,
)

bench = ObstacleGrid(rows=2, cols=4, obstacles=((1, 2),), start=(0, 0),
                     slip=0.15, class_noise=0.25, noise_budget=0.15, horizon=10)
model, _ = generate(bench, seed=1)
betas = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
episodes = 120

for kind in ("observation", "single", "envelope"):
    result = sweep(
        model, ShieldSpec(kind, gamma=0.8), Controller("random"),
        PerceptionRegime("uniform"), betas=betas, episodes=episodes, seed=7,
    )
    print(f"--- {kind}")
    for row in result.rows:
        bar = "#" * int(40 * row.safe_rate)
        print(f"  beta {row.beta:4.2f}  fail {row.fail_rate:5.3f}  "
              f"stuck {row.stuck_rate:5.3f}  safe {row.safe_rate:5.3f}  {bar}")
    low = result.select_low_failure()
    safe = result.select_max_safe()
    print(f"  low-failure point: beta {low.beta} (fail {low.fail_rate:.3f}, stuck {low.stuck_rate:.3f})")
    print(f"  max-safe point:    beta {safe.beta} (safe {safe.safe_rate:.3f})")
