#!/usr/bin/env python3
"""Adversarial perception search, envelope coarseness, and shield timing.

Three evaluation tools: a cross-entropy search for the fixed in-box kernel
that hurts a shield the most; the gap between the sampled inner belief set
and the LP outer envelope (how loose the abstraction is); and per-step shield
latency.
"""

import numpy as np

from ipshield.benchio import LineFollow, generate
from ipshield.simulate import (
    CeConfig,
    Controller,
    PerceptionRegime,
    ShieldSpec,
    build_shield_context,
    coarseness_diagnostic,
    cross_entropy_adversary,
    run_batch,
    sample_histories,
    timing_harness,
)

bench = LineFollow(width=5, drift=0.15, confusion=0.25, noise_budget=0.1, horizon=12)
model, _ = generate(bench, seed=3)
spec = ShieldSpec("single", beta=0.7, gamma=0.8)
controller = Controller("random")

print("=== cross-entropy adversarial kernel ===")
cfg = CeConfig(population=10, elite_fraction=0.3, iterations=4, rollouts_per_candidate=30)
kernel = cross_entropy_adversary(model, spec, controller, cfg, seed=5)
score_seed = int(np.random.default_rng([5, 4242]).integers(2 ** 31))
base = run_batch(model, spec, controller,
                 PerceptionRegime("adversarial", model.point_emission),
                 cfg.rollouts_per_candidate, score_seed)
worst = run_batch(model, spec, controller,
                  PerceptionRegime("adversarial", kernel),
                  cfg.rollouts_per_candidate, score_seed)
print(f"fail+stuck under the point-estimate kernel: {1 - base.safe_rate:.3f}")
print(f"fail+stuck under the found kernel:          {1 - worst.safe_rate:.3f}")
print("the found kernel stays inside the learned box:",
      model.emissions.contains(kernel.probs))

print("\n=== envelope coarseness against forward sampling ===")
ctx = build_shield_context(model, ShieldSpec("envelope", gamma=0.8))
histories = sample_histories(model, 15, seed=6)
report = coarseness_diagnostic(model, ctx.omega, histories,
                               fwd_budget=200, fwd_kernels=40, seed=6)
print("per-step mean gap:", [round(g, 3) for g in report.per_step_mean[:8]])
print("per-step max gap: ", [round(g, 3) for g in report.per_step_max[:8]])
print("summary:", {k: round(v, 4) for k, v in report.summary().items()})
print("(gaps are nonnegative: the sampled set under-approximates what the"
      " envelope over-approximates)")

print("\n=== per-step shield latency ===")
# a 16-state grid: big enough that the LP-based envelope dominates the
# budget-driven sampling cost of the fwd shield
from ipshield.benchio import ObstacleGrid  # noqa: E402

grid, _ = generate(
    ObstacleGrid(rows=4, cols=4, obstacles=((1, 1), (2, 3)), noise_budget=0.1,
                 horizon=12),
    seed=2,
)
specs = [ShieldSpec(k, beta=0.7, gamma=0.8) for k in
         ("observation", "single", "fwd", "envelope")]
timing = timing_harness(grid, specs, controller, PerceptionRegime("uniform"),
                        episodes=8, seed=8)
for kind in ("observation", "single", "fwd", "envelope"):
    print(f"  {kind:>12}: mean {timing[kind]['mean_us']:10.1f} us/step")
print("(fwd cost is set by its fixed sampling budget; envelope cost grows"
      " with the state count)")
