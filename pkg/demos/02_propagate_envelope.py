#!/usr/bin/env python3
"""Conservative belief-envelope propagation, on a model small enough to
check by hand.

A belief envelope stores per-state lower and upper mass bounds.  One
action-observation step must bound every posterior reachable from any prior
in the envelope under any emission probability inside the learned intervals.
The bilinear prior-times-likelihood products are relaxed with McCormick
envelopes and the Bayes normalization is linearized with a Charnes-Cooper
scaling, giving one small LP per envelope facet.
"""

import numpy as np

from ipshield.envelope import BeliefEnvelope, min_safety_score, propagate
from ipshield.model import Belief, bayes_update, envelope_from_belief
from ipshield.simulate import sample_admissible_row

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from _demo_models import stationary_two_state  # noqa: E402

print("=== worked example 1: uncertain prior, fixed likelihood ===")
# stationary chain, likelihood column fixed at (0.5, 0.25): the posterior on
# state 0 is 2p/(1+p), increasing in the prior mass p
model = stationary_two_state(lower=[[0.5, 0.5], [0.25, 0.75]],
                             upper=[[0.5, 0.5], [0.25, 0.75]])
env = BeliefEnvelope(lower=np.array([0.4, 0.4]), upper=np.array([0.6, 0.6]))
out = propagate(env, a=0, o=0, model=model)
print(f"propagated state-0 bounds: [{out.lower[0]:.6f}, {out.upper[0]:.6f}]")
print(f"closed form:               [{4 / 7:.6f}, {3 / 4:.6f}]")

print("\n=== worked example 2: point prior, uncertain likelihood ===")
model = stationary_two_state(lower=[[0.4, 0.4], [0.5, 0.5]],
                             upper=[[0.6, 0.6], [0.5, 0.5]])
env = envelope_from_belief(Belief(np.array([0.5, 0.5])))
out = propagate(env, a=0, o=0, model=model)
print(f"propagated state-0 bounds: [{out.lower[0]:.6f}, {out.upper[0]:.6f}]")
print(f"closed form:               [{0.4 / 0.9:.6f}, {0.6 / 1.1:.6f}]")

print("\n=== containment stress test ===")
rng = np.random.default_rng(1)
model = stationary_two_state(lower=[[0.35, 0.35], [0.15, 0.55]],
                             upper=[[0.65, 0.65], [0.45, 0.85]])
env = BeliefEnvelope(lower=np.array([0.2, 0.2]), upper=np.array([0.8, 0.8]))
out = propagate(env, a=0, o=0, model=model)
print(f"envelope after one step: [{out.lower[0]:.4f}, {out.upper[0]:.4f}] on state 0")
worst_violation = 0.0
for _ in range(2000):
    p = rng.uniform(0.2, 0.8)
    prior = np.array([p, 1 - p])
    w = rng.uniform(model.emissions.lower[:, 0], model.emissions.upper[:, 0])
    u = prior * w
    if u.sum() <= 1e-12:
        continue
    post = u / u.sum()
    worst_violation = max(
        worst_violation,
        float(np.max(out.lower - post)),
        float(np.max(post - out.upper)),
    )
print(f"worst containment violation over 2000 exact posteriors: {worst_violation:.2e}")

print("\n=== worst-case safety scoring ===")
chi = np.array([1.0, 0.0])  # the action is admissible only in state 0
print(f"min score over the envelope: {min_safety_score(out, chi):.4f}")
b = Belief(np.array([0.5, 0.5]))
zhat = model.emissions.lower + (model.emissions.upper - model.emissions.lower) / 2
from ipshield.model import PointEmission  # noqa: E402

post = bayes_update(b, 0, 0, model.transitions, PointEmission(zhat / zhat.sum(axis=1, keepdims=True)))
print(f"one point-estimate posterior scores:  {float(chi @ post.mass):.4f}")
print("the envelope's worst case is never above any contained posterior's score")

print("\n=== sampling admissible emission rows ===")
row = sample_admissible_row(model.emissions.lower[0], model.emissions.upper[0],
                            np.random.default_rng(7))
print("a random in-box distribution for state 0:", row.round(4), "sum", row.sum())
