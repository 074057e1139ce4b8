"""Tiny hand-built models shared by the demo scripts."""

import numpy as np

from ipshield.model import (
    Belief,
    EmissionIntervals,
    Ipomdp,
    SafetyLabels,
    SpaceIndex,
    TransitionKernel,
)


def stationary_two_state(lower, upper):
    """Two states that never move; all the action is in the observations."""
    T = np.zeros((2, 1, 2))
    T[:, 0, :] = np.eye(2)
    lower = np.asarray(lower, float)
    return Ipomdp(
        states=SpaceIndex.fromsize("s", 2),
        actions=SpaceIndex(("wait",)),
        observations=SpaceIndex.fromsize("o", lower.shape[1]),
        transitions=TransitionKernel(T),
        emissions=EmissionIntervals(lower, np.asarray(upper, float)),
        labels=SafetyLabels(frozenset({0, 1}), frozenset()),
        initial_belief=Belief(np.array([0.5, 0.5])),
        horizon=10,
    )
