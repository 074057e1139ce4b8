"""Interval-POMDP shielding toolkit.

Learns interval-valued perception models from labeled counts, propagates
conservative belief envelopes through interval POMDPs by linear programming,
lifts state-space safety shields to runtime shields, and evaluates the
resulting closed loop with a Monte Carlo harness.
"""

from . import benchio, envelope, intervals, linprog, model, shields, simulate

__all__ = [
    "benchio",
    "envelope",
    "intervals",
    "linprog",
    "model",
    "shields",
    "simulate",
]

__version__ = "0.1.0"
