"""Finite interval-POMDP data model, validation, and exact Bayes filtering.

All containers freeze their arrays after construction so model bundles can be
shared across parallel workers.  Probabilistic invariants are checked by
``validate_model`` (violations are returned as data, not raised), since files
and generators want to report every problem at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envelope import BeliefEnvelope

PROB_TOL = 1e-9
ZERO_EVIDENCE_TOL = 1e-12


class ZeroEvidence(Exception):
    """The received observation has (numerically) zero probability under the
    kernel and belief in use; the model or the observation stream is wrong."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpaceIndex:
    """Dense 0-based index over a finite named space (states, actions, ...)."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError("space names must be unique")
        if not self.names:
            raise ValueError("space must be nonempty")

    @property
    def size(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def fromsize(cls, prefix: str, n: int) -> "SpaceIndex":
        return cls(tuple(f"{prefix}{i}" for i in range(n)))


@dataclass(frozen=True)
class TransitionKernel:
    """probs[s, a, s'] = Pr[next = s' | state = s, action = a]."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ValueError("transition kernel must be (s, a, s') shaped")
        object.__setattr__(self, "probs", _frozen(p))

    def matrix(self, a: int) -> np.ndarray:
        """The (s, s') row-stochastic matrix of action a."""
        return self.probs[:, a, :]

    def push_forward(self, b: np.ndarray, a: int) -> np.ndarray:
        return b @ self.probs[:, a, :]


@dataclass(frozen=True)
class EmissionIntervals:
    """Entrywise bounds on the emission matrix: lower[s,o] <= Z(o|s) <= upper[s,o]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 2:
            raise ValueError("emission bounds must be matching (s, o) matrices")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def num_states(self) -> int:
        return self.lower.shape[0]

    @property
    def num_observations(self) -> int:
        return self.lower.shape[1]

    def contains(self, probs: np.ndarray, tol: float = PROB_TOL) -> bool:
        return bool(
            np.all(probs >= self.lower - tol) and np.all(probs <= self.upper + tol)
        )


@dataclass(frozen=True)
class PointEmission:
    """A single emission matrix, probs[s, o] = Zhat(o|s)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError("point emission must be an (s, o) matrix")
        object.__setattr__(self, "probs", _frozen(p))

    def column(self, o: int) -> np.ndarray:
        return self.probs[:, o]


@dataclass(frozen=True)
class Belief:
    """Probability vector over latent states."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim != 1:
            raise ValueError("belief must be a vector")
        if np.any(m < -PROB_TOL) or abs(m.sum() - 1.0) > PROB_TOL:
            raise ValueError("belief must be nonnegative and sum to 1")
        object.__setattr__(self, "mass", _frozen(np.clip(m, 0.0, None)))

    @property
    def num_states(self) -> int:
        return self.mass.shape[0]

    def support(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.mass > 0.0).tolist())

    @classmethod
    def point(cls, s: int, n: int) -> "Belief":
        m = np.zeros(n)
        m[s] = 1.0
        return cls(m)

    @classmethod
    def uniform(cls, n: int) -> "Belief":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class SafetyLabels:
    """Designated safe core and failure states; the two sets never overlap."""

    safe_core: frozenset[int]
    fail_states: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "safe_core", frozenset(self.safe_core))
        object.__setattr__(self, "fail_states", frozenset(self.fail_states))


@dataclass(frozen=True)
class History:
    """Ordered (action, observation) pairs observed so far."""

    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(a), int(o)) for a, o in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def check_against(self, model: "Ipomdp") -> None:
        """Indices must be in range and the trace fit inside the horizon."""
        if len(self.steps) > model.horizon:
            raise ValueError(f"history length {len(self.steps)} exceeds horizon {model.horizon}")
        for t, (a, o) in enumerate(self.steps):
            if not 0 <= a < model.num_actions:
                raise ValueError(f"history step {t}: action {a} out of range")
            if not 0 <= o < model.num_observations:
                raise ValueError(f"history step {t}: observation {o} out of range")


@dataclass(frozen=True)
class Ipomdp:
    """Model bundle: dynamics, emission intervals, labels, prior, horizon."""

    states: SpaceIndex
    actions: SpaceIndex
    observations: SpaceIndex
    transitions: TransitionKernel
    emissions: EmissionIntervals
    labels: SafetyLabels
    initial_belief: Belief
    horizon: int
    point_emission: Optional[PointEmission] = None

    @property
    def num_states(self) -> int:
        return self.states.size

    @property
    def num_actions(self) -> int:
        return self.actions.size

    @property
    def num_observations(self) -> int:
        return self.observations.size


def validate_model(model: Ipomdp) -> list[str]:
    """Check every type invariant; return one message per violation.

    An empty list means the bundle is well formed.  Messages name the field
    and the offending index so file loaders can surface all problems at once.
    """
    bad: list[str] = []
    ns, na, no = model.num_states, model.num_actions, model.num_observations

    T = model.transitions.probs
    if T.shape != (ns, na, ns):
        bad.append(f"transitions: shape {T.shape} != {(ns, na, ns)}")
    else:
        out = np.argwhere((T < -PROB_TOL) | (T > 1 + PROB_TOL))
        for s, a, t in out[:5]:
            bad.append(f"transitions: entry out of [0,1] at (s={s},a={a},s'={t})")
        sums = T.sum(axis=2)
        off = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
        for s, a in off:
            bad.append(f"transitions: row (s={s},a={a}) sums to {sums[s, a]:.12g}")

    Z = model.emissions
    if Z.lower.shape != (ns, no):
        bad.append(f"emissions: shape {Z.lower.shape} != {(ns, no)}")
    else:
        if np.any(Z.lower < -PROB_TOL) or np.any(Z.upper > 1 + PROB_TOL):
            bad.append("emissions: bound outside [0,1]")
        gap = Z.lower - Z.upper
        for s, o in np.argwhere(gap > PROB_TOL):
            bad.append(f"emissions: lower > upper at (s={s},o={o})")
        lo_sum = Z.lower.sum(axis=1)
        hi_sum = Z.upper.sum(axis=1)
        for s in np.flatnonzero(lo_sum > 1 + PROB_TOL):
            bad.append(f"emissions: empty admissible set at s={s} (sum lower {lo_sum[s]:.6g} > 1)")
        for s in np.flatnonzero(hi_sum < 1 - PROB_TOL):
            bad.append(f"emissions: empty admissible set at s={s} (sum upper {hi_sum[s]:.6g} < 1)")

    if model.point_emission is not None:
        P = model.point_emission.probs
        if P.shape != (ns, no):
            bad.append(f"point_emission: shape {P.shape} != {(ns, no)}")
        else:
            for s in np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > PROB_TOL):
                bad.append(f"point_emission: row s={s} sums to {P[s].sum():.12g}")
            if Z.lower.shape == P.shape:
                for s, o in np.argwhere(
                    (P < Z.lower - PROB_TOL) | (P > Z.upper + PROB_TOL)
                ):
                    bad.append(f"point_emission: entry (s={s},o={o}) outside intervals")

    lab = model.labels
    overlap = lab.safe_core & lab.fail_states
    if overlap:
        bad.append(f"labels: safe_core and fail_states overlap at {sorted(overlap)}")
    for s in sorted(lab.safe_core | lab.fail_states):
        if not 0 <= s < ns:
            bad.append(f"labels: state index {s} out of range")

    b0 = model.initial_belief.mass
    if b0.shape != (ns,):
        bad.append(f"initial_belief: length {b0.shape[0]} != {ns}")
    elif abs(b0.sum() - 1.0) > PROB_TOL or np.any(b0 < -PROB_TOL):
        bad.append("initial_belief: not a distribution")

    if model.horizon < 1:
        bad.append(f"horizon: {model.horizon} < 1")
    return bad


def bayes_update(
    b: Belief, a: int, o: int, T: TransitionKernel, Z: PointEmission
) -> Belief:
    """Exact single-belief filter step for action a and received observation o.

    Raises ZeroEvidence when the pre-normalization mass falls below 1e-12,
    which marks the observation as impossible under (T, Z, b).
    """
    y = T.push_forward(b.mass, a)
    u = y * Z.column(o)
    evidence = float(u.sum())
    if evidence <= ZERO_EVIDENCE_TOL:
        raise ZeroEvidence(
            f"observation {o} has evidence {evidence:.3e} under action {a}"
        )
    return Belief(u / evidence)


def envelope_from_belief(b: Belief) -> BeliefEnvelope:
    """Degenerate hypercube holding exactly one belief (propagation seed)."""
    return BeliefEnvelope(lower=b.mass.copy(), upper=b.mass.copy())
