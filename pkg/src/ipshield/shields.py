"""State-space shield synthesis and its runtime liftings.

The perfect-perception shield maps each true state to admissible actions via
a one-step invariance threshold over a core state set.  Five runtime liftings
consume it: a memoryless observation filter, a point-estimate Bayes filter, a
conservative belief-envelope filter, a forward-sampled belief-set filter, and
a support-tracking filter.  All runtime step functions are pure: shield state
goes in, updated state comes out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .envelope import (
    BeliefEnvelope,
    InconsistentObservation,
    PropagationConfig,
    min_safety_score,
    propagate,
)
from .model import (
    Belief,
    Ipomdp,
    PointEmission,
    TransitionKernel,
    ZeroEvidence,
    bayes_update,
)

ZHAT_POSITIVE_TOL = 1e-12
SUPPORT_CAP_DEFAULT = 2 ** 18


class EmptyCore(Exception):
    """The invariance fixed point is empty: nothing is shieldable at this
    threshold."""


class SupportExplosion(Exception):
    """Support exploration exceeded its cap; the offline analysis does not
    scale to this model."""


class AllEvidenceZero(InconsistentObservation):
    """Every forward-sampled posterior candidate had zero evidence."""


@dataclass(frozen=True)
class PerfectShield:
    """Per-state admissible action sets with their 0/1 indicator matrix."""

    allowed: tuple[frozenset[int], ...]
    chi: np.ndarray

    def __post_init__(self):
        chi = np.asarray(self.chi, dtype=float)
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "allowed", tuple(frozenset(a) for a in self.allowed))

    @classmethod
    def from_sets(cls, allowed, num_actions: int) -> "PerfectShield":
        chi = np.zeros((len(allowed), num_actions))
        for s, acts in enumerate(allowed):
            for a in acts:
                chi[s, a] = 1.0
        return cls(tuple(frozenset(a) for a in allowed), chi)

    @property
    def num_actions(self) -> int:
        return self.chi.shape[1]


@dataclass(frozen=True)
class ShieldConfig:
    beta: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


def pcis_core(model: Ipomdp, gamma: float) -> frozenset[int]:
    """Greatest fixed point of one-step gamma-invariance over non-fail states.

    A state survives an iteration if some action keeps at least gamma of its
    transition mass inside the current candidate set.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    T = model.transitions.probs
    core = np.ones(model.num_states, dtype=bool)
    for s in model.labels.fail_states:
        core[s] = False
    while True:
        mass = T[:, :, core].sum(axis=2)  # (s, a) mass staying inside
        keep = (mass >= gamma - 1e-12).any(axis=1) & core
        if np.array_equal(keep, core):
            break
        core = keep
    if not core.any():
        raise EmptyCore(f"no state has a {gamma}-preserving action")
    return frozenset(np.flatnonzero(core).tolist())


def omega_from_core(core: frozenset[int], gamma: float, T: TransitionKernel) -> PerfectShield:
    """Admissible actions are those keeping >= gamma mass inside the core."""
    if not core:
        raise ValueError("core must be nonempty")
    ns, na, _ = T.probs.shape
    idx = sorted(core)
    mass = T.probs[:, :, idx].sum(axis=2)
    allowed = []
    for s in range(ns):
        if s in core:
            allowed.append(frozenset(np.flatnonzero(mass[s] >= gamma - 1e-12).tolist()))
        else:
            allowed.append(frozenset())
    return PerfectShield.from_sets(allowed, na)


def synthesize(model: Ipomdp, gamma: float) -> tuple[frozenset[int], PerfectShield]:
    """Core and lifted state shield in one call."""
    core = pcis_core(model, gamma)
    return core, omega_from_core(core, gamma, model.transitions)


# ------------------------------------------------------------------ filters


def _admitted(scores: np.ndarray, beta: float) -> frozenset[int]:
    return frozenset(np.flatnonzero(scores >= beta).tolist())


def observation_allowed(
    o: int, Zhat: PointEmission, omega: PerfectShield, beta: float
) -> frozenset[int]:
    """Memoryless filter: score actions under the one-observation posterior
    from a uniform prior."""
    col = Zhat.column(o)
    total = col.sum()
    if total <= ZHAT_POSITIVE_TOL:
        raise ZeroEvidence(f"observation {o} impossible under the point kernel")
    post = col / total
    return _admitted(post @ omega.chi, beta)


def single_belief_step(
    b: Belief, a: int, o: int, model: Ipomdp, Zhat: PointEmission
) -> Belief:
    return bayes_update(b, a, o, model.transitions, Zhat)


def single_belief_allowed(b: Belief, omega: PerfectShield, beta: float) -> frozenset[int]:
    return _admitted(b.mass @ omega.chi, beta)


def envelope_shield_step(
    env: BeliefEnvelope,
    a: int,
    o: int,
    model: Ipomdp,
    cfg: Optional[PropagationConfig] = None,
) -> BeliefEnvelope:
    return propagate(env, a, o, model, cfg)


def envelope_allowed(env: BeliefEnvelope, omega: PerfectShield, beta: float) -> frozenset[int]:
    scores = np.array(
        [min_safety_score(env, omega.chi[:, a]) for a in range(omega.num_actions)]
    )
    return _admitted(scores, beta)


# ------------------------------------------------------- forward sampling


@dataclass(frozen=True)
class FwdSampleSet:
    """Concrete belief points under-approximating the reachable belief set.

    When the model carries a point-estimate kernel, row 0 follows the exact
    point-estimate Bayes chain and is never pruned, so the sampled filter
    admits no more than the single-belief filter on the same history.
    """

    beliefs: np.ndarray
    budget: int
    kernels_per_step: int
    tracks_point: bool = True

    def __post_init__(self):
        b = np.asarray(self.beliefs, dtype=float)
        if b.ndim != 2 or b.shape[0] < 1:
            raise ValueError("need at least one belief row")
        if self.budget < 1 or self.kernels_per_step < 1:
            raise ValueError("budget and kernels_per_step must be >= 1")
        if b.shape[0] > self.budget:
            raise ValueError("more beliefs than the budget allows")
        b.setflags(write=False)
        object.__setattr__(self, "beliefs", b)

    @classmethod
    def initial(cls, b0: Belief, budget: int = 500, kernels_per_step: int = 100) -> "FwdSampleSet":
        return cls(b0.mass[None, :], budget, kernels_per_step)

    @property
    def size(self) -> int:
        return self.beliefs.shape[0]


def fwd_sampling_step(
    fset: FwdSampleSet, a: int, o: int, model: Ipomdp, rng: np.random.Generator
) -> FwdSampleSet:
    """Push every tracked belief through K sampled admissible kernels.

    Candidates with zero evidence are dropped; the survivors are pruned back
    to the budget keeping, for every state coordinate, the beliefs attaining
    its minimum and maximum, then a uniform random subset of the leftovers.
    """
    from .simulate import sample_kernels

    n = model.num_states
    K = fset.kernels_per_step
    Y = fset.beliefs @ model.transitions.probs[:, a, :]  # (m, n)

    # K full kernels per step, shared by all beliefs; each kernel row is an
    # admissible distribution, so its o-column is a consistent choice
    kernels = sample_kernels(model.emissions.lower, model.emissions.upper, K, rng)[:, :, o]

    U = Y[:, None, :] * kernels[None, :, :]  # (m, K, n)
    evidence = U.sum(axis=2)
    keep = evidence > 1e-12
    posts = U[keep] / evidence[keep][:, None]

    pinned = None
    tracks = fset.tracks_point and model.point_emission is not None
    if tracks:
        u0 = Y[0] * model.point_emission.column(o)
        ev0 = u0.sum()
        if ev0 > 1e-12:
            pinned = u0 / ev0
        else:
            tracks = False
    if posts.shape[0] == 0 and pinned is None:
        raise AllEvidenceZero(
            f"all {Y.shape[0] * K} forward-sampled candidates have zero evidence"
        )

    new = _prune(pinned, posts, fset.budget, rng)
    return replace(fset, beliefs=new, tracks_point=tracks)


def _prune(pinned, posts: np.ndarray, budget: int, rng: np.random.Generator) -> np.ndarray:
    rows: list[np.ndarray] = []
    if pinned is not None:
        rows.append(pinned)
    head = len(rows)
    total = posts.shape[0]
    if total and head + total > budget:
        # coordinate extremes first, in a fixed order for determinism
        order: list[int] = []
        seen: set[int] = set()
        for s in range(posts.shape[1]):
            for idx in (int(np.argmin(posts[:, s])), int(np.argmax(posts[:, s]))):
                if idx not in seen:
                    seen.add(idx)
                    order.append(idx)
        order = order[: budget - head]
        free = budget - head - len(order)
        if free > 0:
            rest = np.setdiff1d(np.arange(total), np.array(order))
            fill = rng.choice(rest, size=min(free, rest.size), replace=False)
            order.extend(int(i) for i in fill)
        rows.extend(posts[i] for i in sorted(order))
    else:
        rows.extend(posts)
    return np.vstack(rows) if rows else posts


def fwd_sampling_allowed(
    fset: FwdSampleSet, omega: PerfectShield, beta: float
) -> frozenset[int]:
    scores = (fset.beliefs @ omega.chi).min(axis=0)
    return _admitted(scores, beta)


# ------------------------------------------------------------ support shield


@dataclass(frozen=True)
class SupportWinningRegion:
    """Offline fixed-point analysis over reachable belief supports."""

    supports: frozenset[frozenset[int]]
    reachable: frozenset[frozenset[int]]
    transitions: dict

    def successor(self, support: frozenset[int], a: int, o: int) -> Optional[frozenset[int]]:
        return self.transitions.get((support, a, o))


def build_support_shield(
    model: Ipomdp, Zhat: PointEmission, cap: int = SUPPORT_CAP_DEFAULT
) -> SupportWinningRegion:
    """Breadth-first support exploration followed by safety fixed point.

    A support wins when it avoids fail states and some action sends every
    positive-probability observation successor to a winning support.  An
    empty region means the shield blocks everything from step 0.
    """
    T = model.transitions.probs
    positive = Zhat.probs > ZHAT_POSITIVE_TOL  # (s, o)
    fails = model.labels.fail_states
    start = model.initial_belief.support()

    reachable: set[frozenset[int]] = {start}
    queue = [start]
    trans: dict = {}
    while queue:
        u = queue.pop()
        src = sorted(u)
        for a in range(model.num_actions):
            reach_mask = (T[src, a, :] > 0.0).any(axis=0)
            for o in range(model.num_observations):
                nxt = frozenset(np.flatnonzero(reach_mask & positive[:, o]).tolist())
                if not nxt:
                    continue
                trans[(u, a, o)] = nxt
                if nxt not in reachable:
                    if len(reachable) >= cap:
                        raise SupportExplosion(
                            f"more than {cap} reachable supports during exploration"
                        )
                    reachable.add(nxt)
                    queue.append(nxt)

    winning = {u for u in reachable if not (u & fails)}
    while True:
        keep = set()
        for u in winning:
            for a in range(model.num_actions):
                succs = [
                    trans[(u, a, o)]
                    for o in range(model.num_observations)
                    if (u, a, o) in trans
                ]
                if succs and all(v in winning for v in succs):
                    keep.add(u)
                    break
        if keep == winning:
            break
        winning = keep
    return SupportWinningRegion(
        supports=frozenset(winning),
        reachable=frozenset(reachable),
        transitions=trans,
    )


def support_allowed(
    support: frozenset[int], region: SupportWinningRegion, num_actions: int, num_obs: int
) -> frozenset[int]:
    """Actions whose every recorded observation successor stays winning."""
    if support not in region.supports:
        return frozenset()
    good = []
    for a in range(num_actions):
        succs = [
            region.transitions[(support, a, o)]
            for o in range(num_obs)
            if (support, a, o) in region.transitions
        ]
        if succs and all(v in region.supports for v in succs):
            good.append(a)
    return frozenset(good)
