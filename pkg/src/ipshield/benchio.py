"""Model file format and synthetic benchmark generators.

Files are versioned JSON keyed by names, with probabilities serialized as
repr strings so a save/load round trip reproduces every float bit-for-bit.
A file carries either explicit emission intervals or raw labeled counts plus
an alpha budget; counts are turned into intervals on load and the resulting
dataset-level confidence is reported alongside the model.

The generators are desk-scale structural analogues of grid-navigation,
refueling, and lane-keeping benchmarks: a grid with obstacle cells and three
aliased observation classes, a fuel-constrained grid whose fuel level is
hidden from observations, and a drifting line follower with one noisy
observation label per position.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .intervals import (
    INDEPENDENCE_PRODUCT,
    UNION_BOUND,
    AlphaBudget,
    CountsTable,
    build_emission_intervals,
    point_estimate,
)
from .model import (
    Belief,
    EmissionIntervals,
    Ipomdp,
    PointEmission,
    SafetyLabels,
    SpaceIndex,
    TransitionKernel,
    validate_model,
)

FORMAT_VERSION = 1


class ParseError(Exception):
    """The file is not a well-formed model file."""


class ValidationError(Exception):
    """The file parsed but the model violates its invariants."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class SpecError(Exception):
    """The benchmark specification is internally inconsistent."""


@dataclass(frozen=True)
class LoadResult:
    model: Ipomdp
    lam: Optional[float] = None
    counts: Optional[CountsTable] = None


def _f(x: float) -> str:
    return repr(float(x))


def save_model(
    model: Ipomdp,
    path,
    counts: Optional[CountsTable] = None,
    alpha: Optional[float] = None,
    combiner: str = UNION_BOUND,
) -> None:
    """Write a model file; passing counts stores the raw labeled data plus the
    alpha budget instead of the derived intervals."""
    S, A, O = model.states.names, model.actions.names, model.observations.names
    doc: dict = {
        "format_version": FORMAT_VERSION,
        "states": list(S),
        "actions": list(A),
        "observations": list(O),
        "horizon": model.horizon,
        "transitions": [
            [S[s], A[a], S[t], _f(p)]
            for (s, a, t), p in np.ndenumerate(model.transitions.probs)
            if p != 0.0
        ],
        "safe_core": [S[s] for s in sorted(model.labels.safe_core)],
        "fail_states": [S[s] for s in sorted(model.labels.fail_states)],
        "initial_belief": [
            [S[s], _f(p)] for s, p in enumerate(model.initial_belief.mass) if p != 0.0
        ],
    }
    if counts is not None:
        if alpha is None:
            raise ValueError("counts-bearing files need the alpha budget")
        doc["counts"] = {
            "alpha": _f(alpha),
            "combiner": combiner,
            "n": {S[s]: int(v) for s, v in enumerate(counts.n)},
            "k": [
                [S[s], O[o], int(v)]
                for (s, o), v in np.ndenumerate(counts.k)
                if v != 0
            ],
        }
    else:
        doc["emission_intervals"] = [
            [S[s], O[o], _f(model.emissions.lower[s, o]), _f(model.emissions.upper[s, o])]
            for s in range(len(S))
            for o in range(len(O))
            if model.emissions.lower[s, o] != 0.0 or model.emissions.upper[s, o] != 0.0
        ]
    if model.point_emission is not None:
        doc["point_emission"] = [
            [S[s], O[o], _f(p)]
            for (s, o), p in np.ndenumerate(model.point_emission.probs)
            if p != 0.0
        ]
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def _space(doc: dict, key: str) -> SpaceIndex:
    names = doc.get(key)
    if not isinstance(names, list) or not names or not all(isinstance(x, str) for x in names):
        raise ParseError(f"field {key!r} must be a nonempty list of names")
    if len(set(names)) != len(names):
        raise ParseError(f"field {key!r} has duplicate names")
    return SpaceIndex(tuple(names))


def _lookup(space: SpaceIndex, name, field: str) -> int:
    try:
        return space.names.index(name)
    except ValueError:
        raise ParseError(f"{field}: unknown name {name!r}") from None


def _prob(raw, field: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"{field}: bad probability {raw!r}") from None
    return v


def load_model(path) -> LoadResult:
    """Parse, assemble, validate; counts files also report their confidence.

    Raises ParseError for malformed structure and ValidationError bundling
    every model invariant violation.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {doc.get('format_version')!r}")

    states = _space(doc, "states")
    actions = _space(doc, "actions")
    observations = _space(doc, "observations")
    ns, na, no = states.size, actions.size, observations.size

    T = np.zeros((ns, na, ns))
    for entry in doc.get("transitions", []):
        if len(entry) != 4:
            raise ParseError(f"transitions: bad entry {entry!r}")
        s, a, t = (
            _lookup(states, entry[0], "transitions"),
            _lookup(actions, entry[1], "transitions"),
            _lookup(states, entry[2], "transitions"),
        )
        T[s, a, t] = _prob(entry[3], "transitions")
    # rows off by no more than the 1e-9 validation tolerance are kept
    # bit-for-bit; renormalizing them would break round-trip equality

    counts = None
    lam = None
    if "counts" in doc:
        cdoc = doc["counts"]
        n = np.zeros(ns, dtype=np.int64)
        for name, val in cdoc.get("n", {}).items():
            n[_lookup(states, name, "counts.n")] = int(val)
        k = np.zeros((ns, no), dtype=np.int64)
        for entry in cdoc.get("k", []):
            if len(entry) != 3:
                raise ParseError(f"counts.k: bad entry {entry!r}")
            s = _lookup(states, entry[0], "counts.k")
            o = _lookup(observations, entry[1], "counts.k")
            k[s, o] = int(entry[2])
        try:
            counts = CountsTable(n=n, k=k)
        except ValueError as e:
            raise ParseError(f"counts: {e}") from None
        combiner = cdoc.get("combiner", UNION_BOUND)
        if combiner not in (UNION_BOUND, INDEPENDENCE_PRODUCT):
            raise ParseError(f"counts.combiner: unknown {combiner!r}")
        try:
            budget = AlphaBudget(alpha_total=_prob(cdoc.get("alpha"), "counts.alpha"),
                                 combiner=combiner)
        except ValueError as e:
            raise ParseError(f"counts.alpha: {e}") from None
        emissions, lam = build_emission_intervals(counts, budget)
    elif "emission_intervals" in doc:
        lo = np.zeros((ns, no))
        hi = np.zeros((ns, no))
        for entry in doc.get("emission_intervals", []):
            if len(entry) != 4:
                raise ParseError(f"emission_intervals: bad entry {entry!r}")
            s = _lookup(states, entry[0], "emission_intervals")
            o = _lookup(observations, entry[1], "emission_intervals")
            lo[s, o] = _prob(entry[2], "emission_intervals")
            hi[s, o] = _prob(entry[3], "emission_intervals")
        emissions = EmissionIntervals(lo, hi)
    else:
        raise ParseError("model needs either 'emission_intervals' or 'counts'")

    point = None
    if "point_emission" in doc:
        P = np.zeros((ns, no))
        for entry in doc["point_emission"]:
            if len(entry) != 3:
                raise ParseError(f"point_emission: bad entry {entry!r}")
            s = _lookup(states, entry[0], "point_emission")
            o = _lookup(observations, entry[1], "point_emission")
            P[s, o] = _prob(entry[2], "point_emission")
        point = PointEmission(P)
    elif counts is not None and np.all(counts.n > 0):
        point = point_estimate(counts)

    b0 = np.zeros(ns)
    for entry in doc.get("initial_belief", []):
        if len(entry) != 2:
            raise ParseError(f"initial_belief: bad entry {entry!r}")
        b0[_lookup(states, entry[0], "initial_belief")] = _prob(entry[1], "initial_belief")
    try:
        belief = Belief(b0)
    except ValueError as e:
        raise ParseError(f"initial_belief: {e}") from None

    horizon = doc.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        raise ParseError(f"horizon: need a positive integer, got {horizon!r}")

    model = Ipomdp(
        states=states,
        actions=actions,
        observations=observations,
        transitions=TransitionKernel(T),
        emissions=emissions,
        labels=SafetyLabels(
            frozenset(_lookup(states, x, "safe_core") for x in doc.get("safe_core", [])),
            frozenset(_lookup(states, x, "fail_states") for x in doc.get("fail_states", [])),
        ),
        initial_belief=belief,
        horizon=horizon,
        point_emission=point,
    )
    violations = validate_model(model)
    if violations:
        raise ValidationError(violations)
    return LoadResult(model=model, lam=lam, counts=counts)


# ------------------------------------------------------------- generators


@dataclass(frozen=True)
class ObstacleGrid:
    """Grid walk with absorbing obstacle cells and three observation bands."""

    rows: int = 4
    cols: int = 4
    obstacles: tuple[tuple[int, int], ...] = ((1, 1), (2, 3))
    start: tuple[int, int] = (0, 0)
    slip: float = 0.1
    class_noise: float = 0.15
    noise_budget: float = 0.1
    samples_per_state: int = 0
    alpha: float = 0.1
    horizon: int = 12

    def check(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise SpecError("grid needs at least 2x2 cells")
        cells = {(r, c) for r in range(self.rows) for c in range(self.cols)}
        if not set(self.obstacles) <= cells:
            raise SpecError("obstacles outside the grid")
        if self.start in set(self.obstacles) or self.start not in cells:
            raise SpecError("start cell must be a free grid cell")
        if not 0 <= self.slip < 1 or not 0 <= self.class_noise < 1:
            raise SpecError("slip and class_noise must lie in [0, 1)")


@dataclass(frozen=True)
class RefuelLike:
    """Fuel-constrained grid; fuel level and crash risk are latent."""

    size: int = 3
    fuel: int = 3
    obstacles: tuple[tuple[int, int], ...] = ((1, 1),)
    station: tuple[int, int] = (2, 2)
    start: tuple[int, int] = (0, 0)
    slip: float = 0.05
    noise_budget: float = 0.08
    samples_per_state: int = 0
    alpha: float = 0.1
    horizon: int = 14

    def check(self) -> None:
        cells = {(r, c) for r in range(self.size) for c in range(self.size)}
        if not set(self.obstacles) <= cells:
            raise SpecError("obstacles outside the grid")
        if self.station in set(self.obstacles) or self.station not in cells:
            raise SpecError("station must be a free cell")
        if self.start in set(self.obstacles) or self.start not in cells:
            raise SpecError("start must be a free cell")
        if self.fuel < 1:
            raise SpecError("fuel capacity must be >= 1")


@dataclass(frozen=True)
class LineFollow:
    """Lateral track positions with drift; one observation label per state."""

    width: int = 5
    drift: float = 0.15
    confusion: float = 0.25
    noise_budget: float = 0.08
    samples_per_state: int = 0
    alpha: float = 0.1
    horizon: int = 15

    def check(self) -> None:
        if self.width < 3:
            raise SpecError("track width must be >= 3")
        if not 0 <= self.drift < 1 or not 0 <= self.confusion < 1:
            raise SpecError("drift and confusion must lie in [0, 1)")


BenchmarkSpec = Union[ObstacleGrid, RefuelLike, LineFollow]


def synthesize_counts(
    Zstar: PointEmission, samples_per_state, rng: np.random.Generator
) -> CountsTable:
    """Multinomial labeled-sample counts drawn from the ground-truth kernel."""
    probs = Zstar.probs
    ns = probs.shape[0]
    n = np.broadcast_to(np.asarray(samples_per_state, dtype=np.int64), (ns,)).copy()
    k = np.vstack([
        rng.multinomial(int(n[s]), probs[s] / probs[s].sum()) if n[s] > 0
        else np.zeros(probs.shape[1], dtype=np.int64)
        for s in range(ns)
    ])
    return CountsTable(n=n, k=k)


def _intervals_from(
    spec, Zstar: np.ndarray, rng
) -> tuple[EmissionIntervals, PointEmission, Optional[CountsTable]]:
    """Noise-budget box around the true kernel, or counts-derived bounds."""
    if spec.samples_per_state > 0:
        counts = synthesize_counts(PointEmission(Zstar), spec.samples_per_state, rng)
        emissions, _ = build_emission_intervals(counts, AlphaBudget(spec.alpha))
        if not emissions.contains(Zstar, tol=0.0):
            # expected for a fraction <= alpha of seeds; surfaced so seeded
            # fixtures can tell a miss from a bug
            warnings.warn(
                "counts-derived intervals miss the ground-truth kernel "
                f"(alpha={spec.alpha}, samples={spec.samples_per_state})",
                stacklevel=2,
            )
        return emissions, point_estimate(counts), counts
    lo = np.clip(Zstar - spec.noise_budget, 0.0, 1.0)
    hi = np.clip(Zstar + spec.noise_budget, 0.0, 1.0)
    return EmissionIntervals(lo, hi), PointEmission(Zstar), None


def _grid_moves(rows, cols, slip):
    """(cell, action) -> dict destination cell -> probability; walls bounce."""
    deltas = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}  # up down left right
    side = {0: (2, 3), 1: (2, 3), 2: (0, 1), 3: (0, 1)}

    def clamp(r, c):
        return (r, c) if 0 <= r < rows and 0 <= c < cols else None

    def dest(cell, d):
        nxt = clamp(cell[0] + deltas[d][0], cell[1] + deltas[d][1])
        return nxt if nxt is not None else cell

    moves = {}
    for r in range(rows):
        for c in range(cols):
            for a in range(4):
                probs: dict = {}
                probs[dest((r, c), a)] = probs.get(dest((r, c), a), 0.0) + (1 - slip)
                for lateral in side[a]:
                    t = dest((r, c), lateral)
                    probs[t] = probs.get(t, 0.0) + slip / 2.0
                moves[(r, c), a] = probs
    return moves


def generate(spec: BenchmarkSpec, seed: int) -> tuple[Ipomdp, PointEmission]:
    """Deterministic model construction from a benchmark spec and seed."""
    model, Zstar, _counts = generate_with_counts(spec, seed)
    return model, Zstar


def generate_with_counts(
    spec: BenchmarkSpec, seed: int
) -> tuple[Ipomdp, PointEmission, Optional[CountsTable]]:
    """Like generate, also exposing the synthesized counts when the benchmark
    requests counts-derived intervals (so files can store the raw data)."""
    if isinstance(spec, ObstacleGrid):
        return _generate_obstacle(spec, seed)
    if isinstance(spec, RefuelLike):
        return _generate_refuel(spec, seed)
    if isinstance(spec, LineFollow):
        return _generate_linefollow(spec, seed)
    raise SpecError(f"unknown benchmark spec {type(spec).__name__}")


def _generate_obstacle(spec: ObstacleGrid, seed: int):
    spec.check()
    rng = np.random.default_rng([seed, 101])
    cells = [(r, c) for r in range(spec.rows) for c in range(spec.cols)]
    index = {cell: i for i, cell in enumerate(cells)}
    ns, na, no = len(cells), 4, 3
    blocked = set(spec.obstacles)

    T = np.zeros((ns, na, ns))
    moves = _grid_moves(spec.rows, spec.cols, spec.slip)
    for cell in cells:
        s = index[cell]
        if cell in blocked:
            T[s, :, s] = 1.0  # absorbing fail cell
            continue
        for a in range(na):
            for t_cell, p in moves[cell, a].items():
                T[s, a, index[t_cell]] += p

    def band(c):
        return min(no - 1, (no * c) // spec.cols)

    # full-support confusion: the true band keeps 1 - noise, the rest share
    # the noise, so no observation is ever structurally impossible
    Zstar = np.full((ns, no), 0.0)
    for cell in cells:
        s = index[cell]
        b = band(cell[1])
        Zstar[s, :] = spec.class_noise / (no - 1)
        Zstar[s, b] = 1.0 - spec.class_noise

    emissions, point, counts = _intervals_from(spec, Zstar, rng)
    fail = frozenset(index[c] for c in blocked)
    model = Ipomdp(
        states=SpaceIndex(tuple(f"r{r}c{c}" for r, c in cells)),
        actions=SpaceIndex(("up", "down", "left", "right")),
        observations=SpaceIndex(tuple(f"band{i}" for i in range(no))),
        transitions=TransitionKernel(T),
        emissions=emissions,
        labels=SafetyLabels(frozenset(range(ns)) - fail, fail),
        initial_belief=Belief.point(index[spec.start], ns),
        horizon=spec.horizon,
        point_emission=point,
    )
    return model, PointEmission(Zstar), counts


def _generate_refuel(spec: RefuelLike, seed: int):
    spec.check()
    rng = np.random.default_rng([seed, 202])
    cells = [
        (r, c)
        for r in range(spec.size)
        for c in range(spec.size)
        if (r, c) not in set(spec.obstacles)
    ]
    states = [(cell, f) for cell in cells for f in range(spec.fuel + 1)]
    index = {st: i for i, st in enumerate(states)}
    fail_idx = len(states)  # one absorbing crash/exhaustion state
    ns, na = len(states) + 1, 4
    no = len(cells) + 1  # cell labels plus a terminal label

    moves = _grid_moves(spec.size, spec.size, spec.slip)
    blocked = set(spec.obstacles)
    T = np.zeros((ns, na, ns))
    T[fail_idx, :, fail_idx] = 1.0
    for (cell, f), s in index.items():
        for a in range(na):
            if f == 0:
                T[s, a, fail_idx] = 1.0  # exhausted away from a refill
                continue
            for t_cell, p in moves[cell, a].items():
                if t_cell in blocked:
                    T[s, a, fail_idx] += p
                else:
                    nf = spec.fuel if t_cell == spec.station else f - 1
                    T[s, a, index[(t_cell, nf)]] += p

    cell_obs = {cell: i for i, cell in enumerate(cells)}
    Zstar = np.zeros((ns, no))
    for (cell, _f), s in index.items():
        Zstar[s, cell_obs[cell]] = 1.0  # position observed, fuel latent
    Zstar[fail_idx, no - 1] = 1.0

    emissions, point, counts = _intervals_from(spec, Zstar, rng)
    model = Ipomdp(
        states=SpaceIndex(
            tuple(f"r{c[0]}c{c[1]}f{f}" for (c, f) in states) + ("FAIL",)
        ),
        actions=SpaceIndex(("up", "down", "left", "right")),
        observations=SpaceIndex(
            tuple(f"at_r{c[0]}c{c[1]}" for c in cells) + ("terminal",)
        ),
        transitions=TransitionKernel(T),
        emissions=emissions,
        labels=SafetyLabels(frozenset(range(len(states))), frozenset({fail_idx})),
        initial_belief=Belief.point(index[(spec.start, spec.fuel)], ns),
        horizon=spec.horizon,
        point_emission=point,
    )
    return model, PointEmission(Zstar), counts


def _generate_linefollow(spec: LineFollow, seed: int):
    spec.check()
    rng = np.random.default_rng([seed, 303])
    W = spec.width
    ns = W + 1  # positions plus one absorbing off-track state
    na = 3      # steer left / straight / steer right
    no = ns
    off = W

    T = np.zeros((ns, na, ns))
    T[off, :, off] = 1.0
    for pos in range(W):
        for a in range(na):
            aim = pos + (a - 1)
            outcomes = {aim: 1.0 - spec.drift, aim - 1: spec.drift / 2, aim + 1: spec.drift / 2}
            for t, p in outcomes.items():
                T[pos, a, t if 0 <= t < W else off] += p

    Zstar = np.zeros((ns, no))
    for pos in range(W):
        weights = spec.confusion ** np.abs(np.arange(W) - pos)
        Zstar[pos, :W] = weights / weights.sum()
    Zstar[off, off] = 1.0

    emissions, point, counts = _intervals_from(spec, Zstar, rng)
    model = Ipomdp(
        states=SpaceIndex(tuple(f"lane{p}" for p in range(W)) + ("off_track",)),
        actions=SpaceIndex(("steer_left", "straight", "steer_right")),
        observations=SpaceIndex(tuple(f"see{p}" for p in range(W)) + ("see_off",)),
        transitions=TransitionKernel(T),
        emissions=emissions,
        labels=SafetyLabels(frozenset(range(W)), frozenset({off})),
        initial_belief=Belief.point(W // 2, ns),
        horizon=spec.horizon,
        point_emission=point,
    )
    return model, PointEmission(Zstar), counts
