"""Closed-loop Monte Carlo evaluation of runtime shields.

Episodes are deterministic given (seed, episode index): every random draw of
episode i comes from its own generator seeded with [seed, i], so batch results
do not depend on scheduling.  Outcomes are classified exactly as fail (a fail
state is reached), stuck (the shield blocks every action), safe (neither
within the horizon); shield-state errors such as an impossible observation
are surfaced as a separate "inconsistent" diagnostic count, never folded into
stuck.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .envelope import InconsistentObservation, PropagationConfig
from .model import Belief, History, Ipomdp, PointEmission, ZeroEvidence, envelope_from_belief
from . import shields as sh

OUTCOME_FAIL = "fail"
OUTCOME_STUCK = "stuck"
OUTCOME_SAFE = "safe"
OUTCOME_INCONSISTENT = "inconsistent"

SHIELD_KINDS = ("observation", "single", "envelope", "fwd", "support")


class InfeasibleRow(Exception):
    """The interval row cannot intersect the probability simplex."""


# ----------------------------------------------------------- row sampling


def _repair_block(u: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Retarget box points onto the simplex along the trailing axis.

    The deficit 1 - sum(u) is spread proportionally to the remaining slack
    (headroom toward upper for a deficit, toward lower for a surplus), which
    stays inside the box and lands on the simplex up to float dust.
    """
    for _ in range(80):
        delta = 1.0 - u.sum(axis=-1)
        if np.all(np.abs(delta) <= 1e-12):
            break
        slack = np.where(delta[..., None] > 0, upper - u, u - lower)
        total = slack.sum(axis=-1)
        scale = np.where(total > 0, delta / np.maximum(total, 1e-300), 0.0)
        u = np.clip(u + scale[..., None] * slack, lower, upper)
    return u


def sample_admissible_rows(
    lower: np.ndarray, upper: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draws in the box, repaired onto the simplex."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.sum() > 1.0 + 1e-9 or upper.sum() < 1.0 - 1e-9:
        raise InfeasibleRow(
            f"box row sums [{lower.sum():.6g}, {upper.sum():.6g}] exclude 1"
        )
    u = rng.uniform(lower, upper, size=(count, lower.shape[0]))
    return _repair_block(u, lower[None, :], upper[None, :])


def sample_admissible_row(
    lower: np.ndarray, upper: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    return sample_admissible_rows(lower, upper, 1, rng)[0]


def sample_kernels(
    lower: np.ndarray, upper: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """A (count, states, observations) block of admissible kernels: every
    state row is an in-box distribution."""
    lo_sums = lower.sum(axis=1)
    hi_sums = upper.sum(axis=1)
    bad = np.flatnonzero((lo_sums > 1.0 + 1e-9) | (hi_sums < 1.0 - 1e-9))
    if bad.size:
        raise InfeasibleRow(f"box rows for states {bad.tolist()} exclude the simplex")
    u = rng.uniform(lower[None, :, :], upper[None, :, :], size=(count,) + lower.shape)
    return _repair_block(u, lower[None, :, :], upper[None, :, :])


# --------------------------------------------------------------- regimes


@dataclass(frozen=True)
class PerceptionRegime:
    """How emission probabilities are realized during evaluation.

    uniform: a fresh admissible row is drawn for the realized state at every
    step.  adversarial: one fixed kernel (found offline) is used throughout.
    """

    kind: str = "uniform"
    kernel: Optional[PointEmission] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "adversarial"):
            raise ValueError(f"unknown regime kind {self.kind!r}")
        if self.kind == "adversarial" and self.kernel is None:
            raise ValueError("adversarial regime needs a kernel")

    def observe(self, model: Ipomdp, state: int, rng: np.random.Generator) -> int:
        if self.kind == "adversarial":
            row = self.kernel.probs[state]
        else:
            row = sample_admissible_rows(
                model.emissions.lower[state], model.emissions.upper[state], 1, rng
            )[0]
            row = row / row.sum()
        return int(rng.choice(row.shape[0], p=row))


# ------------------------------------------------------------ controllers


@dataclass(frozen=True)
class Controller:
    """Stand-in proposal policies for the closed loop.

    random proposes uniformly; greedy_core proposes the action that keeps the
    most of its tracked point-estimate belief mass inside the shield core;
    tabular_q is a small observation-indexed Q-table trained up front.
    """

    kind: str = "random"
    train_episodes: int = 200
    q_alpha: float = 0.2
    q_discount: float = 0.95
    q_epsilon: float = 0.2

    def __post_init__(self):
        if self.kind not in ("random", "greedy_core", "tabular_q"):
            raise ValueError(f"unknown controller kind {self.kind!r}")


class _RandomPolicy:
    def __init__(self, num_actions: int, rng: np.random.Generator):
        self.na = num_actions
        self.rng = rng

    def propose(self, obs: Optional[int], t: int) -> int:
        return int(self.rng.integers(self.na))

    def notify(self, a: int, o: Optional[int]) -> None:
        pass


class _GreedyCore:
    """Tracks a point-estimate belief and aims transition mass at the core."""

    def __init__(self, model: Ipomdp, core: frozenset[int], Zhat: Optional[PointEmission]):
        self.model = model
        self.Zhat = Zhat
        self.core_mask = np.zeros(model.num_states)
        for s in core:
            self.core_mask[s] = 1.0
        self.belief = model.initial_belief.mass.copy()

    def propose(self, obs: Optional[int], t: int) -> int:
        T = self.model.transitions.probs
        stay = np.einsum("s,sat->a", self.belief, T * self.core_mask[None, None, :])
        return int(np.argmax(stay))

    def notify(self, a: int, o: Optional[int]) -> None:
        if o is None:
            return
        y = self.belief @ self.model.transitions.probs[:, a, :]
        if self.Zhat is not None:
            u = y * self.Zhat.column(o)
            total = u.sum()
            if total > 1e-12:
                self.belief = u / total
                return
        self.belief = y


class _TabularQ:
    def __init__(self, table: np.ndarray):
        self.table = table
        self.last = table.shape[0] - 1  # virtual "no observation yet" row

    def propose(self, obs: Optional[int], t: int) -> int:
        row = self.table[self.last if obs is None else obs]
        return int(np.argmax(row))

    def notify(self, a: int, o: Optional[int]) -> None:
        pass


def _train_q_table(model: Ipomdp, ctl: Controller, rng: np.random.Generator) -> np.ndarray:
    """Q-learning over observation summaries on the unshielded uniform loop."""
    no, na = model.num_observations, model.num_actions
    q = np.zeros((no + 1, na))
    regime = PerceptionRegime("uniform")
    fails = model.labels.fail_states
    for _ in range(ctl.train_episodes):
        s = int(rng.choice(model.num_states, p=model.initial_belief.mass))
        obs_idx = no
        for t in range(model.horizon):
            if rng.random() < ctl.q_epsilon:
                a = int(rng.integers(na))
            else:
                a = int(np.argmax(q[obs_idx]))
            s2 = int(rng.choice(model.num_states, p=model.transitions.probs[s, a]))
            if s2 in fails:
                q[obs_idx, a] += ctl.q_alpha * (-1.0 - q[obs_idx, a])
                break
            reward = 0.01 + (1.0 if t == model.horizon - 1 else 0.0)
            o = regime.observe(model, s2, rng)
            target = reward + ctl.q_discount * q[o].max()
            q[obs_idx, a] += ctl.q_alpha * (target - q[obs_idx, a])
            s, obs_idx = s2, o
    return q


# -------------------------------------------------------- runtime shields


@dataclass(frozen=True)
class ShieldSpec:
    """Which runtime shield to run and with what knobs."""

    kind: str
    beta: float = 0.8
    gamma: float = 0.9
    budget: int = 500
    kernels_per_step: int = 100
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    support_cap: int = sh.SUPPORT_CAP_DEFAULT

    def __post_init__(self):
        if self.kind not in SHIELD_KINDS:
            raise ValueError(f"unknown shield kind {self.kind!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass
class ShieldContext:
    """Shared read-only data built once per batch: the state shield, the
    point kernel, and (for the support shield) the offline winning region."""

    omega: sh.PerfectShield
    core: frozenset[int]
    Zhat: Optional[PointEmission]
    region: Optional[sh.SupportWinningRegion] = None
    env_cache: Optional[dict] = None


def build_shield_context(
    model: Ipomdp,
    spec: ShieldSpec,
    share_cache: bool = True,
    omega: Optional[sh.PerfectShield] = None,
    core: Optional[frozenset[int]] = None,
) -> ShieldContext:
    if omega is None:
        core, omega = sh.synthesize(model, spec.gamma)
    elif core is None:
        core = frozenset(s for s, acts in enumerate(omega.allowed) if acts)
    Zhat = model.point_emission
    region = None
    if spec.kind == "support":
        if Zhat is None:
            raise ValueError("support shield needs a point-estimate kernel")
        region = sh.build_support_shield(model, Zhat, cap=spec.support_cap)
    if spec.kind in ("observation", "single") and Zhat is None:
        raise ValueError(f"{spec.kind} shield needs a point-estimate kernel")
    cache: Optional[dict] = {} if (share_cache and spec.kind == "envelope") else None
    return ShieldContext(omega=omega, core=core, Zhat=Zhat, region=region, env_cache=cache)


class _ObservationShield:
    def __init__(self, model, spec, ctx):
        self.model, self.spec, self.ctx = model, spec, ctx
        self.last_obs: Optional[int] = None

    def admitted(self) -> frozenset[int]:
        if self.last_obs is None:
            return sh.single_belief_allowed(
                self.model.initial_belief, self.ctx.omega, self.spec.beta
            )
        return sh.observation_allowed(
            self.last_obs, self.ctx.Zhat, self.ctx.omega, self.spec.beta
        )

    def observe(self, a: int, o: int) -> None:
        self.last_obs = o


class _SingleBeliefShield:
    def __init__(self, model, spec, ctx):
        self.model, self.spec, self.ctx = model, spec, ctx
        self.belief = model.initial_belief

    def admitted(self) -> frozenset[int]:
        return sh.single_belief_allowed(self.belief, self.ctx.omega, self.spec.beta)

    def observe(self, a: int, o: int) -> None:
        self.belief = sh.single_belief_step(self.belief, a, o, self.model, self.ctx.Zhat)


class _EnvelopeShield:
    def __init__(self, model, spec, ctx):
        self.model, self.spec, self.ctx = model, spec, ctx
        self.env = envelope_from_belief(model.initial_belief)

    def admitted(self) -> frozenset[int]:
        return sh.envelope_allowed(self.env, self.ctx.omega, self.spec.beta)

    def observe(self, a: int, o: int) -> None:
        cache = self.ctx.env_cache
        if cache is None:
            self.env = sh.envelope_shield_step(self.env, a, o, self.model, self.spec.propagation)
            return
        key = (self.env.lower.tobytes(), self.env.upper.tobytes(), a, o)
        hit = cache.get(key)
        if hit is None:
            hit = sh.envelope_shield_step(self.env, a, o, self.model, self.spec.propagation)
            cache[key] = hit
        self.env = hit


class _FwdShield:
    def __init__(self, model, spec, ctx, rng):
        self.model, self.spec, self.ctx, self.rng = model, spec, ctx, rng
        self.fset = sh.FwdSampleSet.initial(
            model.initial_belief, spec.budget, spec.kernels_per_step
        )

    def admitted(self) -> frozenset[int]:
        return sh.fwd_sampling_allowed(self.fset, self.ctx.omega, self.spec.beta)

    def observe(self, a: int, o: int) -> None:
        self.fset = sh.fwd_sampling_step(self.fset, a, o, self.model, self.rng)


class _SupportShield:
    def __init__(self, model, spec, ctx):
        self.model, self.spec, self.ctx = model, spec, ctx
        self.support = model.initial_belief.support()

    def admitted(self) -> frozenset[int]:
        return sh.support_allowed(
            self.support, self.ctx.region, self.model.num_actions, self.model.num_observations
        )

    def observe(self, a: int, o: int) -> None:
        nxt = self.ctx.region.successor(self.support, a, o)
        if nxt is None:
            raise ZeroEvidence(
                f"observation {o} impossible from support {sorted(self.support)}"
            )
        self.support = nxt


def make_runtime_shield(model: Ipomdp, spec: ShieldSpec, ctx: ShieldContext, rng):
    if spec.kind == "observation":
        return _ObservationShield(model, spec, ctx)
    if spec.kind == "single":
        return _SingleBeliefShield(model, spec, ctx)
    if spec.kind == "envelope":
        return _EnvelopeShield(model, spec, ctx)
    if spec.kind == "fwd":
        return _FwdShield(model, spec, ctx, rng)
    return _SupportShield(model, spec, ctx)


def shield_state_snapshot(shield) -> dict:
    """JSON-ready view of a runtime shield's internal state, for debugging.

    Floats are repr strings, matching the model file conventions.
    """
    def fs(values):
        return [repr(float(v)) for v in np.asarray(values).ravel()]

    if isinstance(shield, _ObservationShield):
        return {"kind": "observation", "last_obs": shield.last_obs}
    if isinstance(shield, _SingleBeliefShield):
        return {"kind": "single", "belief": fs(shield.belief.mass)}
    if isinstance(shield, _EnvelopeShield):
        return {
            "kind": "envelope",
            "lower": fs(shield.env.lower),
            "upper": fs(shield.env.upper),
        }
    if isinstance(shield, _FwdShield):
        return {
            "kind": "fwd",
            "beliefs": [fs(row) for row in shield.fset.beliefs],
            "tracks_point": shield.fset.tracks_point,
        }
    if isinstance(shield, _SupportShield):
        return {"kind": "support", "support": sorted(shield.support)}
    raise TypeError(f"not a runtime shield: {type(shield).__name__}")


def _make_controller(model: Ipomdp, ctl: Controller, ctx: ShieldContext, rng, q_table):
    if ctl.kind == "random":
        return _RandomPolicy(model.num_actions, rng)
    if ctl.kind == "greedy_core":
        return _GreedyCore(model, ctx.core, ctx.Zhat)
    return _TabularQ(q_table)


# ----------------------------------------------------------------- rollout


@dataclass(frozen=True)
class RolloutRecord:
    outcome: str
    states: tuple[int, ...]
    actions: tuple[int, ...]
    observations: tuple[int, ...]
    admitted_sizes: tuple[int, ...]
    step_latency_ns: tuple[int, ...]

    def history(self) -> History:
        return History(tuple(zip(self.actions, self.observations)))


def rollout(
    model: Ipomdp,
    shield,
    controller,
    regime: PerceptionRegime,
    rng: np.random.Generator,
) -> RolloutRecord:
    """One shielded closed-loop episode.

    Per step: the shield's admitted set filters the controller's proposal
    (blocked proposals are replaced by a uniformly random admitted action),
    the latent state advances, fail states end the episode, otherwise the
    perception regime emits an observation and the shield ingests it.
    """
    fails = model.labels.fail_states
    s = int(rng.choice(model.num_states, p=model.initial_belief.mass))
    states = [s]
    actions: list[int] = []
    observations: list[int] = []
    sizes: list[int] = []
    latencies: list[int] = []
    pending_ns = 0
    outcome = OUTCOME_SAFE
    last_obs: Optional[int] = None

    for t in range(model.horizon):
        t0 = time.perf_counter_ns()
        try:
            adm = shield.admitted()
        except (ZeroEvidence, InconsistentObservation):
            outcome = OUTCOME_INCONSISTENT
            break
        latencies.append(pending_ns + time.perf_counter_ns() - t0)
        pending_ns = 0
        sizes.append(len(adm))
        if not adm:
            outcome = OUTCOME_STUCK
            break
        proposal = controller.propose(last_obs, t)
        if proposal in adm:
            a = proposal
        else:
            choices = sorted(adm)
            a = choices[int(rng.integers(len(choices)))]
        actions.append(a)
        s = int(rng.choice(model.num_states, p=model.transitions.probs[s, a]))
        states.append(s)
        if s in fails:
            outcome = OUTCOME_FAIL
            break
        if t == model.horizon - 1:
            break
        o = regime.observe(model, s, rng)
        observations.append(o)
        controller.notify(a, o)
        last_obs = o
        t0 = time.perf_counter_ns()
        try:
            shield.observe(a, o)
        except (ZeroEvidence, InconsistentObservation):
            outcome = OUTCOME_INCONSISTENT
            break
        pending_ns = time.perf_counter_ns() - t0

    return RolloutRecord(
        outcome=outcome,
        states=tuple(states),
        actions=tuple(actions),
        observations=tuple(observations),
        admitted_sizes=tuple(sizes),
        step_latency_ns=tuple(latencies),
    )


# ------------------------------------------------------------------ batches


@dataclass(frozen=True)
class BatchResult:
    shield: str
    beta: float
    regime: str
    episodes: int
    fail_rate: float
    stuck_rate: float
    safe_rate: float
    inconsistent_rate: float
    mean_latency_us: float
    median_latency_us: float

    def rates(self) -> tuple[float, float, float]:
        return self.fail_rate, self.stuck_rate, self.safe_rate


def _episode_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, i])


def _run_episode_range(
    model, spec, ctl, regime, seed, start, stop, ctx=None, q_table=None
) -> tuple[list[str], list[int]]:
    if ctx is None:
        ctx = build_shield_context(model, spec)
    if q_table is None and ctl.kind == "tabular_q":
        q_table = _train_q_table(model, ctl, np.random.default_rng([seed, 999983]))
    outcomes: list[str] = []
    latencies: list[int] = []
    for i in range(start, stop):
        rng = _episode_rng(seed, i)
        shield = make_runtime_shield(model, spec, ctx, rng)
        controller = _make_controller(model, ctl, ctx, rng, q_table)
        rec = rollout(model, shield, controller, regime, rng)
        outcomes.append(rec.outcome)
        latencies.extend(rec.step_latency_ns)
    return outcomes, latencies


def run_batch(
    model: Ipomdp,
    spec: ShieldSpec,
    controller: Controller,
    regime: PerceptionRegime,
    episodes: int,
    seed: int,
    threads: Optional[int] = None,
    ctx: Optional[ShieldContext] = None,
) -> BatchResult:
    """Independent episodes with per-episode substreams derived from (seed, i).

    Results are identical however the episode range is split across workers;
    IPSHIELD_THREADS (0 = auto) caps the pool when `threads` is not given.
    A prebuilt context may be shared across batches of the same model (the
    envelope cache inside it is threshold-independent); with a worker pool
    each worker rebuilds its own.
    """
    if threads is None:
        threads = int(os.environ.get("IPSHIELD_THREADS", "1") or 0)
    if threads == 0:
        threads = os.cpu_count() or 1
    threads = max(1, min(threads, episodes or 1))

    if episodes == 0:
        return BatchResult(
            spec.kind, spec.beta, regime.kind, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        )

    if ctx is None or threads > 1:
        ctx = build_shield_context(model, spec)
    q_table = (
        _train_q_table(model, controller, np.random.default_rng([seed, 999983]))
        if controller.kind == "tabular_q"
        else None
    )
    if threads == 1:
        outcomes, latencies = _run_episode_range(
            model, spec, controller, regime, seed, 0, episodes, ctx, q_table
        )
    else:
        bounds = np.linspace(0, episodes, threads + 1, dtype=int)
        outcomes = []
        latencies = []
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = [
                pool.submit(
                    _run_episode_range, model, spec, controller, regime, seed,
                    int(lo), int(hi),
                )
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for fut in futs:
                oc, lat = fut.result()
                outcomes.extend(oc)
                latencies.extend(lat)

    n = len(outcomes)
    counts = {k: outcomes.count(k) for k in
              (OUTCOME_FAIL, OUTCOME_STUCK, OUTCOME_SAFE, OUTCOME_INCONSISTENT)}
    lat = np.asarray(latencies, dtype=float) / 1000.0  # ns -> us
    return BatchResult(
        shield=spec.kind,
        beta=spec.beta,
        regime=regime.kind,
        episodes=n,
        fail_rate=counts[OUTCOME_FAIL] / n,
        stuck_rate=counts[OUTCOME_STUCK] / n,
        safe_rate=counts[OUTCOME_SAFE] / n,
        inconsistent_rate=counts[OUTCOME_INCONSISTENT] / n,
        mean_latency_us=float(lat.mean()) if lat.size else 0.0,
        median_latency_us=float(np.median(lat)) if lat.size else 0.0,
    )


DEFAULT_BETAS = (0.50, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[BatchResult, ...]

    def select_low_failure(self) -> BatchResult:
        """Smallest fail rate, then smallest stuck rate, then lowest beta."""
        key = [(r.fail_rate, r.stuck_rate, i) for i, r in enumerate(self.rows)]
        return self.rows[key.index(min(key))]

    def select_max_safe(self) -> BatchResult:
        """Largest safe rate, then lower fail, then lower stuck, then lowest beta."""
        key = [(-r.safe_rate, r.fail_rate, r.stuck_rate, i) for i, r in enumerate(self.rows)]
        return self.rows[key.index(min(key))]


def sweep(
    model: Ipomdp,
    spec: ShieldSpec,
    controller: Controller,
    regime: PerceptionRegime,
    betas=DEFAULT_BETAS,
    episodes: int = 200,
    seed: int = 0,
    threads: Optional[int] = None,
    ctx: Optional[ShieldContext] = None,
) -> SweepResult:
    """One batch per threshold, sharing episode substreams (and the shield
    context, including the envelope cache) across thresholds."""
    if ctx is None and (threads is None or threads == 1):
        ctx = build_shield_context(model, spec)
    rows = []
    for beta in betas:
        rows.append(
            run_batch(
                model, replace(spec, beta=float(beta)), controller, regime,
                episodes, seed, threads, ctx=ctx,
            )
        )
    return SweepResult(rows=tuple(rows))


# --------------------------------------------------------------- adversary


@dataclass(frozen=True)
class CeConfig:
    population: int = 30
    elite_fraction: float = 0.2
    iterations: int = 10
    rollouts_per_candidate: int = 50
    spread_floor: float = 1e-3

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not 0.0 < self.elite_fraction < 1.0:
            raise ValueError("elite_fraction must lie in (0, 1)")
        if self.rollouts_per_candidate < 1:
            raise ValueError("rollouts_per_candidate must be >= 1")


def _repair_rows(raw: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Clip a proposed kernel into the box, then retarget each row onto the
    simplex by proportional slack, exactly like the uniform row sampler."""
    return _repair_block(np.clip(raw, lower, upper), lower, upper)


def cross_entropy_adversary(
    model: Ipomdp,
    spec: ShieldSpec,
    controller: Controller,
    cfg: CeConfig,
    seed: int,
    threads: Optional[int] = None,
) -> PointEmission:
    """Search the interval box for a fixed kernel minimizing safe completions.

    Every candidate in every iteration is scored on the same rollout
    substreams, so scores are paired; the point-estimate kernel (or the box
    midpoint) seeds the population and the best kernel ever scored is
    returned.
    """
    lo, hi = model.emissions.lower, model.emissions.upper
    if model.point_emission is not None:
        mean = model.point_emission.probs.copy()
    else:
        mean = _repair_rows((lo + hi) / 2.0, lo, hi)
    spread = np.maximum((hi - lo) / 2.0, cfg.spread_floor)
    score_seed = int(np.random.default_rng([seed, 4242]).integers(2 ** 31))

    def score(kernel: np.ndarray) -> float:
        regime = PerceptionRegime("adversarial", PointEmission(kernel))
        res = run_batch(
            model, spec, controller, regime, cfg.rollouts_per_candidate,
            score_seed, threads,
        )
        return 1.0 - res.safe_rate

    best_kernel = _repair_rows(mean, lo, hi)
    best_score = score(best_kernel)
    n_elite = max(1, int(np.ceil(cfg.elite_fraction * cfg.population)))
    for it in range(cfg.iterations):
        rng = np.random.default_rng([seed, 31337, it])
        cands = [
            _repair_rows(rng.normal(mean, spread), lo, hi)
            for _ in range(cfg.population)
        ]
        scores = np.array([score(k) for k in cands])
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_score:
            best_score = float(scores[order[0]])
            best_kernel = cands[int(order[0])]
        elites = np.stack([cands[int(i)] for i in order[:n_elite]])
        mean = elites.mean(axis=0)
        spread = np.maximum(elites.std(axis=0), cfg.spread_floor)
    return PointEmission(best_kernel)


# ------------------------------------------------------------- diagnostics


def sample_histories(
    model: Ipomdp,
    episodes: int,
    seed: int,
    regime: Optional[PerceptionRegime] = None,
) -> list[History]:
    """Unshielded random-policy traces used for replay-style diagnostics."""
    regime = regime or PerceptionRegime("uniform")
    fails = model.labels.fail_states
    out = []
    for i in range(episodes):
        rng = _episode_rng(seed, i)
        s = int(rng.choice(model.num_states, p=model.initial_belief.mass))
        steps = []
        for t in range(model.horizon):
            a = int(rng.integers(model.num_actions))
            s = int(rng.choice(model.num_states, p=model.transitions.probs[s, a]))
            if s in fails:
                break
            o = regime.observe(model, s, rng)
            steps.append((a, o))
        out.append(History(tuple(steps)))
    return out


def replay_admitted(
    model: Ipomdp,
    spec: ShieldSpec,
    history: History,
    seed: int = 0,
    ctx: Optional[ShieldContext] = None,
) -> list[frozenset[int]]:
    """Admitted sets along a fixed action-observation trace (including the
    initial step), truncated where the shield state becomes inconsistent."""
    history.check_against(model)
    ctx = ctx or build_shield_context(model, spec)
    shield = make_runtime_shield(model, spec, ctx, _episode_rng(seed, 0))
    admitted = []
    try:
        admitted.append(shield.admitted())
        for a, o in history.steps:
            shield.observe(a, o)
            admitted.append(shield.admitted())
    except (ZeroEvidence, InconsistentObservation):
        pass
    return admitted


@dataclass(frozen=True)
class GapReport:
    """Per-step and per-trajectory slack between the sampled inner belief set
    and the propagated outer envelope, measured through the safety score."""

    per_step_mean: tuple[float, ...]
    per_step_max: tuple[float, ...]
    trajectory_max: tuple[float, ...]
    trajectory_mean: tuple[float, ...]

    def summary(self) -> dict:
        tm = np.asarray(self.trajectory_max)
        tmean = np.asarray(self.trajectory_mean)
        if tm.size == 0:
            return {"trajectories": 0}
        return {
            "trajectories": int(tm.size),
            "max_gap_mean": float(tm.mean()),
            "max_gap_median": float(np.median(tm)),
            "max_gap_p90": float(np.quantile(tm, 0.9)),
            "mean_gap_mean": float(tmean.mean()),
            "mean_gap_median": float(np.median(tmean)),
        }


def coarseness_diagnostic(
    model: Ipomdp,
    omega: sh.PerfectShield,
    histories: list[History],
    fwd_budget: int = 500,
    fwd_kernels: int = 100,
    env_cfg: Optional[PropagationConfig] = None,
    seed: int = 0,
) -> GapReport:
    """gap(a) = min safety score over the sampled set minus the envelope's.

    The sampled set under-approximates and the envelope over-approximates the
    same reachable beliefs, so every gap is nonnegative up to LP tolerance;
    its size measures how loose the envelope abstraction is on that history.
    """
    env_cfg = env_cfg or PropagationConfig()
    na = omega.num_actions
    step_gaps: dict[int, list[float]] = {}
    traj_max: list[float] = []
    traj_mean: list[float] = []
    for h_idx, hist in enumerate(histories):
        rng = np.random.default_rng([seed, 5150, h_idx])
        env = envelope_from_belief(model.initial_belief)
        fset = sh.FwdSampleSet.initial(model.initial_belief, fwd_budget, fwd_kernels)
        per_step: list[float] = []
        per_step_mean: list[float] = []
        for t, (a, o) in enumerate(list(hist.steps) + [(None, None)]):
            fwd_scores = (fset.beliefs @ omega.chi).min(axis=0)
            env_scores = np.array(
                [sh.min_safety_score(env, omega.chi[:, i]) for i in range(na)]
            )
            gaps = fwd_scores - env_scores
            step_gaps.setdefault(t, []).extend(float(g) for g in gaps)
            per_step.append(float(gaps.max()))
            per_step_mean.append(float(gaps.mean()))
            if a is None:
                break
            try:
                env = sh.envelope_shield_step(env, a, o, model, env_cfg)
                fset = sh.fwd_sampling_step(fset, a, o, model, rng)
            except (InconsistentObservation, ZeroEvidence):
                break
        if per_step:
            traj_max.append(max(per_step))
            traj_mean.append(float(np.mean(per_step_mean)))
    steps = sorted(step_gaps)
    return GapReport(
        per_step_mean=tuple(float(np.mean(step_gaps[t])) for t in steps),
        per_step_max=tuple(float(np.max(step_gaps[t])) for t in steps),
        trajectory_max=tuple(traj_max),
        trajectory_mean=tuple(traj_mean),
    )


def timing_harness(
    model: Ipomdp,
    specs: list[ShieldSpec],
    controller: Controller,
    regime: PerceptionRegime,
    episodes: int,
    seed: int,
) -> dict[str, dict[str, float]]:
    """Mean/median per-step shield latency per shield kind, from the same
    rollout protocol; controller, environment, and observation sampling are
    outside the timed sections.  The envelope cache is disabled so repeated
    states do not flatter the propagation cost."""
    out: dict[str, dict[str, float]] = {}
    for spec in specs:
        ctx = build_shield_context(model, spec, share_cache=False)
        res = run_batch(
            model, spec, controller, regime, episodes, seed, threads=1, ctx=ctx
        )
        out[spec.kind] = {
            "mean_us": res.mean_latency_us,
            "median_us": res.median_latency_us,
            "episodes": float(res.episodes),
        }
    return out
