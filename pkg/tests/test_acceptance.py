"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured numbers (run with -s or -rA to see them inline).

Heavy Monte Carlo criteria use desk-scale benchmark configurations; every
tolerance is fixed here and nothing is calibrated at runtime.
"""

import time

import numpy as np
import pytest

from ipshield.benchio import LineFollow, ObstacleGrid, RefuelLike, generate
from ipshield.envelope import (
    BeliefEnvelope,
    InconsistentObservation,
    min_safety_score,
    propagate,
)
from ipshield.intervals import clopper_pearson
from ipshield.model import (
    Belief,
    PointEmission,
    ZeroEvidence,
    bayes_update,
    envelope_from_belief,
)
from ipshield.shields import (
    FwdSampleSet,
    build_support_shield,
    fwd_sampling_step,
    pcis_core,
    single_belief_step,
    support_allowed,
    synthesize,
)
from ipshield.simulate import (
    Controller,
    PerceptionRegime,
    ShieldSpec,
    build_shield_context,
    coarseness_diagnostic,
    make_runtime_shield,
    rollout,
    run_batch,
    sample_histories,
    sweep,
    timing_harness,
)

from conftest import build_model, exact_posterior, random_envelope, random_ipomdp, sample_box_simplex_row
from test_shields import brute_force_winning

TOL_CONTAIN = 1e-7
TOL_EXACT = 1e-9

SELECTION_SEED = 101
EVAL_SEEDS = (201, 202, 203, 204, 205)


def obstacle_bench():
    return ObstacleGrid(
        rows=2, cols=4, obstacles=((1, 2),), start=(0, 0),
        slip=0.15, class_noise=0.25, noise_budget=0.15, horizon=10,
    )


def refuel_bench():
    return RefuelLike(size=2, fuel=2, obstacles=((1, 0),), station=(1, 1),
                      start=(0, 0), slip=0.05, noise_budget=0.08, horizon=10)


def linefollow_bench():
    return LineFollow(width=5, drift=0.15, confusion=0.25, noise_budget=0.08,
                      horizon=12)


def _report(criterion: int, detail: str) -> None:
    print(f"[criterion {criterion:02d}] PASS  {detail}")


# --------------------------------------------------------------- criterion 1


def test_c01_envelope_soundness_randomized():
    """Exact posteriors under sampled per-step kernels stay in the envelope."""
    rng = np.random.default_rng(20240801)
    t0 = time.perf_counter()
    models = 0
    posteriors = 0
    while models < 1000:
        model, _ = random_ipomdp(rng, max_states=5, max_obs=4)
        env = random_envelope(rng, model.num_states)
        a = int(rng.integers(model.num_actions))
        o = int(rng.integers(model.num_observations))
        Ta = model.transitions.probs[:, a, :]
        cases = []
        for _ in range(3):
            b = sample_box_simplex_row(env.lower, env.upper, rng)
            w = rng.uniform(model.emissions.lower[:, o], model.emissions.upper[:, o])
            post = exact_posterior(b, Ta, w)
            if post is not None:
                cases.append(post)
        if not cases:
            continue
        out = propagate(env, a, o, model)
        for post in cases:
            assert np.all(post >= out.lower - TOL_CONTAIN)
            assert np.all(post <= out.upper + TOL_CONTAIN)
            posteriors += 1
        models += 1
    elapsed = time.perf_counter() - t0
    assert elapsed <= 120.0
    _report(1, f"{models} models, {posteriors} exact posteriors contained, {elapsed:.1f}s")


# --------------------------------------------------------------- criterion 2


def test_c02_charnes_cooper_exactness_closed_forms():
    """Propagated bounds hit the analytic posterior extrema."""
    eye2 = np.eye(2)[:, None, :]
    model = build_model(eye2, [[0.5, 0.5], [0.25, 0.75]], [[0.5, 0.5], [0.25, 0.75]])
    env = BeliefEnvelope(lower=np.array([0.4, 0.4]), upper=np.array([0.6, 0.6]))
    out = propagate(env, 0, 0, model)
    assert out.lower[0] == pytest.approx(4 / 7, abs=TOL_CONTAIN)
    assert out.upper[0] == pytest.approx(3 / 4, abs=TOL_CONTAIN)

    model2 = build_model(eye2, [[0.4, 0.4], [0.5, 0.5]], [[0.6, 0.6], [0.5, 0.5]])
    out2 = propagate(envelope_from_belief(Belief(np.array([0.5, 0.5]))), 0, 0, model2)
    assert out2.lower[0] == pytest.approx(0.4 / 0.9, abs=TOL_CONTAIN)
    assert out2.upper[0] == pytest.approx(0.6 / 1.1, abs=TOL_CONTAIN)
    _report(2, "prior-box and interval-column closed forms matched to 1e-7")


# --------------------------------------------------------------- criterion 3


def test_c03_degenerate_interval_collapse():
    """Point intervals and point priors reduce propagation to the Bayes filter."""
    rng = np.random.default_rng(77)
    done = 0
    worst = 0.0
    while done < 200:
        model, Zstar = random_ipomdp(rng, width_scale=0.0)
        b = Belief(rng.dirichlet(np.ones(model.num_states)))
        a = int(rng.integers(model.num_actions))
        o = int(rng.integers(model.num_observations))
        try:
            exact = bayes_update(b, a, o, model.transitions, PointEmission(Zstar))
        except ZeroEvidence:
            continue
        out = propagate(envelope_from_belief(b), a, o, model)
        worst = max(
            worst,
            float(np.max(np.abs(out.lower - exact.mass))),
            float(np.max(np.abs(out.upper - exact.mass))),
        )
        done += 1
    assert worst <= TOL_EXACT
    _report(3, f"200 degenerate models, worst |propagate - bayes| = {worst:.2e}")


# --------------------------------------------------------------- criterion 4


def test_c04_clopper_pearson_coverage_grid():
    rng = np.random.default_rng(4)
    draws = 10_000
    checked = []
    for p in (0.05, 0.3, 0.7):
        for n in (10, 50, 500):
            for alpha in (0.05, 0.1):
                ks = rng.binomial(n, p, size=draws)
                cache = {}
                hits = 0
                for k in ks:
                    k = int(k)
                    if k not in cache:
                        cache[k] = clopper_pearson(k, n, alpha)
                    lo, hi = cache[k]
                    hits += lo <= p <= hi
                cover = hits / draws
                se = np.sqrt(alpha * (1 - alpha) / draws)
                assert cover >= 1 - alpha - 3 * se, (p, n, alpha, cover)
                checked.append(cover)
    lo, hi = clopper_pearson(0, 20, 0.05)
    assert lo == 0.0
    lo, hi = clopper_pearson(20, 20, 0.05)
    assert hi == 1.0
    _report(4, f"18 grid points, min coverage {min(checked):.4f}; edge conventions exact")


# --------------------------------------------------------------- criterion 5


def _chain_scores_along(model, hist, omega, budget, kernels, rng):
    """Min safety scores per action for envelope / fwd / single along a trace."""
    Zhat = model.point_emission
    env = envelope_from_belief(model.initial_belief)
    fset = FwdSampleSet.initial(model.initial_belief, budget, kernels)
    belief = model.initial_belief
    na = omega.num_actions
    rows = []
    for step in [None] + list(hist.steps):
        if step is not None:
            a, o = step
            try:
                env = propagate(env, a, o, model)
                fset = fwd_sampling_step(fset, a, o, model, rng)
                belief = single_belief_step(belief, a, o, model, Zhat)
            except (InconsistentObservation, ZeroEvidence):
                break
        env_scores = np.array([min_safety_score(env, omega.chi[:, a]) for a in range(na)])
        fwd_scores = (fset.beliefs @ omega.chi).min(axis=0)
        single_scores = belief.mass @ omega.chi
        rows.append((env_scores, fwd_scores, single_scores))
    return rows


@pytest.mark.parametrize(
    "bench", [obstacle_bench(), refuel_bench(), linefollow_bench()],
    ids=["obstacle", "refuel", "linefollow"],
)
def test_c05_conservatism_chain(bench):
    model, _ = generate(bench, seed=13)
    _, omega = synthesize(model, 0.8)
    histories = sample_histories(model, 50, seed=29)
    steps = 0
    for idx, hist in enumerate(histories):
        rng = np.random.default_rng([29, idx])
        for env_s, fwd_s, single_s in _chain_scores_along(
            model, hist, omega, budget=150, kernels=40, rng=rng
        ):
            # scorewise dominance implies the admitted-set chain at every beta
            assert np.all(env_s <= fwd_s + TOL_CONTAIN)
            assert np.all(fwd_s <= single_s + TOL_CONTAIN)
            steps += 1
    _report(5, f"{type(bench).__name__}: chain held at {steps} replayed steps over 50 histories")


# --------------------------------------------------------------- criterion 6


def test_c06_coarseness_gap_nonnegative():
    model, _ = generate(linefollow_bench(), seed=5)
    ctx = build_shield_context(model, ShieldSpec("envelope", gamma=0.8))
    histories = sample_histories(model, 12, seed=6)
    report = coarseness_diagnostic(model, ctx.omega, histories,
                                   fwd_budget=120, fwd_kernels=25, seed=6)
    min_gap = min(report.per_step_max) if report.per_step_max else 0.0
    assert all(g >= -TOL_CONTAIN for g in report.per_step_max)
    assert all(g >= -TOL_CONTAIN for g in report.trajectory_max)

    # degenerate intervals: both abstractions collapse to the same belief
    point = np.array([[0.7, 0.3], [0.4, 0.6]])
    T = np.zeros((2, 1, 2))
    T[0, 0] = [0.8, 0.2]
    T[1, 0] = [0.3, 0.7]
    degen = build_model(T, point, point, b0=[0.6, 0.4], horizon=6, point=point)
    ctx2 = build_shield_context(degen, ShieldSpec("envelope", gamma=0.2))
    rep2 = coarseness_diagnostic(degen, ctx2.omega, sample_histories(degen, 6, seed=7),
                                 fwd_budget=1, fwd_kernels=1, seed=7)
    max_abs = max(abs(g) for g in rep2.per_step_max)
    assert max_abs <= TOL_CONTAIN
    _report(6, f"interval model min step-gap {min_gap:.2e} >= -1e-7; degenerate |gap| <= {max_abs:.2e}")


# --------------------------------------------------------------- criterion 7


def test_c07_finite_horizon_double_probability():
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 0.97
    T[0, 0, 1] = 0.03
    T[0, 1, 0] = 0.40
    T[0, 1, 1] = 0.60
    T[1, :, 1] = 1.0
    Zstar = np.array([[0.52, 0.48], [0.5, 0.5]])
    lo = np.clip(Zstar - 0.03, 0, 1)
    hi = np.clip(Zstar + 0.03, 0, 1)
    H = 3
    model = build_model(T, lo, hi, fail={1}, b0=[1.0, 0.0], horizon=H, point=Zstar)

    beta, gamma = 0.85, 0.94
    bound = (beta * gamma) ** H
    assert bound >= 0.5  # the check is non-vacuous
    core, _ = synthesize(model, gamma)
    assert model.initial_belief.support() <= core

    t0 = time.perf_counter()
    res = run_batch(
        model, ShieldSpec("envelope", beta=beta, gamma=gamma),
        Controller("random"), PerceptionRegime("uniform"), 2000, seed=11,
    )
    elapsed = time.perf_counter() - t0
    # staying safe through H steps == the safe outcome here: the only
    # non-core state is the fail state itself
    se = np.sqrt(bound * (1 - bound) / 2000)
    assert res.safe_rate >= bound - 3 * se
    assert elapsed <= 300.0
    _report(7, f"Pr[safe over {H}] = {res.safe_rate:.4f} >= {bound:.4f} - 3se ({elapsed:.1f}s)")


# --------------------------------------------------------------- criterion 8


def test_c08_support_shield_oracle_and_degeneracy():
    rng = np.random.default_rng(8)
    compared = 0
    for _ in range(25):
        model, Zstar = random_ipomdp(rng, max_states=4, max_obs=3)
        fail = {model.num_states - 1}
        model = build_model(
            model.transitions.probs, model.emissions.lower, model.emissions.upper,
            fail=fail, b0=model.initial_belief.mass, point=Zstar,
        )
        region = build_support_shield(model, model.point_emission)
        brute = brute_force_winning(model, model.point_emission)
        assert region.supports == frozenset(u for u in region.reachable if u in brute)
        compared += 1

    # engineered alias: two indistinguishable states need opposite actions
    T = np.zeros((3, 2, 3))
    T[0, 0, 0] = 1.0
    T[0, 1, 2] = 1.0
    T[1, 0, 2] = 1.0
    T[1, 1, 1] = 1.0
    T[2, :, 2] = 1.0
    aliased = build_model(
        T, np.zeros((3, 1)), np.ones((3, 1)),
        fail={2}, b0=[0.5, 0.5, 0.0], point=np.array([[1.0], [1.0], [1.0]]),
    )
    region = build_support_shield(aliased, aliased.point_emission)
    assert region.supports == frozenset()

    spec = ShieldSpec("support", beta=0.5, gamma=0.9)
    ctx = build_shield_context(aliased, spec)
    shield = make_runtime_shield(aliased, spec, ctx, np.random.default_rng(0))
    rec = rollout(aliased, shield, _rand(aliased), PerceptionRegime("uniform"),
                  np.random.default_rng(1))
    assert rec.outcome == "stuck" and rec.actions == ()
    _report(8, f"{compared} random models matched brute force; aliased fixture has empty region and sticks at t=0")


def _rand(model):
    from ipshield.simulate import _RandomPolicy

    return _RandomPolicy(model.num_actions, np.random.default_rng(2))


# --------------------------------------------------------------- criterion 9


@pytest.fixture(scope="module")
def obstacle_model():
    model, _ = generate(obstacle_bench(), seed=1)
    return model


def _eval_at(model, spec, ctx, episodes=200, seeds=EVAL_SEEDS):
    rates = []
    for s in seeds:
        rates.append(run_batch(
            model, spec, Controller("random"), PerceptionRegime("uniform"),
            episodes, seed=s, threads=1, ctx=ctx,
        ))
    fail = float(np.mean([r.fail_rate for r in rates]))
    stuck = float(np.mean([r.stuck_rate for r in rates]))
    incons = float(np.mean([r.inconsistent_rate for r in rates]))
    return fail, stuck, incons


def test_c09_directional_low_failure_structure(obstacle_model):
    model = obstacle_model
    ctl = Controller("random")
    regime = PerceptionRegime("uniform")
    gamma = 0.8
    t0 = time.perf_counter()

    ctxs = {k: build_shield_context(model, ShieldSpec(k, gamma=gamma))
            for k in ("observation", "single", "envelope")}
    sweeps = {
        k: sweep(model, ShieldSpec(k, gamma=gamma), ctl, regime,
                 episodes=200, seed=SELECTION_SEED, ctx=ctxs[k])
        for k in ctxs
    }
    env_beta = sweeps["envelope"].select_low_failure().beta
    single_beta = sweeps["single"].select_low_failure().beta

    env_fail, env_stuck, env_inc = _eval_at(
        model, ShieldSpec("envelope", beta=env_beta, gamma=gamma), ctxs["envelope"])
    sb_fail, sb_stuck, sb_inc = _eval_at(
        model, ShieldSpec("single", beta=single_beta, gamma=gamma), ctxs["single"])
    assert env_inc == 0.0 and sb_inc == 0.0
    assert env_fail <= sb_fail

    # observation operating point with fail rate closest to single-belief's
    obs_rows = sweeps["observation"].rows
    closest = min(obs_rows, key=lambda r: (abs(r.fail_rate - sb_fail), r.beta))
    obs_fail, obs_stuck, obs_inc = _eval_at(
        model, ShieldSpec("observation", beta=closest.beta, gamma=gamma),
        ctxs["observation"])
    assert obs_inc == 0.0
    assert obs_stuck > sb_stuck

    elapsed = time.perf_counter() - t0
    _report(9, (
        f"envelope fail {env_fail:.3f} (beta {env_beta}) <= single fail {sb_fail:.3f} "
        f"(beta {single_beta}); observation stuck {obs_stuck:.3f} > single stuck "
        f"{sb_stuck:.3f} at matched fail {obs_fail:.3f} ({elapsed:.0f}s, 200x5 episodes)"
    ))


# -------------------------------------------------------------- criterion 10


def test_c10_timing_ordering():
    # a 4x4 grid: large enough that per-step costs separate cleanly
    model, _ = generate(
        ObstacleGrid(rows=4, cols=4, obstacles=((1, 1), (2, 3)), slip=0.1,
                     class_noise=0.2, noise_budget=0.1, horizon=12),
        seed=2,
    )
    specs = [
        ShieldSpec("observation", beta=0.8, gamma=0.8),
        ShieldSpec("single", beta=0.8, gamma=0.8),
        ShieldSpec("fwd", beta=0.8, gamma=0.8),       # default budget 500 x 100
        ShieldSpec("envelope", beta=0.8, gamma=0.8),
    ]
    report = timing_harness(model, specs, Controller("random"),
                            PerceptionRegime("uniform"), episodes=10, seed=33)
    means = {k: report[k]["mean_us"] for k in report}
    assert means["observation"] < means["single"] < means["fwd"] < means["envelope"]
    _report(10, "mean per-step latency (us): " + ", ".join(
        f"{k}={means[k]:.1f}" for k in ("observation", "single", "fwd", "envelope")
    ))
