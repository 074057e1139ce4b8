"""Command-line surface: generate benchmarks, learn intervals, synthesize
shields, and run the evaluation protocol end to end.

Every run writes its primary output plus a manifest (config echo, package
versions, seed) beside it.  Primary outputs are byte-stable for a fixed
command and seed; manifests carry a timestamp and are excluded from that
guarantee.  Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, benchio
from .envelope import PropagationConfig
from .intervals import AlphaBudget, build_emission_intervals
from .model import PointEmission
from .shields import EmptyCore, SupportExplosion, synthesize
from .simulate import (
    DEFAULT_BETAS,
    CeConfig,
    Controller,
    PerceptionRegime,
    ShieldSpec,
    build_shield_context,
    coarseness_diagnostic,
    cross_entropy_adversary,
    run_batch,
    sample_histories,
    sweep,
    timing_harness,
)

CSV_COLUMNS = [
    "shield", "beta", "regime", "episodes",
    "fail_rate", "stuck_rate", "safe_rate", "mean_latency_us",
]


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ipshield",
        description="interval-POMDP shielding: models, intervals, shields, evaluation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="model file (JSON)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("generate", help="write a synthetic benchmark model")
    sp.add_argument("--bench", choices=("obstacle", "refuel", "linefollow"), required=True)
    sp.add_argument("--samples", type=int, default=0, help="labeled samples per state (0 = noise-budget intervals)")
    sp.add_argument("--noise", type=float, default=None, help="interval half-width around the true kernel")
    sp.add_argument("--alpha", type=float, default=0.1, help="total failure budget for counts-derived intervals")
    sp.add_argument("--horizon", type=int, default=None)
    common(sp, model=False)

    sp = sub.add_parser("validate", help="check a model file against every invariant")
    sp.add_argument("--model", required=True)

    sp = sub.add_parser("intervals", help="rebuild emission intervals from a counts-bearing model file")
    sp.add_argument("--counts", default=None,
                    help="counts-bearing model file (alias for --model)")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--allocation", choices=("uniform",), default="uniform")
    sp.add_argument("--combiner", choices=("union", "independence"), default="union")
    sp.add_argument("--model", default=None, help="model file (JSON)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("synth-shield", help="synthesize the invariant core and state shield")
    sp.add_argument("--gamma", type=float, required=True)
    common(sp)

    sp = sub.add_parser("rollout", help="Monte Carlo rollouts for one shield condition")
    _shield_flags(sp)
    sp.add_argument("--episodes", type=int, default=200)
    common(sp)

    sp = sub.add_parser("sweep", help="threshold sweep with operating-point selection")
    _shield_flags(sp, beta=False)
    sp.add_argument("--betas", default=",".join(str(b) for b in DEFAULT_BETAS))
    sp.add_argument("--select", choices=("lowfail", "maxsafe"), default="lowfail")
    sp.add_argument("--episodes", type=int, default=200)
    common(sp)

    sp = sub.add_parser("adversary", help="cross-entropy search for a worst-case fixed kernel")
    _shield_flags(sp, regime=False)
    sp.add_argument("--episodes", type=int, default=None, help=argparse.SUPPRESS)
    sp.add_argument("--ce-pop", type=int, default=30)
    sp.add_argument("--ce-elite", type=float, default=0.2)
    sp.add_argument("--ce-iters", type=int, default=10)
    sp.add_argument("--ce-rollouts", type=int, default=50)
    common(sp)

    sp = sub.add_parser("coarseness", help="envelope-versus-sampling gap diagnostics")
    sp.add_argument("--gamma", type=float, default=0.9)
    sp.add_argument("--histories", type=int, default=20)
    sp.add_argument("--fwd-n", type=int, default=500)
    sp.add_argument("--fwd-k", type=int, default=100)
    common(sp)

    sp = sub.add_parser("timing", help="per-step shield latency comparison")
    sp.add_argument("--shields", default="observation,single,fwd,envelope")
    sp.add_argument("--gamma", type=float, default=0.9)
    sp.add_argument("--beta", type=float, default=0.8)
    sp.add_argument("--episodes", type=int, default=20)
    common(sp)
    return p


def _shield_flags(sp, beta=True, regime=True):
    sp.add_argument(
        "--shield",
        choices=("observation", "single", "envelope", "fwd", "support"),
        required=True,
    )
    if beta:
        sp.add_argument("--beta", type=float, default=0.8)
    sp.add_argument("--gamma", type=float, default=0.9)
    sp.add_argument("--controller", choices=("random", "greedy_core", "tabular_q"), default="random")
    sp.add_argument("--fwd-n", type=int, default=500)
    sp.add_argument("--fwd-k", type=int, default=100)
    if regime:
        sp.add_argument("--regime", choices=("uniform", "adversarial"), default="uniform")
        sp.add_argument("--kernel", default=None, help="kernel file for the adversarial regime")


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise UsageError(f"--beta must lie in [0, 1], got {beta}")


def _check_prob(value: float, name: str, closed_low=False) -> None:
    lo_ok = value >= 0.0 if closed_low else value > 0.0
    if not (lo_ok and value <= 1.0):
        raise UsageError(f"--{name} must lie in {'[0,1]' if closed_low else '(0,1]'}, got {value}")


def _spec_from(args) -> ShieldSpec:
    _check_beta(getattr(args, "beta", 0.8))
    _check_prob(args.gamma, "gamma")
    return ShieldSpec(
        kind=args.shield,
        beta=getattr(args, "beta", 0.8),
        gamma=args.gamma,
        budget=getattr(args, "fwd_n", 500),
        kernels_per_step=getattr(args, "fwd_k", 100),
        propagation=PropagationConfig(),
    )


def _regime_from(args, model) -> PerceptionRegime:
    if getattr(args, "regime", "uniform") == "uniform":
        return PerceptionRegime("uniform")
    if not getattr(args, "kernel", None):
        raise UsageError("--regime adversarial needs --kernel FILE")
    doc = json.loads(Path(args.kernel).read_text(encoding="utf-8"))
    entries = doc.get("point_emission")
    if not entries:
        raise UsageError(f"{args.kernel}: no 'point_emission' entries")
    P = np.zeros((model.num_states, model.num_observations))
    for s_name, o_name, prob in entries:
        P[model.states.index(s_name), model.observations.index(o_name)] = float(prob)
    return PerceptionRegime("adversarial", PointEmission(P))


def _load(args) -> benchio.LoadResult:
    try:
        return benchio.load_model(args.model)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {args.model}")


def _manifest(args, outdir: Path, name: str, extra: dict | None = None) -> None:
    doc = {
        "command": args.command,
        "config": {k: v for k, v in vars(args).items() if k != "command"},
        "seed": getattr(args, "seed", None),
        "versions": {
            "ipshield": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "created_unix": time.time(),
    }
    if extra:
        doc.update(extra)
    (outdir / f"{name}.manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1, default=str), encoding="utf-8"
    )


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in CSV_COLUMNS})
    return buf.getvalue()


def _batch_row(res) -> dict:
    return {
        "shield": res.shield,
        "beta": res.beta,
        "regime": res.regime,
        "episodes": res.episodes,
        "fail_rate": res.fail_rate,
        "stuck_rate": res.stuck_rate,
        "safe_rate": res.safe_rate,
        "inconsistent_rate": res.inconsistent_rate,
        "mean_latency_us": res.mean_latency_us,
        "median_latency_us": res.median_latency_us,
    }


def _emit(args, name: str, payload: dict, rows: list[dict] | None = None) -> Path:
    """Write the primary output, schema-check it, and drop the manifest."""
    if getattr(args, "format", "json") == "csv" and rows is None:
        raise UsageError(f"{args.command} has no tabular form; use --format json")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if getattr(args, "format", "json") == "csv" and rows is not None:
        path = outdir / f"{name}.csv"
        path.write_text(_rows_to_csv(rows), encoding="utf-8")
        _check_csv(path)
    else:
        path = outdir / f"{name}.json"
        path.write_text(
            json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8"
        )
        _check_json(path, payload.keys())
    _manifest(args, outdir, name)
    return path


def _check_csv(path: Path) -> None:
    with path.open(encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    if header != CSV_COLUMNS:
        raise RuntimeError(f"{path}: unexpected CSV header {header}")


def _check_json(path: Path, expected_keys) -> None:
    doc = json.loads(path.read_text(encoding="utf-8"))
    missing = set(expected_keys) - set(doc)
    if missing:
        raise RuntimeError(f"{path}: missing keys {sorted(missing)}")


# ------------------------------------------------------------- commands


def _cmd_generate(args) -> int:
    kw = {}
    if args.noise is not None:
        kw["noise_budget"] = args.noise
    if args.horizon is not None:
        kw["horizon"] = args.horizon
    if args.samples:
        kw["samples_per_state"] = args.samples
        kw["alpha"] = args.alpha
    spec = {
        "obstacle": benchio.ObstacleGrid,
        "refuel": benchio.RefuelLike,
        "linefollow": benchio.LineFollow,
    }[args.bench](**kw)
    model, _, counts = benchio.generate_with_counts(spec, args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"{args.bench}.json"
    if counts is not None:
        benchio.save_model(model, path, counts=counts, alpha=spec.alpha)
    else:
        benchio.save_model(model, path)
    benchio.load_model(path)  # schema self-check
    _manifest(args, outdir, args.bench)
    print(path)
    return 0


def _cmd_validate(args) -> int:
    try:
        benchio.load_model(args.model)
    except FileNotFoundError:
        print(f"model file not found: {args.model}", file=sys.stderr)
        return 2
    except benchio.ValidationError as e:
        for v in e.violations:
            print(f"violation: {v}", file=sys.stderr)
        return 1
    except benchio.ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 1
    print("ok")
    return 0


def _cmd_intervals(args) -> int:
    if args.model is None:
        args.model = args.counts
    if args.model is None:
        raise UsageError("intervals needs --counts FILE (or --model FILE)")
    res = _load(args)
    if res.counts is None:
        raise UsageError("model file has no counts block; nothing to rebuild")
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    budget = AlphaBudget(alpha_total=args.alpha, combiner=args.combiner)
    ivals, lam = build_emission_intervals(res.counts, budget)
    S = res.model.states.names
    O = res.model.observations.names
    payload = {
        "lambda": lam,
        "alpha": args.alpha,
        "combiner": args.combiner,
        "entries": [
            [S[s], O[o], ivals.lower[s, o], ivals.upper[s, o]]
            for s in range(len(S))
            for o in range(len(O))
        ],
    }
    print(_emit(args, "intervals", payload))
    return 0


def _cmd_synth_shield(args) -> int:
    res = _load(args)
    _check_prob(args.gamma, "gamma")
    try:
        core, omega = synthesize(res.model, args.gamma)
    except EmptyCore as e:
        print(f"empty core: {e}", file=sys.stderr)
        return 1
    S = res.model.states.names
    A = res.model.actions.names
    payload = {
        "gamma": args.gamma,
        "core": [S[s] for s in sorted(core)],
        "allowed": {S[s]: [A[a] for a in sorted(acts)] for s, acts in enumerate(omega.allowed)},
    }
    print(_emit(args, "shield", payload))
    return 0


def _cmd_rollout(args) -> int:
    res = _load(args)
    spec = _spec_from(args)
    regime = _regime_from(args, res.model)
    try:
        batch = run_batch(
            res.model, spec, Controller(args.controller), regime, args.episodes, args.seed
        )
    except (EmptyCore, SupportExplosion) as e:
        print(f"shield construction failed: {e}", file=sys.stderr)
        return 1
    row = _batch_row(batch)
    print(_emit(args, "rollout", row, rows=[row]))
    return 0


def _cmd_sweep(args) -> int:
    res = _load(args)
    spec = _spec_from(args)
    regime = _regime_from(args, res.model)
    try:
        betas = [float(x) for x in args.betas.split(",") if x]
    except ValueError:
        raise UsageError(f"bad --betas list: {args.betas!r}")
    for b in betas:
        _check_beta(b)
    try:
        result = sweep(
            res.model, spec, Controller(args.controller), regime,
            betas=betas, episodes=args.episodes, seed=args.seed,
        )
    except (EmptyCore, SupportExplosion) as e:
        print(f"shield construction failed: {e}", file=sys.stderr)
        return 1
    chosen = (
        result.select_low_failure() if args.select == "lowfail" else result.select_max_safe()
    )
    rows = [_batch_row(r) for r in result.rows]
    payload = {
        "rows": rows,
        "selected": _batch_row(chosen),
        "select": args.select,
    }
    print(_emit(args, "sweep", payload, rows=rows))
    return 0


def _cmd_adversary(args) -> int:
    res = _load(args)
    spec = _spec_from(args)
    if not 0.0 < args.ce_elite < 1.0:
        raise UsageError(f"--ce-elite must lie in (0,1), got {args.ce_elite}")
    cfg = CeConfig(
        population=args.ce_pop,
        elite_fraction=args.ce_elite,
        iterations=args.ce_iters,
        rollouts_per_candidate=args.ce_rollouts,
    )
    kernel = cross_entropy_adversary(
        res.model, spec, Controller(args.controller), cfg, args.seed
    )
    S = res.model.states.names
    O = res.model.observations.names
    payload = {
        "point_emission": [
            [S[s], O[o], repr(float(kernel.probs[s, o]))]
            for (s, o), p in np.ndenumerate(kernel.probs)
            if p != 0.0
        ],
        "shield": spec.kind,
        "beta": spec.beta,
    }
    print(_emit(args, "adversary", payload))
    return 0


def _cmd_coarseness(args) -> int:
    res = _load(args)
    _check_prob(args.gamma, "gamma")
    try:
        ctx = build_shield_context(res.model, ShieldSpec("envelope", gamma=args.gamma))
    except EmptyCore as e:
        print(f"shield construction failed: {e}", file=sys.stderr)
        return 1
    histories = sample_histories(res.model, args.histories, args.seed)
    report = coarseness_diagnostic(
        res.model, ctx.omega, histories,
        fwd_budget=args.fwd_n, fwd_kernels=args.fwd_k, seed=args.seed,
    )
    payload = {
        "per_step_mean_gap": list(report.per_step_mean),
        "per_step_max_gap": list(report.per_step_max),
        "summary": report.summary(),
    }
    print(_emit(args, "coarseness", payload))
    return 0


def _cmd_timing(args) -> int:
    res = _load(args)
    kinds = [k for k in args.shields.split(",") if k]
    specs = []
    for kind in kinds:
        if kind not in ("observation", "single", "envelope", "fwd", "support"):
            raise UsageError(f"unknown shield kind {kind!r}")
        specs.append(ShieldSpec(kind, beta=args.beta, gamma=args.gamma))
    report = timing_harness(
        res.model, specs, Controller(), PerceptionRegime(), args.episodes, args.seed
    )
    rows = [
        {
            "shield": kind,
            "beta": args.beta,
            "regime": "uniform",
            "episodes": int(report[kind]["episodes"]),
            "fail_rate": "",
            "stuck_rate": "",
            "safe_rate": "",
            "mean_latency_us": report[kind]["mean_us"],
        }
        for kind in kinds
    ]
    print(_emit(args, "timing", report, rows=rows))
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "validate": _cmd_validate,
    "intervals": _cmd_intervals,
    "synth-shield": _cmd_synth_shield,
    "rollout": _cmd_rollout,
    "sweep": _cmd_sweep,
    "adversary": _cmd_adversary,
    "coarseness": _cmd_coarseness,
    "timing": _cmd_timing,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except benchio.ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 1
    except benchio.ValidationError as e:
        for v in e.violations:
            print(f"violation: {v}", file=sys.stderr)
        return 1
    except (benchio.SpecError, ValueError) as e:
        # e.g. a shield that needs a point-estimate kernel on a model without
        # one: a data problem, reported without a stack trace
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
