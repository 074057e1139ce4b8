"""Conservative one-step propagation of hypercube belief envelopes.

A belief envelope is a per-coordinate box intersected with the probability
simplex.  Propagating it through an action-observation update means bounding,
in every coordinate direction, all posteriors

    b'_s = y_s w_s / sum_j y_j w_j,     y = Ta^T b,

over every prior b in the envelope and every per-step emission column w
inside its interval bounds.  The bilinear products y_s w_s are relaxed with
McCormick envelopes over precomputed bounds on y, and the normalization is
linearized by a Charnes-Cooper scaling variable t = 1 / sum_j y_j w_j.  Each
box facet (min or max of one posterior coordinate) is one LP over the scaled
variables (b~, w~, u~, t), with the scaled push-forward y~ = Ta^T b~ written
in place; the scaled posterior u~ sums to one, so the facet objective reads
off the posterior coordinate directly.

The relaxation is an over-approximation: every exact posterior lies in the
returned box.  When the prior is a point or the emission column is degenerate
the McCormick rows collapse to equalities and the bounds are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import linprog as lpmod
from .linprog import LinearProgram, NumericalFailure, solve, solve_many

if TYPE_CHECKING:  # pragma: no cover
    from .model import Ipomdp, TransitionKernel

PROB_TOL = 1e-9

PER_COORDINATE_LP = "per_coordinate_lp"
INTERVAL_ARITHMETIC = "interval_arithmetic"


class InconsistentObservation(Exception):
    """No admissible emission choice and prior in the envelope gives the
    received observation positive evidence.  In a correctly set up closed
    loop this indicates a modeling or sampling bug and must surface."""


@dataclass(frozen=True)
class BeliefEnvelope:
    """Per-state bounds on belief mass; membership also requires the simplex."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("envelope bounds must be matching vectors")
        if np.any(lo < -PROB_TOL) or np.any(hi > 1 + PROB_TOL) or np.any(lo > hi + PROB_TOL):
            raise ValueError("envelope bounds must satisfy 0 <= lower <= upper <= 1")
        if lo.sum() > 1 + PROB_TOL or hi.sum() < 1 - PROB_TOL:
            raise ValueError("envelope does not intersect the simplex")
        lo = np.clip(lo, 0.0, 1.0)
        hi = np.clip(hi, 0.0, 1.0)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def num_states(self) -> int:
        return self.lower.shape[0]

    def contains(self, b: np.ndarray, tol: float = 1e-9) -> bool:
        b = np.asarray(b, dtype=float)
        return bool(
            np.all(b >= self.lower - tol)
            and np.all(b <= self.upper + tol)
            and np.all(b >= -tol)
            and abs(b.sum() - 1.0) <= tol
        )

    def is_point(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.upper - self.lower <= tol))


@dataclass(frozen=True)
class PropagationConfig:
    y_bound_mode: str = PER_COORDINATE_LP
    zero_evidence_tol: float = 1e-12
    facet_failure_policy: str = "widen_to_trivial"
    lp_backend: str = "auto"  # auto -> highs when scipy is present

    def __post_init__(self):
        if self.y_bound_mode not in (PER_COORDINATE_LP, INTERVAL_ARITHMETIC):
            raise ValueError(f"unknown y_bound_mode {self.y_bound_mode!r}")
        if self.zero_evidence_tol <= 0:
            raise ValueError("zero_evidence_tol must be positive")

    def backend(self, num_vars: int = 0) -> str:
        if self.lp_backend != "auto":
            return self.lp_backend
        # the self-contained tableau solver is exact and fastest on small
        # programs; degenerate larger ones go to HiGHS through the seam
        if num_vars <= 25:
            return "bland"
        try:
            import scipy.optimize  # noqa: F401
        except ImportError:  # pragma: no cover
            return "bland"
        return "highs"


def _extremize_box_simplex(c: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> tuple[float, float]:
    """Exact (min, max) of c.b over {lower <= b <= upper, sum b = 1}.

    This LP has one budget row over box variables, so the greedy fill is its
    exact solution: start at the lower corner and spend the remaining mass on
    coordinates in coefficient order.
    """
    caps = upper - lower
    budget = 1.0 - float(lower.sum())
    base = float(c @ lower)
    out = []
    for order in (np.argsort(-c, kind="stable"), np.argsort(c, kind="stable")):
        left = budget
        val = base
        for j in order:
            if left <= 0.0:
                break
            take = caps[j] if caps[j] < left else left
            val += c[j] * take
            left -= take
        out.append(val)
    mx, mn = out
    return mn, mx


def y_bounds(
    env: BeliefEnvelope,
    T: "TransitionKernel",
    a: int,
    mode: str = PER_COORDINATE_LP,
) -> tuple[np.ndarray, np.ndarray]:
    """Sound componentwise bounds on the dynamics push-forward Ta^T b over env.

    The per-coordinate mode extremizes each coordinate over env intersected
    with the simplex (exact; the box-plus-budget program has a closed greedy
    solution).  Interval arithmetic just pairs the transition columns with the
    box corners; looser but cheaper.
    """
    Ta = T.probs[:, a, :]
    n = Ta.shape[1]
    if mode == INTERVAL_ARITHMETIC:
        y_lo = env.lower @ Ta
        y_hi = env.upper @ Ta
        return np.clip(y_lo, 0.0, 1.0), np.clip(y_hi, 0.0, 1.0)

    y_lo = np.zeros(n)
    y_hi = np.ones(n)
    for s in range(n):
        mn, mx = _extremize_box_simplex(Ta[:, s], env.lower, env.upper)
        y_lo[s] = min(max(mn, 0.0), 1.0)
        y_hi[s] = min(max(mx, 0.0), 1.0)
        if y_lo[s] > y_hi[s]:  # numerical dust on degenerate envelopes
            y_lo[s], y_hi[s] = y_hi[s], y_lo[s]
    return y_lo, y_hi


def _mccormick_rows(lp, Ta, iu, iw, t_idx, y_lo, y_hi, w_lo, w_hi, n, nv):
    """u = y*w relaxed over [y_lo,y_hi] x [w_lo,w_hi], with the push-forward
    y substituted by its expression in the prior (y_s = Ta[:, s] . b).

    With t_idx >= 0 the McCormick constants scale with the Charnes-Cooper
    variable t; with t_idx < 0 the rows are unscaled and the constants move
    to the right-hand side.
    """
    for s in range(n):
        for yb, wb, sign in (
            (y_lo[s], w_lo[s], 1.0),   # u >= yb*w + wb*y - yb*wb
            (y_hi[s], w_hi[s], 1.0),
            (y_hi[s], w_lo[s], -1.0),  # u <= yb*w + wb*y - yb*wb
            (y_lo[s], w_hi[s], -1.0),
        ):
            row = np.zeros(nv)
            row[iu + s] = -sign
            row[iw + s] = sign * yb
            row[:n] += sign * wb * Ta[:, s]
            if t_idx >= 0:
                row[t_idx] = -sign * yb * wb
                lp.add_constraint(row, "<=", 0.0)
            else:
                lp.add_constraint(row, "<=", float(sign * yb * wb))


def _evidence_ceiling(
    env: BeliefEnvelope,
    Ta: np.ndarray,
    w_lo: np.ndarray,
    w_hi: np.ndarray,
    y_lo: np.ndarray,
    y_hi: np.ndarray,
    backend: str,
) -> float:
    """Max of sum_s u_s over the unscaled relaxation; <= tol means the
    observation is impossible for every admissible prior and kernel."""
    n = env.num_states
    # variables: b (n), w (n), u (n); u needs no explicit ceiling, its
    # McCormick over-estimators already bound it
    nv = 3 * n
    ib, iw, iu = 0, n, 2 * n
    lp = LinearProgram(num_vars=nv, sense="max")
    lp.lower[ib: ib + n] = env.lower
    lp.upper[ib: ib + n] = env.upper
    lp.lower[iw: iw + n] = w_lo
    lp.upper[iw: iw + n] = w_hi
    row = np.zeros(nv)
    row[ib: ib + n] = 1.0
    lp.add_constraint(row, "=", 1.0)
    _mccormick_rows(lp, Ta, iu, iw, -1, y_lo, y_hi, w_lo, w_hi, n, nv)
    obj = np.zeros(nv)
    obj[iu: iu + n] = 1.0
    lp.set_objective(obj)
    try:
        sol = solve(lp, backend=backend)
    except NumericalFailure:
        return 1.0  # inconclusive: do not flag the observation
    if sol.status != lpmod.OPTIMAL:
        return 0.0 if sol.status == lpmod.INFEASIBLE else 1.0
    return float(sol.objective)


def propagate(
    env: BeliefEnvelope,
    a: int,
    o: int,
    model: "Ipomdp",
    cfg: PropagationConfig | None = None,
) -> BeliefEnvelope:
    """One conservative action-observation step of the envelope.

    The returned box contains every exact posterior reachable from any prior
    in ``env`` under any emission column within the interval bounds for
    observation ``o`` (per-step-varying semantics).  Facet LPs that fail
    numerically fall back to the trivial bound for that facet, which only
    enlarges the box.  Raises InconsistentObservation when even the relaxed
    evidence mass is (numerically) zero.
    """
    cfg = cfg or PropagationConfig()
    n = env.num_states
    Ta = model.transitions.probs[:, a, :]
    w_lo = model.emissions.lower[:, o].copy()
    w_hi = model.emissions.upper[:, o].copy()
    y_lo, y_hi = y_bounds(env, model.transitions, a, mode=cfg.y_bound_mode)

    ceiling = _evidence_ceiling(env, Ta, w_lo, w_hi, y_lo, y_hi, cfg.backend(3 * n + 1))
    if ceiling <= cfg.zero_evidence_tol:
        raise InconsistentObservation(
            f"observation {o} after action {a} has zero evidence over the envelope"
        )

    # scaled variables: b~ (n), w~ (n), u~ (n), t (1); the scaled push-forward
    # y~ = Ta^T b~ is substituted into the McCormick rows rather than carried,
    # and u~ <= 1 is implied by sum u~ = 1 with u~ >= 0
    nv = 3 * n + 1
    ib, iw, iu, it = 0, n, 2 * n, 3 * n
    lp = LinearProgram(num_vars=nv, sense="max")

    # prior box rows, scaled: lower*t <= b~ <= upper*t
    for s in range(n):
        row = np.zeros(nv)
        row[ib + s] = -1.0
        row[it] = env.lower[s]
        lp.add_constraint(row, "<=", 0.0)
        row = np.zeros(nv)
        row[ib + s] = 1.0
        row[it] = -env.upper[s]
        lp.add_constraint(row, "<=", 0.0)
    # prior is a (scaled) distribution: sum b~ = t
    row = np.zeros(nv)
    row[ib: ib + n] = 1.0
    row[it] = -1.0
    lp.add_constraint(row, "=", 0.0)
    # emission intervals, scaled: w_lo*t <= w~ <= w_hi*t
    for s in range(n):
        row = np.zeros(nv)
        row[iw + s] = -1.0
        row[it] = w_lo[s]
        lp.add_constraint(row, "<=", 0.0)
        row = np.zeros(nv)
        row[iw + s] = 1.0
        row[it] = -w_hi[s]
        lp.add_constraint(row, "<=", 0.0)
    _mccormick_rows(lp, Ta, iu, iw, it, y_lo, y_hi, w_lo, w_hi, n, nv)
    # normalization: the scaled posterior is a distribution
    row = np.zeros(nv)
    row[iu: iu + n] = 1.0
    lp.add_constraint(row, "=", 1.0)

    # all min facets first, then all max facets: neighboring objectives stay
    # close, so the warm-started reoptimization needs few pivots
    objectives = []
    for s in range(n):
        obj = np.zeros(nv)
        obj[iu + s] = -1.0
        objectives.append(obj)  # max(-u_s) = -min(u_s)
    for s in range(n):
        obj = np.zeros(nv)
        obj[iu + s] = 1.0
        objectives.append(obj)

    new_lo = np.zeros(n)
    new_hi = np.ones(n)
    backend = cfg.backend(nv)
    try:
        if backend == "bland":
            sols = solve_many(lp, objectives, sense="max")
        else:
            sols = lpmod.solve_highs_many(lp, objectives, sense="max")
    except NumericalFailure:
        sols = None
    if sols is not None:
        for s in range(n):
            neg, pos = sols[s], sols[n + s]
            if neg.status == lpmod.OPTIMAL:
                new_lo[s] = -neg.objective
            if pos.status == lpmod.OPTIMAL:
                new_hi[s] = pos.objective

    new_lo = np.clip(new_lo, 0.0, 1.0)
    new_hi = np.clip(new_hi, 0.0, 1.0)
    new_hi = np.maximum(new_hi, new_lo)  # widen upper on tolerance inversions
    return BeliefEnvelope(lower=new_lo, upper=new_hi)


def min_safety_score(env: BeliefEnvelope, chi_a: np.ndarray) -> float:
    """Worst-case mass the envelope places on states where the action is
    admissible: min of chi_a . b over env intersected with the simplex.

    The box-plus-budget program is solved exactly in closed form, so there is
    no numerical-failure path; a malformed envelope scores 0, which at worst
    removes actions.
    """
    chi = np.asarray(chi_a, dtype=float)
    if env.lower.sum() > 1.0 + PROB_TOL or env.upper.sum() < 1.0 - PROB_TOL:
        return 0.0
    mn, _ = _extremize_box_simplex(chi, env.lower, env.upper)
    return float(min(max(mn, 0.0), 1.0))
