"""Dense two-phase simplex solver for the small LPs used by envelope propagation.

The solver is deliberately self-contained: the programs produced by belief
propagation have a few hundred variables at most, and a dense tableau with
Bland's anti-cycling rule is deterministic (identical inputs give bit-identical
outputs) and fast enough.  ``solve_many`` amortizes Phase 1 across a family of
objectives that share one feasible region, which is the dominant pattern here:
one region, two objectives per coordinate direction.

An adapter seam (``backend="highs"``) routes a program through
``scipy.optimize.linprog`` behind the same contract, for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    from scipy.linalg.blas import dger as _dger
except ImportError:  # pragma: no cover
    _dger = None

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10

LESS_EQUAL = "<="
EQUAL = "="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILED = "numerical_failure"  # solve_many only; solve() raises instead


class NumericalFailure(Exception):
    """Simplex pivoting exceeded its iteration cap without converging."""


@dataclass
class LinearProgram:
    """An LP in inequality/equality form with per-variable bounds.

    Variables default to [0, +inf).  Constraints are rows
    ``(coefficients, relation, rhs)`` with relation ``"<="`` or ``"="``.
    """

    num_vars: int
    sense: str = "max"
    objective: np.ndarray | None = None
    rows: list[tuple[np.ndarray, str, float]] = field(default_factory=list)
    lower: np.ndarray = field(default=None)  # type: ignore[assignment]
    upper: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.num_vars < 1:
            raise ValueError("LinearProgram needs at least one variable")
        if self.sense not in ("max", "min"):
            raise ValueError(f"unknown sense {self.sense!r}")
        if self.lower is None:
            self.lower = np.zeros(self.num_vars)
        if self.upper is None:
            self.upper = np.full(self.num_vars, np.inf)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)

    def set_objective(self, coeffs) -> None:
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (self.num_vars,):
            raise ValueError("objective length must equal num_vars")
        self.objective = c

    def add_constraint(self, coeffs, relation: str, rhs: float) -> None:
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (self.num_vars,):
            raise ValueError("coefficient vector length must equal num_vars")
        if relation not in (LESS_EQUAL, EQUAL):
            raise ValueError(f"relation must be '<=' or '=', got {relation!r}")
        if not np.isfinite(rhs):
            raise ValueError("rhs must be finite")
        self.rows.append((c, relation, float(rhs)))

    def set_bounds(self, j: int, lo: float, hi: float) -> None:
        self.lower[j] = lo
        self.upper[j] = hi


@dataclass(frozen=True)
class LpSolution:
    status: str
    objective: float
    x: np.ndarray | None


def to_lp_text(lp: LinearProgram, name: str = "lp") -> str:
    """Render a program in CPLEX LP text format for external cross-checking."""
    c = lp.objective if lp.objective is not None else np.zeros(lp.num_vars)
    out = [f"\\ {name}", "Maximize" if lp.sense == "max" else "Minimize"]
    out.append(" obj: " + _lin_expr(c))
    out.append("Subject To")
    for i, (coeffs, rel, rhs) in enumerate(lp.rows):
        op = "<=" if rel == LESS_EQUAL else "="
        out.append(f" c{i}: {_lin_expr(coeffs)} {op} {rhs!r}")
    out.append("Bounds")
    for j in range(lp.num_vars):
        lo, hi = lp.lower[j], lp.upper[j]
        lo_s = "-inf" if lo == -np.inf else repr(lo)
        hi_s = "+inf" if hi == np.inf else repr(hi)
        out.append(f" {lo_s} <= x{j} <= {hi_s}")
    out.append("End")
    return "\n".join(out) + "\n"


def _lin_expr(coeffs: np.ndarray) -> str:
    terms = [
        f"{'+' if v >= 0 else '-'} {abs(v)!r} x{j}"
        for j, v in enumerate(coeffs)
        if v != 0.0
    ]
    return " ".join(terms) if terms else "0 x0"


# ---------------------------------------------------------------------------
# standard-form compilation
#
# Each original variable is mapped to nonnegative standard columns:
#   shift:  x = x' + lb            (finite lb; finite ub adds a row)
#   mirror: x = ub - x'            (lb = -inf, finite ub)
#   free:   x = x+ - x-            (both infinite)
# ---------------------------------------------------------------------------


class _Standard:
    __slots__ = ("ncols", "var_map", "A", "b", "art_rows", "m", "bounded_row_of")

    def __init__(self, lp: LinearProgram):
        ncols = 0
        var_map: list[tuple] = []
        for j in range(lp.num_vars):
            lo, hi = lp.lower[j], lp.upper[j]
            if lo == -np.inf and hi == np.inf:
                var_map.append(("free", ncols, ncols + 1))
                ncols += 2
            elif lo > -np.inf:
                var_map.append(("shift", ncols, lo, hi))
                ncols += 1
            else:
                var_map.append(("mirror", ncols, hi))
                ncols += 1
        self.var_map = var_map

        dense_rows: list[np.ndarray] = []
        rels: list[str] = []
        rhs: list[float] = []
        for coeffs, rel, b in lp.rows:
            row = np.zeros(ncols)
            shift = 0.0
            for j, v in enumerate(coeffs):
                if v == 0.0:
                    continue
                kind = var_map[j]
                if kind[0] == "free":
                    row[kind[1]] = v
                    row[kind[2]] = -v
                elif kind[0] == "shift":
                    row[kind[1]] = v
                    shift += v * kind[2]
                else:
                    row[kind[1]] = -v
                    shift += v * kind[2]
            dense_rows.append(row)
            rels.append(rel)
            rhs.append(b - shift)
        # finite upper bounds of shifted variables become extra rows
        self.bounded_row_of = {}
        for j in range(lp.num_vars):
            kind = var_map[j]
            if kind[0] == "shift" and np.isfinite(kind[3]):
                row = np.zeros(ncols)
                row[kind[1]] = 1.0
                dense_rows.append(row)
                rels.append(LESS_EQUAL)
                rhs.append(kind[3] - kind[2])
                self.bounded_row_of[j] = len(dense_rows) - 1

        m = len(dense_rows)
        n_slack = sum(1 for r in rels if r == LESS_EQUAL)
        A = np.zeros((m, ncols + n_slack))
        b_vec = np.zeros(m)
        slack_col = ncols
        art_rows: list[int] = []
        for i in range(m):
            A[i, :ncols] = dense_rows[i]
            b_vec[i] = rhs[i]
            if rels[i] == LESS_EQUAL:
                A[i, slack_col] = 1.0
                this_slack = slack_col
                slack_col += 1
            else:
                this_slack = -1
            if b_vec[i] < 0:
                A[i, :] *= -1.0
                b_vec[i] *= -1.0
            if this_slack >= 0 and A[i, this_slack] > 0:
                pass  # slack serves as the initial basic variable
            else:
                art_rows.append(i)
        self.A = A
        self.b = b_vec
        self.m = m
        self.ncols = A.shape[1]
        self.art_rows = art_rows

    def objective_for(self, lp_sense: str, coeffs: np.ndarray) -> tuple[np.ndarray, float]:
        """Map an original-space objective to (std costs for minimize, constant)."""
        sign = -1.0 if lp_sense == "max" else 1.0
        c = np.zeros(self.ncols)
        const = 0.0
        for j, v in enumerate(coeffs):
            if v == 0.0:
                continue
            kind = self.var_map[j]
            if kind[0] == "free":
                c[kind[1]] = sign * v
                c[kind[2]] = -sign * v
            elif kind[0] == "shift":
                c[kind[1]] = sign * v
                const += sign * v * kind[2]
            else:
                c[kind[1]] = -sign * v
                const += sign * v * kind[2]
        return c, const

    def recover(self, x_std: np.ndarray, num_vars: int) -> np.ndarray:
        x = np.zeros(num_vars)
        for j in range(num_vars):
            kind = self.var_map[j]
            if kind[0] == "free":
                x[j] = x_std[kind[1]] - x_std[kind[2]]
            elif kind[0] == "shift":
                x[j] = x_std[kind[1]] + kind[2]
            else:
                x[j] = kind[2] - x_std[kind[1]]
        return x


class _Tableau:
    """Constraint rows in B^-1 A form plus the current basis.

    A pristine copy of the standard-form data is kept so the tableau can be
    refactorized: accumulated pivot roundoff is wiped by recomputing
    B^-1 [A | b] from scratch, which happens periodically and before any
    claim of optimality is trusted.
    """

    REFRESH_EVERY = 48

    def __init__(self, std: _Standard):
        m, n = std.m, std.ncols
        n_art = len(std.art_rows)
        self.n_true = n
        T = np.zeros((m, n + n_art + 1))
        T[:, :n] = std.A
        T[:, -1] = std.b
        basis = np.full(m, -1, dtype=int)
        # slack columns already sit in identity position for their rows
        for i in range(m):
            cols = np.flatnonzero(std.A[i, :] == 1.0)
            for c in cols:
                if c >= n:
                    break
                col = std.A[:, c]
                if col[i] == 1.0 and np.count_nonzero(col) == 1:
                    basis[i] = c
                    break
        for k, i in enumerate(std.art_rows):
            T[i, n + k] = 1.0
            basis[i] = n + k
        if np.any(basis < 0):  # pragma: no cover - defensive
            raise NumericalFailure("failed to construct an initial basis")
        self.T = T
        self.basis = basis
        self.m = m
        self.A0 = T[:, :-1].copy()
        self.b0 = T[:, -1].copy()

    def refactor(self) -> None:
        """Recompute the tableau from pristine data for the current basis."""
        B = self.A0[:, self.basis]
        try:
            fresh = np.linalg.solve(B, np.hstack([self.A0, self.b0[:, None]]))
        except np.linalg.LinAlgError:
            raise NumericalFailure("singular basis during refactorization")
        # identity columns of the basis, exactly
        fresh[:, self.basis] = 0.0
        fresh[np.arange(self.m), self.basis] = 1.0
        fresh[:, -1] = np.maximum(fresh[:, -1], 0.0)
        self.T = fresh

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        piv = T[row, col]
        T[row, :] /= piv
        colvals = T[:, col].copy()
        colvals[row] = 0.0
        T -= np.outer(colvals, T[row, :])
        T[:, col] = 0.0
        T[row, col] = 1.0
        self.basis[row] = col

    def reduced_costs(self, c: np.ndarray) -> tuple[np.ndarray, float]:
        cb = c[self.basis]
        r = c - cb @ self.T[:, :-1]
        z = float(cb @ self.T[:, -1])
        return r, z

    def run_phase(self, c: np.ndarray, max_iter: int, allowed: int) -> str:
        """Pivot to optimality for minimize c.x; columns >= `allowed` barred.

        Entering rule: most negative reduced cost (lowest index on ties),
        switching to Bland's lowest-index rule whenever the objective stalls,
        which restores the anti-cycling guarantee while keeping the usual
        Dantzig speed.  Leaving rule: minimum ratio, ties broken by lowest
        basic variable index.  Fully deterministic.
        """
        def fresh_zrow():
            cb = c[self.basis]
            z = np.empty(self.T.shape[1])
            z[:-1] = c - cb @ self.T[:, :-1]
            z[-1] = -float(cb @ self.T[:, -1])
            return z

        zrow = fresh_zrow()
        stall = 0
        since_refresh = 0
        verify_rounds = 0
        for _ in range(max_iter):
            T = self.T
            m = self.m
            r = zrow[:allowed]
            # a verified claim tolerates slightly stale reduced costs; the
            # objective error is bounded by the tolerance times variable range
            tol = OPT_TOL if verify_rounds < 3 else 100 * OPT_TOL
            if stall < 12:
                enter = int(np.argmin(r))
                done = r[enter] >= -tol
            else:  # Bland fallback under degeneracy
                neg = np.flatnonzero(r < -tol)
                done = neg.size == 0
                enter = int(neg[0]) if not done else 0
            if done:
                if since_refresh == 0:
                    return OPTIMAL
                # re-verify the claim on refreshed numbers
                self.refactor()
                zrow = fresh_zrow()
                since_refresh = 0
                verify_rounds += 1
                continue
            col = T[:m, enter]
            ok = col > PIVOT_TOL
            if not np.any(ok):
                if since_refresh > 0:
                    self.refactor()
                    zrow = fresh_zrow()
                    since_refresh = 0
                    continue
                return UNBOUNDED
            ratios = np.full(m, np.inf)
            ratios[ok] = T[:m, -1][ok] / col[ok]
            best = ratios.min()
            tied = np.flatnonzero(ratios <= best + PIVOT_TOL)
            row = int(tied[np.argmin(self.basis[tied])])
            stall = stall + 1 if best <= PIVOT_TOL else 0
            # pivot constraint rows and the objective row together
            piv = T[row, enter]
            T[row, :] /= piv
            colvals = T[:, enter].copy()
            colvals[row] = 0.0
            if _dger is not None:
                # in-place rank-1 update on the transposed (Fortran) view
                _dger(-1.0, T[row, :], colvals, a=T.T, overwrite_a=1)
            else:  # pragma: no cover
                T -= np.outer(colvals, T[row, :])
            T[:, enter] = 0.0
            T[row, enter] = 1.0
            zrow -= zrow[enter] * T[row, :]
            zrow[enter] = 0.0
            self.basis[row] = enter
            since_refresh += 1
            if since_refresh >= self.REFRESH_EVERY:
                self.refactor()
                zrow = fresh_zrow()
                since_refresh = 0
        raise NumericalFailure("simplex iteration cap exceeded")

    def values(self) -> np.ndarray:
        x = np.zeros(self.T.shape[1] - 1)
        x[self.basis] = self.T[:, -1]
        return x


def _phase_one(std: _Standard, cap: int) -> _Tableau:
    tab = _Tableau(std)
    n_all = tab.T.shape[1] - 1
    c1 = np.zeros(n_all)
    c1[std.ncols:] = 1.0
    status = tab.run_phase(c1, cap, allowed=n_all)
    if status == UNBOUNDED:  # pragma: no cover - phase 1 is bounded below by 0
        raise NumericalFailure("phase 1 reported unbounded")
    _, z = tab.reduced_costs(c1)
    if z > 1e-7:
        return None  # type: ignore[return-value]
    # drive any artificial that is still basic (at zero) out of the basis;
    # rows whose artificial cannot leave are redundant and keep it at zero
    for i in range(tab.m):
        if tab.basis[i] >= std.ncols:
            row = tab.T[i, : std.ncols]
            candidates = np.flatnonzero(np.abs(row) > 1e-8)
            if candidates.size:
                tab.pivot(i, int(candidates[0]))
    tab.refactor()
    return tab


def _iter_cap(lp: LinearProgram) -> int:
    return 50 * (lp.num_vars + len(lp.rows) + 2)


def solve(lp: LinearProgram, backend: str = "bland") -> LpSolution:
    """Solve the program to the LpSolution contract.

    Raises NumericalFailure if pivoting stalls beyond the iteration cap;
    callers that can tolerate it fall back to trivial bounds.
    """
    if lp.objective is None:
        raise ValueError("objective not set")
    if backend == "highs":
        return _solve_highs(lp)
    if backend != "bland":
        raise ValueError(f"unknown backend {backend!r}")
    sols = solve_many(lp, [lp.objective], sense=lp.sense)
    if sols[0].status == FAILED:
        raise NumericalFailure("simplex iteration cap exceeded")
    return sols[0]


def solve_many(
    lp: LinearProgram, objectives, sense: str | None = None
) -> list[LpSolution]:
    """Solve one feasible region against many objectives.

    Phase 1 runs once; each objective re-prices the tableau and resumes
    pivoting from the previous optimal basis.  Output order matches input.
    """
    sense = sense or lp.sense
    if np.any(lp.lower > lp.upper):
        return [LpSolution(INFEASIBLE, np.nan, None) for _ in objectives]
    std = _Standard(lp)
    cap = _iter_cap(lp)
    tab = _phase_one(std, cap)
    if tab is None:
        return [LpSolution(INFEASIBLE, np.nan, None) for _ in objectives]
    n_all = tab.T.shape[1] - 1
    out: list[LpSolution] = []
    for obj in objectives:
        obj = np.asarray(obj, dtype=float)
        c_std, const = std.objective_for(sense, obj)
        c_full = np.zeros(n_all)
        c_full[: std.ncols] = c_std
        try:
            status = tab.run_phase(c_full, cap, allowed=std.ncols)
        except NumericalFailure:
            # the tableau is still a valid feasible basis; later objectives
            # can proceed, only this one is reported as failed
            out.append(LpSolution(FAILED, np.nan, None))
            continue
        if status == UNBOUNDED:
            out.append(LpSolution(UNBOUNDED, np.nan, None))
            continue
        x = std.recover(tab.values()[: std.ncols], lp.num_vars)
        val = float(obj @ x)
        out.append(LpSolution(OPTIMAL, val, x))
    return out


def _highs_matrices(lp: LinearProgram):
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for coeffs, rel, rhs in lp.rows:
        if rel == LESS_EQUAL:
            A_ub.append(coeffs)
            b_ub.append(rhs)
        else:
            A_eq.append(coeffs)
            b_eq.append(rhs)
    return (
        np.array(A_ub) if A_ub else None,
        np.array(b_ub) if b_ub else None,
        np.array(A_eq) if A_eq else None,
        np.array(b_eq) if b_eq else None,
        list(zip(lp.lower, lp.upper)),
    )


def _solve_highs(lp: LinearProgram) -> LpSolution:
    sols = solve_highs_many(lp, [lp.objective], sense=lp.sense)
    if sols[0].status == FAILED:
        raise NumericalFailure("highs backend failed")
    return sols[0]


def solve_highs_many(lp: LinearProgram, objectives, sense: str | None = None) -> list[LpSolution]:
    """Independent HiGHS solves sharing one prebuilt constraint matrix set."""
    from scipy.optimize import linprog as _sp_linprog

    sense = sense or lp.sense
    sign = -1.0 if sense == "max" else 1.0
    A_ub, b_ub, A_eq, b_eq, bounds = _highs_matrices(lp)
    out: list[LpSolution] = []
    for obj in objectives:
        obj = np.asarray(obj, dtype=float)
        res = _sp_linprog(
            sign * obj,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=bounds,
            method="highs",
        )
        if res.status == 2:
            out.append(LpSolution(INFEASIBLE, np.nan, None))
        elif res.status == 3:
            out.append(LpSolution(UNBOUNDED, np.nan, None))
        elif res.status != 0:
            out.append(LpSolution(FAILED, np.nan, None))
        else:
            out.append(LpSolution(OPTIMAL, sign * float(res.fun), np.asarray(res.x)))
    return out
