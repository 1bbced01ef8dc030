"""Exact linear-programming oracles for desk-scale certification.

A small dense two-phase primal simplex (Bland's rule, hence finite and
deterministic) solves the pairwise transportation LP and the extensive
barycenter LP directly.  These are ground-truth references for tests and
for objective-gap reports; they are deliberately capped at desk scale and
make no attempt to be fast on large instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LPInfeasibleError",
    "LPUnboundedError",
    "SizeCapError",
    "MassMismatchError",
    "StandardFormLP",
    "LPSolution",
    "simplex_solve",
    "solve_ot",
    "solve_barycenter_lp",
    "barycenter_objective",
    "objective_gap",
    "OT_VARIABLE_CAP",
    "BARYCENTER_VARIABLE_CAP",
]

# Desk-scale caps: R*S variables for one transport plan, total variables
# for the extensive barycenter LP.
OT_VARIABLE_CAP = 10_000
BARYCENTER_VARIABLE_CAP = 100_000

_FEAS_TOL = 1e-9


class LPInfeasibleError(ValueError):
    """The LP has no feasible point (phase-1 optimum stayed positive)."""


class LPUnboundedError(ValueError):
    """The LP objective is unbounded below."""


class SizeCapError(ValueError):
    """Instance exceeds the documented desk-scale size cap."""


class MassMismatchError(ValueError):
    """Marginals passed to a transport problem carry different masses."""


@dataclass(frozen=True)
class StandardFormLP:
    """min c'x  s.t.  A x = b, x >= 0, with dense data."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if A.ndim != 2 or b.shape != (A.shape[0],) or c.shape != (A.shape[1],):
            raise ValueError("inconsistent LP dimensions")
        if not (np.isfinite(A).all() and np.isfinite(b).all() and np.isfinite(c).all()):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_vars(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class LPSolution:
    x: np.ndarray
    value: float
    duals: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    comp_slack_residual: float


def _pivot(tableau, basis, i, j):
    col = tableau[:, j].copy()
    tableau[i] /= col[i]
    col[i] = 0.0
    tableau -= np.outer(col, tableau[i])
    basis[i] = j


def _bland_loop(tableau, basis, n_enterable, tol, budget):
    """Bland-rule pivoting on the reduced-cost row; returns pivot count."""
    m = len(basis)
    count = 0
    while True:
        costs = tableau[m, :n_enterable]
        entering = np.flatnonzero(costs < -tol)
        if entering.size == 0:
            return count
        j = int(entering[0])
        col = tableau[:m, j]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            raise LPUnboundedError("unbounded objective direction found")
        ratios = tableau[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        i = int(ties[np.argmin(np.asarray(basis)[ties])])
        _pivot(tableau, basis, i, j)
        count += 1
        if count > budget:
            raise RuntimeError("pivot budget exceeded; Bland's rule should terminate")


def simplex_solve(lp, tol=_FEAS_TOL):
    """Solve a standard-form LP with the two-phase tableau simplex.

    Bland's rule fixes pivot choices, so identical inputs give identical
    answers and degenerate instances cannot cycle.  Redundant rows that
    surface after phase 1 are dropped.  Raises :class:`LPInfeasibleError`
    or :class:`LPUnboundedError` when there is no finite optimum.
    """
    A, b, c = lp.A.copy(), lp.b.copy(), lp.c
    m, n = A.shape
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # Columns: structural | artificial | rhs.  Basis starts on artificials.
    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = A
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    basis = [n + i for i in range(m)]

    # Phase 1: minimize the artificial sum; reduced costs under the
    # artificial basis are -(column sums).
    tableau[m, :n] = -A.sum(axis=0)
    tableau[m, -1] = -b.sum()
    budget = 10_000 + 200 * (m + n)
    iters = _bland_loop(tableau, basis, n, tol, budget)
    if -tableau[m, -1] > _FEAS_TOL:
        raise LPInfeasibleError(
            f"phase-1 objective {-tableau[m, -1]:.3e} exceeds 1e-9"
        )

    # Drive leftover artificials out of the basis; a row with no usable
    # structural pivot is redundant and gets dropped.
    keep_rows = list(range(m))
    row = 0
    while row < len(basis):
        if basis[row] >= n:
            pivots = np.flatnonzero(np.abs(tableau[row, :n]) > tol)
            if pivots.size:
                _pivot(tableau, basis, row, int(pivots[0]))
                row += 1
            else:
                tableau = np.delete(tableau, row, axis=0)
                del basis[row]
                del keep_rows[row]
        else:
            row += 1

    # Phase 2: rebuild the reduced-cost row for the true objective.
    m2 = len(basis)
    tableau[m2, :] = 0.0
    tableau[m2, :n] = c
    for i in range(m2):
        tableau[m2] -= c[basis[i]] * tableau[i]
    iters += _bland_loop(tableau, basis, n, tol, budget)

    x = np.zeros(n)
    for i in range(m2):
        x[basis[i]] = tableau[i, -1]
    value = float(c @ x)

    duals = np.zeros(m)
    for i, orig in enumerate(keep_rows):
        duals[orig] = -tableau[m2, n + orig]
    duals[flip] *= -1.0

    reduced = tableau[m2, :n]
    return LPSolution(
        x=x,
        value=value,
        duals=duals,
        iterations=iters,
        primal_residual=float(np.abs(lp.A @ x - lp.b).max(initial=0.0)),
        dual_residual=float(np.maximum(-reduced, 0.0).max(initial=0.0)),
        comp_slack_residual=float(np.abs(x * reduced).max(initial=0.0)),
    )


def _check_marginal(vec, name):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or not np.isfinite(vec).all() or (vec < 0).any():
        raise ValueError(f"{name} must be a finite nonnegative vector")
    return vec


def solve_ot(p, q, cost):
    """Exact optimal transport between weight vectors ``p`` and ``q``.

    ``cost`` has shape (len(p), len(q)).  Returns ``(value, plan)`` where
    the plan has row sums ``p`` and column sums ``q``.  The total masses
    must agree within 1e-9 and the plan may hold at most 10^4 entries.
    """
    p = _check_marginal(p, "p")
    q = _check_marginal(q, "q")
    cost = np.asarray(cost, dtype=np.float64)
    R, S = p.size, q.size
    if cost.shape != (R, S):
        raise ValueError(f"cost shape {cost.shape} does not match ({R}, {S})")
    mass_p, mass_q = float(p.sum()), float(q.sum())
    if abs(mass_p - mass_q) > 1e-9 * max(1.0, mass_p, mass_q):
        raise MassMismatchError(
            f"marginal masses differ: {mass_p!r} vs {mass_q!r}"
        )
    if R * S > OT_VARIABLE_CAP:
        raise SizeCapError(f"transport plan size {R * S} exceeds {OT_VARIABLE_CAP}")

    # Variables x[r*S + s]; the last row-sum constraint is implied by the
    # others and dropped so the system has full row rank.
    n = R * S
    A = np.zeros((S + R - 1, n))
    b = np.empty(S + R - 1)
    for s in range(S):
        A[s, s::S] = 1.0
        b[s] = q[s]
    for r in range(R - 1):
        A[S + r, r * S : (r + 1) * S] = 1.0
        b[S + r] = p[r]
    sol = simplex_solve(StandardFormLP(A, b, cost.ravel()))
    return sol.value, sol.x.reshape(R, S)


def solve_barycenter_lp(instance):
    """Exact optimum of the extensive fixed-support barycenter LP.

    Returns ``(value, p, plans)``: the optimal objective, the barycenter
    weights recovered as row sums of the first optimal plan, and all M
    optimal plans.  Requires a balanced instance (otherwise the LP is
    infeasible) and at most 10^5 variables in total.
    """
    if not instance.balanced:
        raise LPInfeasibleError(
            "extensive barycenter LP is infeasible for unbalanced inputs; "
            f"input masses are {instance.masses().tolist()}"
        )
    R = instance.n_atoms
    sizes = [nu.support.n_atoms for nu in instance.inputs]
    M = len(sizes)
    n = R * sum(sizes)
    if n > BARYCENTER_VARIABLE_CAP:
        raise SizeCapError(f"LP size {n} exceeds {BARYCENTER_VARIABLE_CAP}")
    offsets = np.concatenate([[0], R * np.cumsum(sizes)])[:-1]

    n_rows = sum(sizes) + (M - 1) * (R - 1)
    A = np.zeros((n_rows, n))
    b = np.zeros(n_rows)
    row = 0
    for m, nu in enumerate(instance.inputs):
        S = sizes[m]
        for s in range(S):
            A[row, offsets[m] + s : offsets[m] + R * S : S] = 1.0
            b[row] = nu.weights[s]
            row += 1
    # Balance constraints: consecutive slabs share row sums.  One row per
    # pair is implied by the column constraints and dropped.
    for m in range(M - 1):
        for r in range(R - 1):
            A[row, offsets[m] + r * sizes[m] : offsets[m] + (r + 1) * sizes[m]] = 1.0
            A[
                row,
                offsets[m + 1] + r * sizes[m + 1] : offsets[m + 1] + (r + 1) * sizes[m + 1],
            ] = -1.0
            row += 1

    c = np.concatenate([instance.cost.block(m).ravel() for m in range(M)])
    sol = simplex_solve(StandardFormLP(A, b, c))
    plans = [
        sol.x[offsets[m] : offsets[m] + R * sizes[m]].reshape(R, sizes[m])
        for m in range(M)
    ]
    return sol.value, plans[0].sum(axis=1), plans


def barycenter_objective(p, instance):
    """Weighted transport objective of ``p`` against all inputs.

    Sums the exact OT values under the instance's weighted cost blocks;
    equals the extensive LP objective when ``p`` is feasible.
    """
    total = 0.0
    for m, nu in enumerate(instance.inputs):
        value, _ = solve_ot(p, nu.weights, instance.cost.block(m))
        total += value
    return total


def objective_gap(p, instance, p_exact):
    """Objective excess of ``p`` over a reference barycenter ``p_exact``.

    Nonnegative (up to solver tolerance) whenever ``p_exact`` is optimal.
    """
    return barycenter_objective(p, instance) - barycenter_objective(p_exact, instance)
