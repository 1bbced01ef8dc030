"""Barycenter solver: Douglas-Rachford splitting driven by averaged marginals.

Each iteration averages the cached slab marginals into the current
barycenter estimate ``p``, then updates every selected slab column by an
exact projection onto its scaled simplex.  Balanced problems run with an
infinite penalty (full projection steps, ``t = 1``); unbalanced problems
damp the step through a finite penalty ``gamma``, which prices the
distance to the balanced subspace.

The per-slab update fuses the auxiliary plan and the projection into a
single in-place pass, so memory stays at the plan/cost storage plus O(R)
scratch per worker.  Slab updates for distinct measures are independent
and are spread over a thread pool; the averaging step is the rendezvous.
"""

from __future__ import annotations

import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .measures import ProblemInstance
from .projections import (
    MultiPlan,
    _recip_table,
    _unit_simplex_threshold,
    averaging_weights,
    dist_balanced,
)

__all__ = [
    "ConfigError",
    "NumericFailure",
    "RandomPartition",
    "SolverConfig",
    "SolveReport",
    "default_rho",
    "initial_state",
    "step_damping",
    "update_plan",
    "stopping_test",
    "solve",
    "save_state",
    "load_state",
]

TRACE_COLUMNS = ("iter", "t", "distL", "residual", "mass", "seconds")
_TRACE_LIMIT = 10_000


class ConfigError(ValueError):
    """Invalid solver configuration for the given instance."""


class NumericFailure(RuntimeError):
    """Non-finite values appeared in the iterates; carries the report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class RandomPartition:
    """Randomized selection over ``buckets`` contiguous groups of measures.

    Bucket i is drawn with probability ``beta_i``, the summed barycenter
    weights of its measures, using a counter-based Philox generator so a
    run is reproducible from the seed alone.  ``shuffle`` permutes the
    measure indices once at startup before the contiguous split.
    """

    buckets: int
    shuffle: bool = False


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs for :func:`solve`.

    ``rho=None`` picks 1/mean(nonzero cost), which normalizes the cost
    term inside the column updates to unit scale.  ``gamma=inf`` is the
    balanced mode and is rejected for unbalanced instances; any finite
    ``gamma >= 0`` runs the mass-tolerant mode (``gamma = 0`` decouples
    the measures entirely and is only useful as a degenerate reference).
    ``stopping_rule`` is ``"theta_inf_norm"`` (sup-norm of the plan step,
    the justified test) or ``"barycenter_delta"`` (heuristic).
    """

    rho: float | None = None
    gamma: float = math.inf
    tol: float = 1e-6
    max_iterations: int = 100_000
    selection: str | RandomPartition = "all"
    seed: int = 0
    stopping_rule: str = "theta_inf_norm"
    workers: int = 1
    debug: bool = False

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if math.isnan(self.gamma) or self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0 or inf, got {self.gamma}")
        if not self.tol > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tol}")
        if self.max_iterations < 1:
            raise ConfigError("need at least one iteration")
        if isinstance(self.selection, str):
            if self.selection != "all":
                raise ConfigError(f"unknown selection {self.selection!r}")
        elif not isinstance(self.selection, RandomPartition):
            raise ConfigError("selection must be 'all' or a RandomPartition")
        elif self.selection.buckets < 1:
            raise ConfigError("partition needs at least one bucket")
        if self.stopping_rule not in ("theta_inf_norm", "barycenter_delta"):
            raise ConfigError(f"unknown stopping rule {self.stopping_rule!r}")
        if self.workers < 1:
            raise ConfigError("worker count must be positive")


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a solve: final barycenter, termination, and trace.

    ``trace`` rows are ``(iter, t, distL, residual, mass, seconds)``
    sampled every iteration up to 10^4 rows and geometrically thinned
    beyond that.  ``plan`` holds the final multi-plan when the solve was
    asked to keep it (for checkpointing), else None.
    """

    barycenter: np.ndarray
    iterations: int
    termination: str
    trace: np.ndarray
    wall_time: float
    plan: MultiPlan | None = None

    @property
    def converged(self):
        return self.termination == "converged"


@njit(cache=True, nogil=True)
def _update_slab(theta, cost, q, shift, inv_rho, recip):
    """One damped splitting update of a slab, column by column, in place.

    ``shift[r]`` is ``t * (p[r] - p_m[r]) / S_m``.  Each column s becomes
    the simplex projection (mass q[s]) of
    ``theta[:, s] + 2*shift - cost[:, s]/rho`` minus ``shift``.  Returns
    the refreshed row sums and the sup-norm of the column changes.
    """
    R, S = theta.shape
    w = np.empty(R)
    keep = np.empty(R, dtype=np.int64)
    spare = np.empty(R, dtype=np.int64)
    marginal = np.zeros(R)
    residual = 0.0
    for s in range(S):
        qs = q[s]
        if qs == 0.0:
            for r in range(R):
                new = -shift[r]
                diff = abs(new - theta[r, s])
                if diff > residual:
                    residual = diff
                theta[r, s] = new
                marginal[r] += new
            continue
        inv_q = 1.0 / qs
        for r in range(R):
            w[r] = (theta[r, s] + 2.0 * shift[r] - cost[r, s] * inv_rho) * inv_q
        lam = _unit_simplex_threshold(w, keep, spare, recip)
        for r in range(R):
            proj = w[r] - lam
            proj = proj * qs if proj > 0.0 else 0.0
            new = proj - shift[r]
            diff = abs(new - theta[r, s])
            if diff > residual:
                residual = diff
            theta[r, s] = new
            marginal[r] += new
    return marginal, residual


def default_rho(cost):
    """Step parameter 1/mean(nonzero cost entries); 1.0 for all-zero costs."""
    total = 0.0
    count = 0
    for m in range(cost.n_measures):
        block = cost.block(m)
        nz = block[block > 0]
        total += float(nz.sum())
        count += nz.size
    if count == 0:
        return 1.0
    return count / total


def initial_state(instance, theta0=None):
    """Initial multi-plan; defaults to the product plan ``q_s / R``.

    The product plan spreads each input atom uniformly over the barycenter
    support, so every slab marginal starts uniform with the input's mass.
    A user-supplied plan is validated against the instance shapes.
    """
    R = instance.n_atoms
    if theta0 is not None:
        if theta0.n_measures != instance.n_measures or theta0.n_rows != R:
            raise ConfigError("supplied initial plan does not match the instance")
        for m, nu in enumerate(instance.inputs):
            if theta0.slabs[m].shape[1] != nu.support.n_atoms:
                raise ConfigError(f"initial slab {m} has the wrong column count")
        return theta0.copy()
    slabs = [np.repeat(nu.weights[None, :] / R, R, axis=0) for nu in instance.inputs]
    return MultiPlan(slabs)


def step_damping(p, marginals, sizes, rho, gamma):
    """Damping factor in (0, 1] of the penalized projection step.

    Equals 1 while ``rho * dist <= gamma`` (always, in balanced mode) and
    ``gamma / (rho * dist)`` beyond, which is the exact proximal step of
    ``gamma * dist`` to the balanced subspace.  A zero distance takes the
    full projection step regardless of ``gamma``.
    """
    dist = dist_balanced(marginals, p, sizes)
    if dist == 0.0 or rho * dist <= gamma:
        return 1.0
    return gamma / (rho * dist)


def update_plan(theta, cost_block, q, p, p_m, t, rho):
    """Update one slab in place; returns ``(marginal, residual)``.

    Thin wrapper over the fused kernel for direct use in tests and custom
    loops; ``theta`` must be a float64 slab of shape (R, len(q)).
    """
    shift = t * (p - p_m) / theta.shape[1]
    return _update_slab(theta, cost_block, q, shift, 1.0 / rho, _recip_table(theta.shape[0]))


def stopping_test(theta_prev, theta_next, p_prev, p_next, config):
    """Whether two consecutive iterates satisfy the configured stop rule.

    ``theta_inf_norm`` compares plans entrywise in the sup norm (slabs
    untouched by a randomized step contribute zero on their own);
    ``barycenter_delta`` compares the averaged marginals and is heuristic.
    """
    if config.stopping_rule == "barycenter_delta":
        return float(np.linalg.norm(p_next - p_prev)) <= config.tol
    residual = 0.0
    for prev, nxt in zip(theta_prev.slabs, theta_next.slabs):
        residual = max(residual, float(np.abs(nxt - prev).max()))
    return residual <= config.tol


class _Trace:
    """Iteration trace capped at a row budget by geometric thinning."""

    def __init__(self, limit=_TRACE_LIMIT):
        self.rows = []
        self.limit = limit
        self.stride = 1

    def add(self, iteration, t, dist, residual, mass, seconds):
        if iteration % self.stride == 0:
            self.rows.append((iteration, t, dist, residual, mass, seconds))
            if len(self.rows) >= self.limit:
                self.rows = self.rows[::2]
                self.stride *= 2

    def to_array(self):
        if not self.rows:
            return np.empty((0, len(TRACE_COLUMNS)))
        return np.array(self.rows, dtype=np.float64)


def _make_buckets(instance, config):
    """Measure buckets plus their draw probabilities, or None when fixed."""
    M = instance.n_measures
    if config.selection == "all":
        return [np.arange(M)], None
    nb = config.selection.buckets
    if nb > M:
        raise ConfigError(f"cannot split {M} measures into {nb} buckets")
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    order = rng.permutation(M) if config.selection.shuffle else np.arange(M)
    buckets = [np.sort(part) for part in np.array_split(order, nb)]
    alpha = instance.cost.weights
    beta = np.array([alpha[part].sum() for part in buckets])
    return buckets, (beta / beta.sum(), rng)


def solve(instance, config=SolverConfig(), theta0=None, keep_plan=False):
    """Run the averaged-marginals iteration until the stop rule fires.

    Balanced instances may run with ``gamma = inf``; unbalanced instances
    must supply a finite ``gamma`` (the balanced subspace is empty of
    feasible plans, so the hard constraint cannot be enforced).  Returns a
    :class:`SolveReport` whose barycenter is the marginal average computed
    at the top of the final iteration; ``keep_plan`` attaches the final
    multi-plan for checkpointing.

    Raises :class:`NumericFailure` (report attached) if iterates stop
    being finite and :class:`ConfigError` for invalid mode choices.
    """
    if not isinstance(instance, ProblemInstance):
        raise TypeError("expected a ProblemInstance")
    if math.isinf(config.gamma) and not instance.balanced:
        raise ConfigError(
            "instance is unbalanced (input masses "
            f"{instance.masses().tolist()}); a finite gamma is required"
        )
    rho = config.rho if config.rho is not None else default_rho(instance.cost)
    plan = initial_state(instance, theta0)
    sizes = plan.sizes
    weights = averaging_weights(sizes)
    q_vectors = [np.ascontiguousarray(nu.weights) for nu in instance.inputs]
    cost_blocks = [
        np.asfortranarray(instance.cost.block(m)) for m in range(instance.n_measures)
    ]
    buckets, randomization = _make_buckets(instance, config)

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    trace = _Trace()
    start = time.perf_counter()
    termination = "max_iterations"
    p = weights @ plan.marginals
    p_prev = None
    last_drawn = np.full(len(buckets), -1, dtype=np.int64)
    streak = 0
    iterations = 0

    recip = _recip_table(plan.n_rows)

    def run_one(m, t):
        shift = t * (p - plan.marginals[m]) / sizes[m]
        return _update_slab(
            plan.slabs[m], cost_blocks[m], q_vectors[m], shift, 1.0 / rho, recip
        )

    try:
        for k in range(config.max_iterations):
            p = weights @ plan.marginals
            if not np.isfinite(p).all():
                raise NumericFailure(
                    f"non-finite barycenter iterate at iteration {k}",
                    _report(p, k, "numeric_failure", trace, start),
                )
            dist = dist_balanced(plan.marginals, p, sizes)
            t = 1.0 if (dist == 0.0 or rho * dist <= config.gamma) else config.gamma / (
                rho * dist
            )

            if randomization is None:
                drawn = 0
            else:
                beta, rng = randomization
                drawn = int(rng.choice(len(buckets), p=beta))
            selected = buckets[drawn]
            last_drawn[drawn] = k

            if pool is not None and selected.size > 1:
                results = list(pool.map(lambda m: run_one(m, t), selected))
            else:
                results = [run_one(m, t) for m in selected]
            residual = 0.0
            for m, (marginal, res) in zip(selected, results):
                plan.marginals[m] = marginal
                residual = max(residual, res)
            if config.debug and plan.marginal_cache_error() > 1e-12:
                raise AssertionError("marginal cache drifted beyond 1e-12")
            if not math.isfinite(residual):
                raise NumericFailure(
                    f"non-finite plan update at iteration {k}",
                    _report(p, k, "numeric_failure", trace, start),
                )

            iterations = k + 1
            trace.add(k, t, dist, residual, float(p.sum()), time.perf_counter() - start)

            if config.stopping_rule == "theta_inf_norm":
                hit = residual <= config.tol
            else:
                hit = p_prev is not None and float(np.linalg.norm(p - p_prev)) <= config.tol
            streak = streak + 1 if hit else 0
            # Untouched slabs contribute nothing to the residual, so in
            # randomized mode every bucket must have been visited within
            # the current sub-tolerance streak before stopping.
            if streak >= 1 and (last_drawn >= k - streak + 1).all():
                termination = "converged"
                break
            p_prev = p
    finally:
        if pool is not None:
            pool.shutdown()

    return _report(p, iterations, termination, trace, start, plan if keep_plan else None)


def _report(p, iterations, termination, trace, start, plan=None):
    # The limit point is a nonnegative weight vector; finite iterates can
    # undershoot zero by a few ulps, which would poison downstream
    # measure/oracle validation, so clip at the reporting boundary.
    return SolveReport(
        barycenter=np.maximum(np.array(p), 0.0),
        iterations=iterations,
        termination=termination,
        trace=trace.to_array(),
        wall_time=time.perf_counter() - start,
        plan=plan,
    )


_CHECKPOINT_MAGIC = b"WBRYSTATE"


def save_state(path, plan, iteration=0):
    """Serialize a multi-plan to a flat little-endian binary file.

    Layout: 9-byte magic, then u64 iteration, M, R and the M column
    counts, then each slab in column-major order and the cached marginals,
    all as little-endian 64-bit floats.
    """
    sizes = plan.sizes
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<QQQ", iteration, plan.n_measures, plan.n_rows))
        fh.write(struct.pack(f"<{len(sizes)}Q", *sizes))
        for slab in plan.slabs:
            fh.write(np.asfortranarray(slab).astype("<f8").tobytes(order="F"))
        fh.write(plan.marginals.astype("<f8").tobytes())


def load_state(path, instance=None):
    """Read a multi-plan checkpoint; returns ``(plan, iteration)``.

    When an instance is given the stored shapes are validated against it.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a solver checkpoint")
        iteration, M, R = struct.unpack("<QQQ", fh.read(24))
        sizes = struct.unpack(f"<{M}Q", fh.read(8 * M))
        slabs = []
        for S in sizes:
            raw = np.frombuffer(fh.read(8 * R * S), dtype="<f8")
            slabs.append(raw.reshape((R, S), order="F").copy(order="F"))
        marginals = np.frombuffer(fh.read(8 * M * R), dtype="<f8").reshape(M, R)
    if instance is not None:
        if M != instance.n_measures or R != instance.n_atoms:
            raise ValueError("checkpoint does not match the instance")
        for m, nu in enumerate(instance.inputs):
            if sizes[m] != nu.support.n_atoms:
                raise ValueError(f"checkpoint slab {m} has the wrong column count")
    return MultiPlan(slabs, marginals), int(iteration)
