"""Exact projection kernels for the barycenter solver.

Two geometric operations are needed, both with closed forms:

* projection onto a scaled simplex ``{u >= 0 : sum(u) = tau}``, applied to
  each plan column, and
* projection onto the subspace of balanced multi-plans (all slabs sharing
  the same row sums), applied across slabs, which reduces to averaging the
  slab marginals.

Slabs are kept in Fortran (column-major) order so that a column projection
touches contiguous memory.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "project_simplex",
    "project_simplex_sorted",
    "project_simplex_columns",
    "averaging_weights",
    "MultiPlan",
    "project_balanced",
    "dist_balanced",
]


@njit(cache=True, nogil=True)
def _unit_simplex_threshold(y, keep, spare, recip):
    """Threshold lam so that max(y - lam, 0) sums to one (Condat's method).

    ``keep`` and ``spare`` are scratch int64 buffers of length >= len(y)
    and ``recip[k]`` must hold 1/k (divisions dominate the run time
    otherwise).  Expected O(n); lam maintains the invariant
    lam = (sum(active) - 1)/K.
    """
    n = y.shape[0]
    keep[0] = 0
    nk = 1
    ns = 0
    lam = y[0] - 1.0
    for i in range(1, n):
        yi = y[i]
        if yi > lam:
            lam += (yi - lam) * recip[nk + 1]
            if lam > yi - 1.0:
                keep[nk] = i
                nk += 1
            else:
                for j in range(nk):
                    spare[ns + j] = keep[j]
                ns += nk
                keep[0] = i
                nk = 1
                lam = yi - 1.0
    if ns > 0:
        for j in range(ns):
            yi = y[spare[j]]
            if yi > lam:
                keep[nk] = spare[j]
                nk += 1
                lam += (yi - lam) * recip[nk]
    changed = True
    while changed:
        changed = False
        i = 0
        while i < nk:
            yi = y[keep[i]]
            if yi <= lam:
                nk -= 1
                keep[i] = keep[nk]
                lam += (lam - yi) * recip[nk]
                changed = True
            else:
                i += 1
    return lam


@njit(cache=True, nogil=True)
def _project_simplex_scaled(w, tau, out, keep, spare, recip):
    """out = projection of w onto {u >= 0 : sum(u) = tau}, tau > 0."""
    n = w.shape[0]
    inv_tau = 1.0 / tau
    for i in range(n):
        out[i] = w[i] * inv_tau
    lam = _unit_simplex_threshold(out, keep, spare, recip)
    for i in range(n):
        v = out[i] - lam
        out[i] = v * tau if v > 0.0 else 0.0


def _recip_table(n):
    table = np.empty(n + 2)
    table[0] = 0.0
    table[1:] = 1.0 / np.arange(1, n + 2)
    return table


def _check_simplex_args(w, tau):
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("expected a nonempty 1-d vector")
    if not np.isfinite(w).all():
        raise ValueError("input vector must be finite")
    if not np.isfinite(tau) or tau < 0.0:
        raise ValueError(f"target sum must be finite and nonnegative, got {tau}")
    return w, float(tau)


def project_simplex(w, tau=1.0):
    """Euclidean projection of ``w`` onto the scaled simplex of mass ``tau``.

    Returns the unique minimizer of ``||u - w||`` over
    ``{u >= 0 : sum(u) = tau}``.  ``tau = 0`` yields the zero vector; for
    ``tau > 0`` the problem is rescaled to the unit simplex, solved by
    Condat's exact sort-free method, and scaled back.
    """
    w, tau = _check_simplex_args(w, tau)
    out = np.empty_like(w)
    if tau == 0.0:
        out[:] = 0.0
        return out
    n = w.size
    keep = np.empty(n, dtype=np.int64)
    spare = np.empty(n, dtype=np.int64)
    _project_simplex_scaled(w, tau, out, keep, spare, _recip_table(n))
    return out


def project_simplex_sorted(w, tau=1.0):
    """Sort-based O(n log n) reference for :func:`project_simplex`.

    Kept for differential testing of the sort-free kernel; follows the
    classical cumulative-sum characterization of the threshold.
    """
    w, tau = _check_simplex_args(w, tau)
    if tau == 0.0:
        return np.zeros_like(w)
    y = w / tau
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, y.size + 1)
    rho = np.nonzero(u * ks > css)[0][-1]
    lam = css[rho] / (rho + 1.0)
    return tau * np.maximum(y - lam, 0.0)


def project_simplex_columns(W, taus):
    """Project each column ``W[:, s]`` onto the simplex of mass ``taus[s]``.

    Convenience batch wrapper over the per-column kernel; the solver fuses
    this projection into its slab update instead of calling it directly.
    """
    W = np.asarray(W, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    if W.ndim != 2 or taus.shape != (W.shape[1],):
        raise ValueError("cost/target shape mismatch")
    out = np.empty_like(W, order="F")
    for s in range(W.shape[1]):
        out[:, s] = project_simplex(W[:, s], taus[s])
    return out


def averaging_weights(sizes):
    """Marginal-averaging weights ``a_m = (1/S_m) / sum_j (1/S_j)``.

    ``sizes`` holds the per-measure column counts S_m.  The weights are
    strictly positive, sum to one, and collapse to 1/M when all sizes agree.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.ndim != 1 or sizes.size == 0 or not (sizes > 0).all():
        raise ValueError("sizes must be positive")
    inv = 1.0 / sizes
    return inv / inv.sum()


class MultiPlan:
    """One transport-plan slab per measure, with cached row-sum marginals.

    ``slabs[m]`` has shape (R, S_m) and is stored column-major; during
    iteration entries may take any sign.  ``marginals[m]`` caches the row
    sums of slab m and must stay within 1e-12 of a recomputation after
    every mutation (the solver refreshes it on each slab update).
    """

    __slots__ = ("slabs", "marginals")

    def __init__(self, slabs, marginals=None):
        slabs = [np.asfortranarray(s, dtype=np.float64) for s in slabs]
        if not slabs:
            raise ValueError("need at least one slab")
        R = slabs[0].shape[0]
        for s in slabs:
            if s.ndim != 2 or s.shape[0] != R:
                raise ValueError("slabs must share their row count")
        self.slabs = slabs
        if marginals is None:
            marginals = np.empty((len(slabs), R))
            for m, s in enumerate(slabs):
                marginals[m] = s.sum(axis=1)
        else:
            marginals = np.array(marginals, dtype=np.float64)
            if marginals.shape != (len(slabs), R):
                raise ValueError("marginal cache shape mismatch")
        self.marginals = marginals

    @property
    def n_measures(self):
        return len(self.slabs)

    @property
    def n_rows(self):
        return self.slabs[0].shape[0]

    @property
    def sizes(self):
        return np.array([s.shape[1] for s in self.slabs])

    def copy(self):
        return MultiPlan([s.copy(order="F") for s in self.slabs], self.marginals.copy())

    def refresh_marginal(self, m):
        self.marginals[m] = self.slabs[m].sum(axis=1)

    def marginal_cache_error(self):
        """Max |cached - recomputed| over all marginals (debug check)."""
        err = 0.0
        for m, s in enumerate(self.slabs):
            err = max(err, float(np.abs(self.marginals[m] - s.sum(axis=1)).max()))
        return err


def project_balanced(plan, weights=None):
    """Project a multi-plan onto the subspace of balanced plans.

    The projected slabs all share the row-sum vector
    ``p = sum_m a_m * marginals[m]`` and are obtained by shifting each slab
    row by the marginal defect spread over its columns:

        pi[m][r, s] = theta[m][r, s] + (p[r] - marginals[m][r]) / S_m.

    Returns ``(pi, p)`` where ``pi`` is a new :class:`MultiPlan`.
    """
    if weights is None:
        weights = averaging_weights(plan.sizes)
    p = weights @ plan.marginals
    slabs = []
    for m, theta in enumerate(plan.slabs):
        shift = (p - plan.marginals[m]) / theta.shape[1]
        slabs.append(theta + shift[:, None])
    return MultiPlan(slabs), p


def dist_balanced(marginals, p, sizes):
    """Distance from a multi-plan to the balanced subspace.

    Equals ``||project_balanced(theta) - theta||_F`` but is computed in
    O(M R) from the cached marginals alone:
    ``sqrt(sum_m ||p - marginals[m]||^2 / S_m)``.
    """
    marginals = np.asarray(marginals, dtype=np.float64)
    diff = p[None, :] - marginals
    return float(np.sqrt(((diff * diff).sum(axis=1) / np.asarray(sizes)).sum()))
