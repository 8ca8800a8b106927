"""Euclidean projection onto the cone ``{(eps, tau): tau_i <= eps, eps >= 0}``.

Points are flat vectors of length ``n + 1``: slot 0 holds the shared upper
bound (eps), slots ``1..n`` hold the bounded coordinates (tau).  Projecting a
point ``gamma`` onto the cone reduces to a one dimensional problem: for any
fixed bound ``e`` the best coordinates are ``min(gamma_i, e)``, so the bound
solves

    minimize  (e - gamma_0)^2 + sum_i max(gamma_i - e, 0)^2   over e >= 0.

The unconstrained minimizer is the mean of slot 0 and the largest ``k*``
coordinates, where ``k*`` is found by a threshold scan over the coordinates
sorted in descending order; the final bound clamps that mean at zero.  One
sort plus a linear scan, O(n log n) total.

Four routes compute the same map and cross-check each other:

* :func:`project_exact` -- vectorised cumulative-mean threshold search,
* :func:`project_onepass` -- scalar running-average scan (same sort),
* :func:`project_differentiable` -- mask/average formulation built from
  elementwise max/min on pre-sorted input, suitable for unrolling,
* :func:`project_oracle_qp` -- brute-force active-set enumeration, the
  independent verifier (test scale only).

:func:`project_pair` is the O(1) special case for a single (tau, eps) pair.

All functions are pure; the module-level sort counter exists only so tests
can assert which routes perform sorting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_ORACLE_SIZE = 20

_sort_calls = 0


def sort_call_count() -> int:
    """Number of sorts performed by projection routines (diagnostic only)."""
    return _sort_calls


def _sorted_descending(values: np.ndarray) -> np.ndarray:
    # Stable on the original index so equal values keep a deterministic order.
    global _sort_calls
    _sort_calls += 1
    return values[np.argsort(-values, kind="stable")]


def _as_cone_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("cone vector must be one-dimensional with length >= 2")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cone vector entries must be finite")
    return arr


def is_feasible(v, tol: float = 0.0) -> bool:
    """Membership test: ``v[0] >= 0`` and ``v[i] <= v[0]`` for all ``i >= 1``."""
    arr = np.asarray(v, dtype=float)
    return bool(arr[0] >= -tol and np.all(arr[1:] <= arr[0] + tol))


@dataclass(frozen=True)
class ProjectionResult:
    """Projection output.

    ``projected`` is the projected vector, ``active_count`` the number of
    coordinates truncated to the common value, and ``common_value`` the value
    assigned to slot 0 and every truncated coordinate (the mean of slot 0 and
    the merged coordinates, clamped at zero).
    """

    projected: np.ndarray
    active_count: int
    common_value: float


def _finish(original: np.ndarray, common: float) -> ProjectionResult:
    common = float(common)
    out = np.empty_like(original)
    out[0] = common
    np.minimum(original[1:], common, out=out[1:])
    active = int(np.count_nonzero(original[1:] > common))
    return ProjectionResult(out, active, common)


def project_exact(v) -> ProjectionResult:
    """Exact Euclidean projection via sorting and thresholding.

    Sorts the coordinates descending, then finds the largest prefix whose
    members all exceed the cumulative mean of slot 0 and the prefix.  The
    common value is that mean clamped at zero; coordinates above it are
    truncated, the rest are returned unchanged.
    """
    gamma = _as_cone_vector(v)
    u = _sorted_descending(gamma[1:])
    n = u.size
    means = (gamma[0] + np.cumsum(u)) / np.arange(2, n + 2)
    merge = u > means
    k = n if bool(merge.all()) else int(np.argmin(merge))
    raw = gamma[0] if k == 0 else means[k - 1]
    return _finish(gamma, max(raw, 0.0))


def project_onepass(v) -> ProjectionResult:
    """Projection by a single running-average scan after one sort.

    Maintains the mean of slot 0 and the coordinates merged so far; a
    coordinate merges while it exceeds the current mean, and the first
    failure stops the scan.  Output is identical to :func:`project_exact`.
    """
    gamma = _as_cone_vector(v)
    u = _sorted_descending(gamma[1:])
    mean = gamma[0]
    for t in range(u.size):
        if u[t] <= mean:
            break
        mean += (u[t] - mean) / (t + 2)
    return _finish(gamma, max(mean, 0.0))


def project_differentiable(v) -> ProjectionResult:
    """Projection written as elementwise max/min operations on sorted input.

    Requires slots ``1..n`` already sorted in descending order (an exact sort
    stands in for a differentiable one).  Builds the vector of top-``i``
    averages (slot 0 included), marks the coordinates exceeding the average of
    everything above them, recovers the common value as the masked weighted
    ratio, and finishes with an elementwise ``min`` against it.
    """
    gamma = _as_cone_vector(v)
    tail = gamma[1:]
    n = tail.size
    if np.any(np.diff(tail) > 0):
        raise ValueError("slots 1..n must be sorted in descending order")
    top_avg = np.cumsum(gamma)[:n] / np.arange(1, n + 1)
    mask = (tail - top_avg > 0).astype(float)
    merged = mask.sum()
    raw = (gamma[0] + float(mask @ tail)) / (merged + 1.0)
    return _finish(gamma, max(raw, 0.0))


def project_pair(tau_i: float, eps: float) -> tuple[float, float]:
    """O(1) projection of a single (tau, eps) pair onto the cone.

    If the pair is ordered (tau <= eps) only the sign of eps needs fixing;
    otherwise both collapse to their average.  The bound is clamped at zero
    and tau truncated against it, which keeps the output feasible even when
    eps went negative while tau stayed positive.
    """
    if not (np.isfinite(tau_i) and np.isfinite(eps)):
        raise ValueError("pair entries must be finite")
    e = 0.5 * (tau_i + eps) if tau_i > eps else eps
    e = max(e, 0.0)
    return min(tau_i, e), e


def project_oracle_qp(v) -> np.ndarray:
    """Brute-force projection by exhaustive active-set enumeration.

    Enumerates every subset of ``tau_i = eps`` constraints, with and without
    the ``eps = 0`` constraint, solves each induced one-dimensional problem,
    and returns the feasible candidate with minimal distance.  Exponential in
    ``n``; limited to n <= 20 (test scale).  Shares no logic with the
    sort-based routes.
    """
    gamma = _as_cone_vector(v)
    tail = gamma[1:]
    n = tail.size
    if n > _MAX_ORACLE_SIZE:
        raise ValueError(f"oracle limited to n <= {_MAX_ORACLE_SIZE}, got n = {n}")

    # Subset-doubling tables indexed by bitmask: sum, sum of squares, size,
    # and the max over the complement (for feasibility of unmerged slots).
    size = 1 << n
    sums = np.empty(size)
    sumsq = np.empty(size)
    counts = np.empty(size)
    max_out = np.empty(size)
    sums[0] = sumsq[0] = counts[0] = 0.0
    max_out[0] = -np.inf
    for i in range(n):
        half = 1 << i
        np.add(sums[:half], tail[i], out=sums[half : 2 * half])
        np.add(sumsq[:half], tail[i] ** 2, out=sumsq[half : 2 * half])
        np.add(counts[:half], 1.0, out=counts[half : 2 * half])
        max_out[half : 2 * half] = max_out[:half]
        np.maximum(max_out[:half], tail[i], out=max_out[:half])

    # Family 1: eps free.  Subspace minimizer sets eps to the mean of slot 0
    # and the merged coordinates; the squared distance collapses to the
    # within-group variance form sum(values^2) - (k+1) * mean^2.  Feasible
    # when eps is nonnegative and dominates the unmerged coordinates.
    base = gamma[0] ** 2 + sumsq
    eps_free = (gamma[0] + sums) / (counts + 1.0)
    obj_free = base - (counts + 1.0) * eps_free**2
    ok_free = (eps_free >= 0.0) & (eps_free >= max_out)
    obj_free = np.where(ok_free, obj_free, np.inf)

    # Family 2: eps = 0 active, merged coordinates pinned to zero.
    obj_zero = np.where(max_out <= 0.0, base, np.inf)

    best_free = int(np.argmin(obj_free))
    best_zero = int(np.argmin(obj_zero))
    out = gamma.copy()
    if obj_free[best_free] <= obj_zero[best_zero]:
        mask, eps_star = best_free, float(eps_free[best_free])
    else:
        mask, eps_star = best_zero, 0.0
    out[0] = eps_star
    for i in range(n):
        if mask >> i & 1:
            out[i + 1] = eps_star
    return out


def kkt_residuals(original, result: ProjectionResult) -> dict[str, float]:
    """Optimality certificate residuals for a projection output.

    Reconstructs the multipliers ``d_i = gamma_i - tau_i`` for the coordinate
    constraints and the slot-0 multiplier from stationarity, then reports the
    worst violation of primal feasibility, dual nonnegativity, and
    complementary slackness.  All residuals are ~0 at the true projection.
    """
    gamma = _as_cone_vector(original)
    proj = result.projected
    eps = proj[0]
    d = gamma[1:] - proj[1:]
    d0 = eps - gamma[0] - d.sum()
    return {
        "primal_ineq": float(max(np.max(proj[1:] - eps, initial=0.0), 0.0)),
        "primal_sign": float(max(-eps, 0.0)),
        "dual_sign": float(max(np.max(-d, initial=0.0), -d0, 0.0)),
        "complementarity": float(
            max(np.max(np.abs(d * (proj[1:] - eps)), initial=0.0), abs(d0 * eps))
        ),
    }


def kkt_ok(original, result: ProjectionResult, tol: float = 1e-8) -> bool:
    """True when every KKT residual of ``result`` is within ``tol``."""
    return max(kkt_residuals(original, result).values()) <= tol
