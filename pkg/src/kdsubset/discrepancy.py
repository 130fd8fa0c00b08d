"""Stateless discrepancy evaluators and Monte Carlo oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernels import SteinKernel, _check_unit_cube
from .pointset import DomainError, as_array

__all__ = [
    "DiscrepancyValue",
    "ResourceGuardError",
    "NEGATIVE_TOLERANCE",
    "LINF_GRID_LIMIT",
    "kernel_disc_sq",
    "warnock_l2_sq",
    "ksd_sq",
    "linf_star_exact",
    "linf_star_lower_bound",
    "mc_l2_oracle",
    "MCEstimate",
]

NEGATIVE_TOLERANCE = 1e-12
LINF_GRID_LIMIT = 10**9
_PAIR_BLOCK = 512


class ResourceGuardError(RuntimeError):
    """Exact evaluation would exceed the configured work limit."""


@dataclass(frozen=True)
class DiscrepancyValue:
    """A discrepancy value; ``clamped`` flags a tiny negative rounded up to zero."""

    kind: str
    value: float
    raw: float
    clamped: bool = False

    def __float__(self) -> float:
        return self.value


def _squared(kind: str, raw: float) -> DiscrepancyValue:
    if raw >= 0.0:
        return DiscrepancyValue(kind, raw, raw)
    if raw >= -NEGATIVE_TOLERANCE:
        return DiscrepancyValue(kind, 0.0, raw, clamped=True)
    raise ArithmeticError(f"{kind}: squared discrepancy {raw!r} is significantly negative")


def _symmetric_pair_sum(kernel, F: np.ndarray) -> float:
    """Sum of ``k(x_i, x_j)`` over all ordered pairs, visiting each block pair once."""
    n = F.shape[0]
    partial = []
    for a in range(0, n, _PAIR_BLOCK):
        Fa = F[a : a + _PAIR_BLOCK]
        partial.append(float(np.sum(kernel.gram(Fa, Fa))))
        for b in range(a + _PAIR_BLOCK, n, _PAIR_BLOCK):
            partial.append(2.0 * float(np.sum(kernel.gram(Fa, F[b : b + _PAIR_BLOCK]))))
    return math.fsum(partial)


def kernel_disc_sq(P, K) -> DiscrepancyValue:
    """Squared kernel discrepancy ``kFF - 2/n sum kF + 1/n^2 sum k``."""
    X = as_array(P)
    K = K.resolve(X.shape[1])
    F = K.featurize(X)
    n = F.shape[0]
    one_point = math.fsum(K.kF(F))
    pairs = _symmetric_pair_sum(K, F)
    raw = K.kFF - 2.0 * one_point / n + pairs / n**2
    kind = {"star": "l2star-sq", "weighted-star": "wstar-sq", "stein": "ksd-sq"}[K.family]
    return _squared(kind, raw)


def warnock_l2_sq(P) -> DiscrepancyValue:
    """Squared L2 star discrepancy by Warnock's closed form, O(d n^2)."""
    X = as_array(P)
    if not np.all((X >= 0.0) & (X <= 1.0)):
        raise DomainError("Warnock formula requires points in [0, 1]^d")
    n, d = X.shape
    one_point = math.fsum(np.prod((1.0 - X**2) / 2.0, axis=1))
    diagonal = math.fsum(np.prod(1.0 - X, axis=1))
    off = []
    for i in range(n - 1):
        off.append(float(np.sum(np.prod(1.0 - np.maximum(X[i], X[i + 1 :]), axis=1))))
    pairs = diagonal + 2.0 * math.fsum(off)
    raw = 3.0 ** (-d) - 2.0 * one_point / n + pairs / n**2
    return _squared("l2star-sq", raw)


def ksd_sq(P, K: SteinKernel) -> DiscrepancyValue:
    """Squared kernel Stein discrepancy ``1/n^2 sum_{i,j} k0(x_i, x_j)``."""
    if not isinstance(K, SteinKernel):
        raise TypeError("ksd_sq needs a SteinKernel")
    F = K.featurize(as_array(P))
    return _squared("ksd-sq", _symmetric_pair_sum(K, F) / F.shape[0] ** 2)


# ---------------------------------------------------------------------------
# L-infinity star discrepancy


def _critical_grid(X: np.ndarray):
    grids = [np.union1d(X[:, j], [1.0]) for j in range(X.shape[1])]
    size = 1
    for g in grids:
        size *= g.size
    return grids, size


def _local_discrepancy(X: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Max of the open- and closed-box local discrepancies at each corner row of ``Q``."""
    n = X.shape[0]
    # points with a coordinate equal to 1 never lie in [0, q) for q < 1
    closable = np.all(X < 1.0, axis=1)
    out = np.empty(Q.shape[0])
    step = max(1, (1 << 22) // max(1, n * X.shape[1]))
    for s in range(0, Q.shape[0], step):
        q = Q[s : s + step]
        vol = q[:, 0].copy()
        for j in range(1, q.shape[1]):
            vol = vol * q[:, j]
        lt = np.all(X[None, :, :] < q[:, None, :], axis=2)
        le = np.all(X[None, :, :] <= q[:, None, :], axis=2) & closable[None, :]
        out[s : s + step] = np.maximum(vol - lt.sum(1) / n, le.sum(1) / n - vol)
    return out


def linf_star_exact(P, limit: int = LINF_GRID_LIMIT) -> DiscrepancyValue:
    """Exact L-infinity star discrepancy by enumerating the critical grid.

    Every corner ``q`` of the grid formed by the point coordinates together with
    1 is visited; open counts (``x < q``) bound the supremum from below the
    volume, closed counts (``x <= q``) from above. Counting is done with
    running cumulative histograms, one slice of the first coordinate at a time.
    """
    X = as_array(P)
    _check_unit_cube(X)
    n, d = X.shape
    grids, size = _critical_grid(X)
    if size > limit:
        raise ResourceGuardError(
            f"critical grid has {size:.3g} corners (limit {limit:.3g}); "
            "use linf_star_lower_bound for a sampled lower bound"
        )
    idx = np.stack([np.searchsorted(grids[j], X[:, j]) for j in range(d)], axis=1)
    closable = np.all(X < 1.0, axis=1)
    rest_shape = tuple(g.size for g in grids[1:])
    rest_size = int(np.prod(rest_shape)) if rest_shape else 1
    if d > 1:
        flat = np.ravel_multi_index(tuple(idx[:, 1:].T), rest_shape)
    else:
        flat = np.zeros(n, dtype=np.int64)

    def cumulate(a):
        a = a.reshape(rest_shape).copy()
        for ax in range(a.ndim):
            a = np.cumsum(a, axis=ax)
        return a

    run_all = np.zeros(rest_size, dtype=np.int64)
    run_closed = np.zeros(rest_size, dtype=np.int64)
    prev_closed_all = np.zeros(rest_shape, dtype=np.int64)
    best = 0.0
    order = np.argsort(idx[:, 0], kind="stable")
    bounds = np.searchsorted(idx[order, 0], np.arange(grids[0].size + 1))
    for i0, q0 in enumerate(grids[0]):
        members = order[bounds[i0] : bounds[i0 + 1]]
        run_all += np.bincount(flat[members], minlength=rest_size)
        run_closed += np.bincount(flat[members[closable[members]]], minlength=rest_size)
        cum_all = cumulate(run_all)
        cum_closed = cumulate(run_closed)
        # open count at (i0, i1..) = all points with every index strictly below
        open_cnt = np.zeros(rest_shape, dtype=np.int64)
        if d > 1:
            open_cnt[(slice(1, None),) * (d - 1)] = prev_closed_all[(slice(None, -1),) * (d - 1)]
        else:
            open_cnt = prev_closed_all
        vol = _slice_volume(q0, grids[1:]) if d > 1 else np.asarray(q0)
        local = np.maximum(vol - open_cnt / n, cum_closed / n - vol)
        best = max(best, float(np.max(local)))
        prev_closed_all = cum_all
    return DiscrepancyValue("linf", best, best)


def _slice_volume(q0: float, grids) -> np.ndarray:
    # same left-to-right product order as q_1 * q_2 * ... * q_d
    vol = q0 * grids[0]
    for g in grids[1:]:
        vol = vol[..., None] * g
    return vol


def linf_star_lower_bound(P, trials: int, seed: int = 0) -> DiscrepancyValue:
    """Lower bound on the L-infinity star discrepancy from sampled grid corners.

    When ``trials`` covers the whole critical grid the exact value is returned.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    X = as_array(P)
    _check_unit_cube(X)
    grids, size = _critical_grid(X)
    if trials >= size:
        return linf_star_exact(X, limit=max(size, LINF_GRID_LIMIT))
    rng = np.random.default_rng(seed)
    Q = np.stack([g[rng.integers(0, g.size, size=trials)] for g in grids], axis=1)
    best = float(np.max(_local_discrepancy(X, Q)))
    return DiscrepancyValue("linf", best, best)


class MCEstimate(NamedTuple):
    value: float
    stderr: float


def mc_l2_oracle(P, samples: int, seed: int = 0, chunk: int = 100_000) -> MCEstimate:
    """Plain Monte Carlo estimate of the squared L2 star discrepancy integral."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    X = as_array(P)
    _check_unit_cube(X)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    chunk = max(1, min(chunk, (1 << 23) // max(1, n * d)))
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        q = rng.random((b, d))
        inside = np.all(X[None, :, :] < q[:, None, :], axis=2).sum(axis=1) / n
        f = (inside - np.prod(q, axis=1)) ** 2
        total += float(np.sum(f))
        total_sq += float(np.sum(f * f))
        done += b
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    return MCEstimate(mean, math.sqrt(var / samples))
