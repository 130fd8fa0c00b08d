r"""Swap-based subset selection for kernel discrepancies.

With a fixed target size ``m`` the squared discrepancy of an index subset
``S`` splits into a constant and pairwise contributions,

.. math::
    D^2(S) = c + \sum_{i, j \in S} V(i, j), \qquad
    V(i, j) = \frac{k(x_i, x_j)}{m^2} - [i = j] \frac{2}{m} k_F(x_i).

The search keeps, for every population index ``i``, the value
``B_i = V(i, i) + 2 \sum_{j \in S, j \ne i} V(i, j)``: removing a member
lowers the interaction sum by ``B_i``, adding a non-member raises it by
``B_i``. Swapping member ``h`` for outsider ``k`` therefore changes it by
``B_k - B_h - 2 V(h, k)``, and all of ``B`` is refreshed in ``O(dn)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .discrepancy import DiscrepancyValue, kernel_disc_sq
from .pointset import IndexSubset, as_array, gather

__all__ = [
    "EPS_IMPROVE",
    "GRAM_CACHE_MAX_N",
    "ContributionTable",
    "SubsetState",
    "SelectConfig",
    "SelectionResult",
    "TraceRow",
    "contribution_V",
    "init_state",
    "swap_delta",
    "best_swap",
    "apply_swap",
    "local_search",
    "perturb",
    "pick_initial",
    "select_subset",
]

EPS_IMPROVE = 1e-12
GRAM_CACHE_MAX_N = 1 << 14
_GRAM_CACHE_MAX_BYTES = 1 << 30
_ROW_CACHE_MAX_ELEMENTS = 1 << 25
_COLUMN_CHUNK = 1 << 16


class ContributionTable:
    """Kernel terms of one population at a fixed target size ``m``.

    Holds the featurized population, the per-index diagonal ``V(i, i)`` and,
    when allowed and small enough, the dense population Gram matrix.
    """

    def __init__(self, P, K, m: int, cache_gram: bool = True):
        X = as_array(P)
        if m < 1:
            raise ValueError("target size m must be >= 1")
        self.n, self.d = X.shape
        self.m = int(m)
        self.kernel = K.resolve(self.d)
        self.features = self.kernel.featurize(X)
        self.c = float(self.kernel.kFF)
        self.kF = self.kernel.kF(self.features)
        self.kdiag = self.kernel.diag(self.features)
        self.scale = 1.0 / self.m**2
        self.diag = -2.0 / self.m * self.kF + self.kdiag * self.scale
        self.gram = None
        if (
            cache_gram
            and self.n <= GRAM_CACHE_MAX_N
            and self.n * self.n * 8 <= _GRAM_CACHE_MAX_BYTES
        ):
            self.gram = self.kernel.gram(self.features, self.features)

    def kernel_rows(self, idx, cols=None) -> np.ndarray:
        """``k(x_i, x_j)`` for ``i`` in ``idx`` and ``j`` in ``cols`` (default: all)."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if self.gram is not None:
            return self.gram[idx] if cols is None else self.gram[np.ix_(idx, cols)]
        other = self.features if cols is None else self.features[cols]
        return self.kernel.gram(self.features[idx], other)

    def k(self, i: int, j: int) -> float:
        if self.gram is not None:
            return float(self.gram[i, j])
        return float(self.kernel.gram(self.features[i : i + 1], self.features[j : j + 1])[0, 0])

    def V(self, i: int, j: int) -> float:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"index out of range for population of {self.n}")
        if i == j:
            return float(self.diag[i])
        return self.k(i, j) * self.scale

    def subset_objective(self, members: np.ndarray) -> float:
        """``c + sum_{i,j in S} V(i, j)`` recomputed from scratch."""
        K = self.kernel_rows(members, members)
        off = float(np.sum(K)) - float(np.sum(np.diagonal(K)))
        return self.c + math.fsum(self.diag[members]) + off * self.scale


def contribution_V(P, K, m: int, i: int, j: int) -> float:
    X = as_array(P)
    n = X.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"index out of range for population of {n}")
    if m < 1:
        raise ValueError("m must be >= 1")
    K = K.resolve(X.shape[1])
    F = K.featurize(X[[i, j]] if i != j else X[[i]])
    if i == j:
        return float(-2.0 / m * K.kF(F)[0] + K.gram(F, F)[0, 0] / m**2)
    return float(K.gram(F[:1], F[1:])[0, 0] / m**2)


class SubsetState:
    """Mutable search state: members, contribution array ``B`` and interaction sum ``S``.

    ``slots`` holds the member indices in insertion order; when the population
    is small enough the kernel rows of the members are cached alongside
    (``rows[s]`` belongs to ``slots[s]``).
    """

    def __init__(self, table: ContributionTable, members):
        self.table = table
        members = np.asarray(members, dtype=np.int64)
        n, m = table.n, table.m
        if members.size != m:
            raise ValueError(f"subset has {members.size} points, table was built for m={m}")
        self.mask = np.zeros(n, dtype=bool)
        self.mask[members] = True
        if int(self.mask.sum()) != m:
            raise ValueError("duplicate index in subset")
        self.slots = np.sort(members)
        self.rows = None
        if table.gram is None and m * n <= _ROW_CACHE_MAX_ELEMENTS:
            self.rows = table.kernel_rows(self.slots)
        self._recompute()

    def _member_rows(self, cols=None) -> np.ndarray:
        if self.rows is not None:
            return self.rows if cols is None else self.rows[:, cols]
        return self.table.kernel_rows(self.slots, cols)

    def _recompute(self) -> None:
        t = self.table
        colsum = np.zeros(t.n)
        for start in range(0, t.n, _COLUMN_CHUNK):
            cols = np.arange(start, min(t.n, start + _COLUMN_CHUNK))
            colsum[cols] = np.sum(self._member_rows(cols), axis=0)
        self.B = t.diag + 2.0 * t.scale * colsum
        self.B[self.slots] -= 2.0 * t.scale * t.kdiag[self.slots]
        K = t.kernel_rows(self.slots, self.slots)
        off = float(np.sum(K)) - float(np.sum(np.diagonal(K)))
        self.S = math.fsum(t.diag[self.slots]) + off * t.scale

    @property
    def m(self) -> int:
        return self.table.m

    @property
    def objective(self) -> float:
        return self.S + self.table.c

    @property
    def members(self) -> np.ndarray:
        return np.sort(self.slots)

    @property
    def subset(self) -> IndexSubset:
        return IndexSubset(self.table.n, self.members)

    def copy(self) -> "SubsetState":
        new = object.__new__(SubsetState)
        new.table = self.table
        new.mask = self.mask.copy()
        new.slots = self.slots.copy()
        new.rows = None if self.rows is None else self.rows.copy()
        new.B = self.B.copy()
        new.S = self.S
        return new


def init_state(P, K, subset, *, table: ContributionTable | None = None, cache_gram=True):
    """Build the search state for ``subset``; ``B`` is filled for every population index."""
    members = subset.members if isinstance(subset, IndexSubset) else np.asarray(subset)
    if table is None:
        table = ContributionTable(P, K, len(members), cache_gram=cache_gram)
    return SubsetState(table, members)


def _check_swap(state: SubsetState, h: int, k: int) -> None:
    n = state.table.n
    if not (0 <= h < n and 0 <= k < n):
        raise IndexError(f"index out of range for population of {n}")
    if not state.mask[h]:
        raise ValueError(f"index {h} is not in the subset")
    if state.mask[k]:
        raise ValueError(f"index {k} is already in the subset")


def swap_delta(state: SubsetState, h: int, k: int) -> float:
    """Exact change of ``S`` when member ``h`` is replaced by outsider ``k``."""
    _check_swap(state, h, k)
    g = -2.0 * state.table.k(h, k) * state.table.scale
    return float(state.B[k] - state.B[h] + g)


def best_swap(state: SubsetState, eps: float = EPS_IMPROVE):
    """Best improving swap ``(h, k, delta)`` over all member/outsider pairs, or ``None``.

    Ties are broken by the smallest ``h``, then the smallest ``k``.
    """
    t = state.table
    outside = np.flatnonzero(~state.mask)
    if outside.size == 0:
        return None
    Bh = state.B[state.slots][:, None]
    best = (np.inf, -1, -1)
    for start in range(0, outside.size, _COLUMN_CHUNK):
        cols = outside[start : start + _COLUMN_CHUNK]
        D = state.B[cols][None, :] - Bh - 2.0 * t.scale * state._member_rows(cols)
        low = D.min()
        if low > best[0]:
            continue
        rs, cs = np.nonzero(D == low)
        cand = sorted(zip(state.slots[rs].tolist(), cols[cs].tolist()))
        if low < best[0] or cand[0] < best[1:]:
            best = (float(low), *cand[0])
    delta, h, k = best
    if delta >= -eps:
        return None
    return h, k, delta


def apply_swap(state: SubsetState, h: int, k: int) -> float:
    """Replace member ``h`` by outsider ``k`` in ``O(dn)``; returns the change of ``S``."""
    _check_swap(state, h, k)
    t = state.table
    slot = int(np.flatnonzero(state.slots == h)[0])
    row_h = state.rows[slot] if state.rows is not None else t.kernel_rows([h])[0]
    row_k = t.kernel_rows([k])[0]
    delta = float(state.B[k] - state.B[h] - 2.0 * t.scale * row_k[h])
    w = 2.0 * t.scale
    state.B -= w * row_h
    state.B[h] += w * t.kdiag[h]
    state.B += w * row_k
    state.B[k] -= w * t.kdiag[k]
    state.S += delta
    state.mask[h] = False
    state.mask[k] = True
    state.slots[slot] = k
    if state.rows is not None:
        state.rows[slot] = row_k
    return delta


@dataclass
class TraceRow:
    restart: int
    iteration: int
    objective: float
    swapped_out: int
    swapped_in: int
    event: str


def local_search(
    state: SubsetState,
    budget: float = 0.0,
    *,
    deadline: float | None = None,
    trace: list | None = None,
    restart: int = 0,
    eps: float = EPS_IMPROVE,
) -> SubsetState:
    """Apply best swaps until none improves by more than ``eps`` or time runs out.

    ``budget`` is in seconds (0 = unlimited); it is only checked between swaps.
    """
    if deadline is None and budget > 0:
        deadline = time.monotonic() + budget
    while True:
        if deadline is not None and time.monotonic() >= deadline:
            break
        found = best_swap(state, eps)
        if found is None:
            break
        h, k, _ = found
        apply_swap(state, h, k)
        if trace is not None:
            trace.append(TraceRow(restart, len(trace), state.objective, h, k, "swap"))
    return state


def perturb(state: SubsetState, count: int, rng: np.random.Generator, *, trace=None, restart=0):
    """Swap ``count`` random members for ``count`` random outsiders."""
    n, m = state.table.n, state.table.m
    if count < 1 or count > m:
        raise ValueError(f"perturbation size must be in [1, {m}]")
    if count > n - m:
        raise ValueError(f"cannot swap {count} points: only {n - m} outsiders")
    out = rng.choice(state.members, size=count, replace=False)
    inn = rng.choice(np.flatnonzero(~state.mask), size=count, replace=False)
    for h, k in zip(out.tolist(), inn.tolist()):
        apply_swap(state, h, k)
        if trace is not None:
            trace.append(TraceRow(restart, len(trace), state.objective, h, k, "perturb"))
    return state


def pick_initial(P, K, m: int, L: int, prior_inits, rng, *, table=None) -> IndexSubset:
    """Best of ``L`` random ``m``-subsets, preferring ones unlike earlier starts.

    Among the ``ceil(L/4)`` lowest-objective draws, the one with the largest
    minimum symmetric difference to ``prior_inits`` wins (then lowest
    objective, then lexicographic order). With no prior starts this is simply
    the lowest-objective draw.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if table is None:
        table = ContributionTable(P, K, m)
    n = table.n
    draws = [np.sort(rng.choice(n, size=m, replace=False)) for _ in range(L)]
    scored = sorted(
        ((table.subset_objective(idx), tuple(idx.tolist())) for idx in draws),
    )
    if not prior_inits:
        return IndexSubset(n, np.array(scored[0][1]))
    keep = scored[: math.ceil(L / 4)]
    priors = [set(p.members.tolist()) for p in prior_inits]

    def key(item):
        obj, idx = item
        s = set(idx)
        dist = min(len(s ^ p) for p in priors)
        return (-dist, obj, idx)

    return IndexSubset(n, np.array(min(keep, key=key)[1]))


@dataclass
class SelectConfig:
    """Parameters of the restarted swap search.

    ``perturb_count`` defaults to ``min(8, ceil(m / 10))``; ``time_budget`` is
    in seconds, 0 meaning unlimited.
    """

    m: int
    R_g: int = 5
    R_l: int = 5
    L: int = 100
    perturb_count: int | None = None
    time_budget: float = 0.0
    seed: int = 0
    cache_gram: bool = True

    def resolved_perturb(self) -> int:
        if self.perturb_count is not None:
            return self.perturb_count
        return min(8, math.ceil(self.m / 10))

    def validate(self, n: int) -> None:
        if not 1 <= self.m < n:
            raise ValueError(f"target size m={self.m} must satisfy 1 <= m < n={n}")
        if self.R_g < 1 or self.R_l < 1 or self.L < 1:
            raise ValueError("R_g, R_l and L must be >= 1")
        p = self.resolved_perturb()
        if not 1 <= p <= self.m:
            raise ValueError(f"perturb_count must be in [1, m], got {p}")
        if self.time_budget < 0:
            raise ValueError("time budget must be >= 0")


@dataclass
class SelectionResult:
    subset: IndexSubset
    value: DiscrepancyValue
    objective: float
    trace: list = field(default_factory=list)
    restarts_done: int = 0
    timed_out: bool = False
    elapsed: float = 0.0


def select_subset(P, K, cfg: SelectConfig) -> SelectionResult:
    """Restarted best-swap search for an ``m``-subset of low squared discrepancy."""
    X = as_array(P)
    n = X.shape[0]
    cfg.validate(n)
    start = time.monotonic()
    deadline = start + cfg.time_budget if cfg.time_budget > 0 else None
    rng = np.random.default_rng(cfg.seed)
    table = ContributionTable(X, K, cfg.m, cache_gram=cfg.cache_gram)
    perturb_count = min(cfg.resolved_perturb(), n - cfg.m)

    def out_of_time():
        return deadline is not None and time.monotonic() >= deadline

    trace: list[TraceRow] = []
    best_obj = math.inf
    best_members = None
    priors: list[IndexSubset] = []
    restarts = 0
    timed_out = False
    for r in range(cfg.R_g):
        if out_of_time() and best_members is not None:
            timed_out = True
            break
        init = pick_initial(X, K, cfg.m, cfg.L, priors, rng, table=table)
        priors.append(init)
        state = SubsetState(table, init.members)
        trace.append(TraceRow(r, len(trace), state.objective, -1, -1, "init"))
        for ell in range(cfg.R_l):
            local_search(state, deadline=deadline, trace=trace, restart=r)
            if state.objective < best_obj:
                best_obj = state.objective
                best_members = state.members
            if out_of_time():
                timed_out = True
                break
            if ell + 1 < cfg.R_l and perturb_count >= 1:
                perturb(state, perturb_count, rng, trace=trace, restart=r)
        restarts += 1
        if timed_out:
            break
    subset = IndexSubset(n, best_members)
    value = kernel_disc_sq(gather(X, subset), table.kernel)
    return SelectionResult(
        subset=subset,
        value=value,
        objective=best_obj,
        trace=trace,
        restarts_done=restarts,
        timed_out=timed_out,
        elapsed=time.monotonic() - start,
    )
