import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kdsubset.discrepancy import kernel_disc_sq
from kdsubset.kernels import StarKernel, SteinKernel, WeightedStarKernel, symmetric_mixture_2d
from kdsubset.pointset import IndexSubset, gather
from kdsubset.select import (
    EPS_IMPROVE,
    ContributionTable,
    SelectConfig,
    apply_swap,
    best_swap,
    contribution_V,
    init_state,
    local_search,
    perturb,
    pick_initial,
    select_subset,
    swap_delta,
)

from oracles import exhaustive_best_subset


def star_V(X, m):
    """Dense V matrix of the star kernel, written from the definition."""
    G = np.prod(1 - np.maximum(X[:, None, :], X[None, :, :]), axis=2)
    kF = np.prod((1 - X**2) / 2, axis=1)
    V = G / m**2
    V[np.diag_indices_from(V)] = -2 / m * kF + np.diagonal(G) / m**2
    return V


def brute_B(V, members):
    inside = np.zeros(len(V), bool)
    inside[members] = True
    B = np.diagonal(V) + 2 * V[:, inside].sum(axis=1)
    B[inside] -= 2 * np.diagonal(V)[inside]
    return B


def objective(X, members, K=None):
    return kernel_disc_sq(gather(X, IndexSubset.from_indices(len(X), members)), K or StarKernel()).value


# -- contributions ----------------------------------------------------------------------

def test_contribution_examples():
    assert contribution_V([[0.0], [0.5]], StarKernel(), 2, 0, 0) == pytest.approx(-0.25)
    assert contribution_V([[0.3], [0.7]], StarKernel(), 10, 0, 1) == pytest.approx(0.003)
    K = SteinKernel(symmetric_mixture_2d(), 1.0)
    assert contribution_V([[0.0, 0.0], [1.0, 0.0]], K, 3, 0, 0) == pytest.approx(2.0 / 9)


def test_contribution_symmetric_and_range_checked(rng):
    X = rng.random((6, 2))
    assert contribution_V(X, StarKernel(), 3, 1, 4) == contribution_V(X, StarKernel(), 3, 4, 1)
    with pytest.raises(IndexError):
        contribution_V(X, StarKernel(), 3, 0, 6)


def test_table_matches_definition(rng):
    X = rng.random((30, 3))
    t = ContributionTable(X, StarKernel(), 7)
    V = star_V(X, 7)
    for i, j in [(0, 0), (3, 9), (29, 1), (5, 5)]:
        assert t.V(i, j) == pytest.approx(V[i, j], rel=1e-14)


# -- state ----------------------------------------------------------------------------------

def test_full_subset_objective_is_discrepancy(rng):
    X = rng.random((25, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(25, range(25)))
    assert st_.objective == pytest.approx(kernel_disc_sq(X, StarKernel()).value, rel=1e-12)


def test_single_member_state(rng):
    X = rng.random((10, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(10, [4]))
    V = star_V(X, 1)
    assert st_.S == pytest.approx(V[4, 4], rel=1e-14)
    for k in range(10):
        if k != 4:
            assert st_.B[k] == pytest.approx(V[k, k] + 2 * V[k, 4], rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("cache", [True, False])
def test_B_matches_brute_force(rng, cache):
    X = rng.random((200, 2))
    members = np.sort(rng.choice(200, 20, replace=False))
    st_ = init_state(X, StarKernel(), IndexSubset(200, members), cache_gram=cache)
    np.testing.assert_allclose(st_.B, brute_B(star_V(X, 20), members), rtol=0, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1), cache=st.booleans(), weighted=st.booleans())
def test_random_swap_sequences_stay_exact(seed, cache, weighted):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(6, 40)), None
    m = int(rng.integers(1, n))
    X = rng.random((n, 2))
    K = WeightedStarKernel(1.0) if weighted else StarKernel()
    st_ = init_state(X, K, IndexSubset(n, np.sort(rng.choice(n, m, replace=False))), cache_gram=cache)
    for _ in range(15):
        h = int(rng.choice(st_.members))
        k = int(rng.choice(np.flatnonzero(~st_.mask)))
        before = objective(X, st_.members, K)
        predicted = swap_delta(st_, h, k)
        apply_swap(st_, h, k)
        after = objective(X, st_.members, K)
        assert predicted == pytest.approx(after - before, abs=1e-10)
        assert st_.objective == pytest.approx(after, abs=1e-10)
    if not weighted:
        np.testing.assert_allclose(st_.B, brute_B(star_V(X, m), st_.members), atol=1e-10)


def test_stein_swaps_stay_exact(rng):
    model = symmetric_mixture_2d()
    X = model.sample(120, rng)
    K = SteinKernel(model, 0.6)
    st_ = init_state(X, K, IndexSubset(120, np.arange(0, 120, 8)))
    for _ in range(30):
        h = int(rng.choice(st_.members))
        k = int(rng.choice(np.flatnonzero(~st_.mask)))
        apply_swap(st_, h, k)
    assert st_.objective == pytest.approx(objective(X, st_.members, K), rel=1e-10)


def test_swap_and_reverse(rng):
    X = rng.random((50, 3))
    st_ = init_state(X, StarKernel(), IndexSubset(50, range(10)))
    S0 = st_.S
    apply_swap(st_, 3, 40)
    apply_swap(st_, 40, 3)
    assert st_.S == pytest.approx(S0, abs=1e-10)


def test_interaction_term_is_twice_V(rng):
    X = rng.random((20, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(20, range(5)))
    V = star_V(X, 5)
    assert swap_delta(st_, 2, 11) == pytest.approx(st_.B[11] - st_.B[2] - 2 * V[2, 11], abs=1e-15)


def test_swap_membership_violations(rng):
    st_ = init_state(rng.random((10, 2)), StarKernel(), IndexSubset(10, [0, 1, 2]))
    with pytest.raises(ValueError):
        swap_delta(st_, 0, 1)
    with pytest.raises(ValueError):
        swap_delta(st_, 5, 6)
    with pytest.raises(ValueError):
        apply_swap(st_, 1, 1)
    with pytest.raises(IndexError):
        swap_delta(st_, 0, 10)


# -- best swap and local search -------------------------------------------------------------

def brute_best_swap(X, members):
    best = None
    base = objective(X, members)
    for h in sorted(members):
        for k in range(len(X)):
            if k in members:
                continue
            new = sorted(set(members) - {h} | {k})
            delta = objective(X, new) - base
            if best is None or delta < best[2] - 1e-13:
                best = (h, k, delta)
    return best


def test_best_swap_matches_brute_force(rng):
    for _ in range(3):
        X = rng.random((100, 2))
        members = sorted(rng.choice(100, 10, replace=False).tolist())
        st_ = init_state(X, StarKernel(), IndexSubset(100, members))
        h, k, delta = best_swap(st_)
        bh, bk, bdelta = brute_best_swap(X, members)
        assert (h, k) == (bh, bk)
        assert delta == pytest.approx(bdelta, abs=1e-12)


def test_best_swap_tie_break_is_lexicographic():
    # duplicated points create exact ties; the smallest (h, k) must win
    X = np.array([[0.9, 0.9], [0.9, 0.9], [0.3, 0.6], [0.3, 0.6], [0.6, 0.3]])
    st_ = init_state(X, StarKernel(), IndexSubset(5, [0, 1]))
    h, k, _ = best_swap(st_)
    assert h == 0
    D = {(hh, kk): swap_delta(st_, hh, kk) for hh in (0, 1) for kk in (2, 3, 4)}
    low = min(D.values())
    assert (h, k) == min(p for p, v in D.items() if v == low)


def test_best_swap_with_one_outsider(rng):
    X = rng.random((6, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(6, range(5)))
    res = best_swap(st_, eps=-np.inf)
    assert res[1] == 5
    assert res[2] == pytest.approx(min(swap_delta(st_, h, 5) for h in range(5)), abs=0)


def test_local_search_reaches_swap_optimum(rng):
    for _ in range(5):
        X = rng.random((12, 2))
        st_ = init_state(X, StarKernel(), IndexSubset(12, [0, 1, 2, 3]))
        trace = []
        local_search(st_, trace=trace)
        objs = [r.objective for r in trace]
        assert all(b < a - EPS_IMPROVE for a, b in zip(objs, objs[1:]))
        assert best_swap(st_) is None
        members = set(st_.members.tolist())
        base = objective(X, members)
        for h in members:
            for k in set(range(12)) - members:
                assert objective(X, sorted(members - {h} | {k})) >= base - 1e-12


def test_local_search_on_optimum_is_noop(rng):
    X = rng.random((12, 2))
    _, arg = exhaustive_best_subset(X, 4)
    st_ = init_state(X, StarKernel(), IndexSubset(12, arg))
    trace = []
    local_search(st_, trace=trace)
    assert trace == [] and tuple(st_.members) == arg


def test_local_search_budget_is_soft(rng):
    X = rng.random((400, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(400, range(40)))
    trace = []
    local_search(st_, budget=1e-9, trace=trace)
    assert len(trace) <= 1


# -- perturbation and initialization -----------------------------------------------------------

def test_perturb_single_swap_hamming(rng):
    X = rng.random((30, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(30, range(8)))
    old = set(st_.members.tolist())
    perturb(st_, 1, rng)
    assert len(old ^ set(st_.members.tolist())) == 2


def test_perturb_all_members(rng):
    X = rng.random((20, 2))
    st_ = init_state(X, StarKernel(), IndexSubset(20, range(10)))
    perturb(st_, 10, rng)
    assert set(st_.members.tolist()).isdisjoint(range(10))
    np.testing.assert_allclose(st_.B, brute_B(star_V(X, 10), st_.members), atol=1e-10)
    assert st_.objective == pytest.approx(objective(X, st_.members), abs=1e-10)


def test_perturb_bounds(rng):
    st_ = init_state(rng.random((6, 2)), StarKernel(), IndexSubset(6, range(4)))
    with pytest.raises(ValueError):
        perturb(st_, 3, rng)
    with pytest.raises(ValueError):
        perturb(st_, 0, rng)


def test_pick_initial_single_draw():
    X = np.random.default_rng(0).random((20, 2))
    expected = np.sort(np.random.default_rng(5).choice(20, 6, replace=False))
    got = pick_initial(X, StarKernel(), 6, 1, [], np.random.default_rng(5))
    np.testing.assert_array_equal(got.members, expected)


def test_pick_initial_argmin_without_priors():
    X = np.random.default_rng(0).random((20, 2))
    draws_rng = np.random.default_rng(9)
    draws = [np.sort(draws_rng.choice(20, 5, replace=False)) for _ in range(40)]
    best = min(draws, key=lambda d: objective(X, d))
    got = pick_initial(X, StarKernel(), 5, 40, [], np.random.default_rng(9))
    np.testing.assert_array_equal(got.members, best)


class ScriptedRng:
    def __init__(self, draws):
        self.draws = list(draws)

    def choice(self, n, size, replace):
        return np.array(self.draws.pop(0))


def test_pick_initial_prefers_dissimilar_tie():
    # points 0,2 coincide and 1,3 coincide, so {0,1}, {0,3}, {1,2}, {2,3} share one objective
    X = np.array([[0.2], [0.7], [0.2], [0.7]])
    obj = {S: objective(X, list(S)) for S in itertools.combinations(range(4), 2)}
    assert obj[(0, 1)] == obj[(2, 3)] < obj[(0, 2)] and obj[(0, 1)] < obj[(1, 3)]
    draws = [[0, 1], [2, 3]] + [[0, 2], [1, 3]] * 3
    prior = [IndexSubset(4, [0, 1])]
    got = pick_initial(X, StarKernel(), 2, 8, prior, ScriptedRng(draws))
    assert tuple(got.members) == (2, 3)
    got = pick_initial(X, StarKernel(), 2, 8, [], ScriptedRng(draws))
    assert tuple(got.members) == (0, 1)


# -- full driver --------------------------------------------------------------------------------

def test_small_instances_reach_global_optimum():
    hits = 0
    for seed in range(10):
        X = np.random.default_rng(100 + seed).random((12, 2))
        opt, _ = exhaustive_best_subset(X, 4)
        res = select_subset(X, StarKernel(), SelectConfig(m=4, R_g=4, R_l=3, L=8, seed=seed))
        hits += res.value.value <= opt + 1e-12
    assert hits >= 9


def test_drop_one_point(rng):
    X = rng.random((15, 2))
    res = select_subset(X, StarKernel(), SelectConfig(m=14, R_g=2, R_l=2, L=4, seed=1))
    best = min(objective(X, [j for j in range(15) if j != i]) for i in range(15))
    assert res.value.value == pytest.approx(best, abs=1e-13)


def test_result_beats_random_subsets(rng):
    X = rng.random((300, 2))
    res = select_subset(X, StarKernel(), SelectConfig(m=20, R_g=2, R_l=2, L=20, seed=3))
    randoms = [objective(X, np.sort(rng.choice(300, 20, replace=False))) for _ in range(100)]
    assert res.value.value <= min(randoms)


def test_driver_is_deterministic(rng):
    X = rng.random((150, 2))
    cfg = SelectConfig(m=15, R_g=2, R_l=2, L=10, seed=42)
    a, b = select_subset(X, StarKernel(), cfg), select_subset(X, StarKernel(), cfg)
    assert a.subset == b.subset and a.value == b.value
    assert [vars(r) for r in a.trace] == [vars(r) for r in b.trace]


def test_driver_trace_and_value(rng):
    X = rng.random((80, 2))
    res = select_subset(X, StarKernel(), SelectConfig(m=8, R_g=2, R_l=3, L=5, seed=0))
    events = {r.event for r in res.trace}
    assert {"init", "swap", "perturb"} <= events
    assert sum(r.event == "init" for r in res.trace) == 2
    assert res.restarts_done == 2 and not res.timed_out
    assert res.value.value == pytest.approx(objective(X, res.subset.members), rel=1e-15)
    assert res.objective == pytest.approx(res.value.value, rel=1e-10)


def test_driver_handles_values_above_one(rng):
    # squared KSD is usually far above 1; the best tracker must not start at 1
    model = symmetric_mixture_2d()
    X = model.sample(60, rng)
    res = select_subset(X, SteinKernel(model, 0.1), SelectConfig(m=3, R_g=1, R_l=1, L=3))
    assert res.value.value > 1.0


def test_driver_time_budget(rng):
    X = rng.random((2000, 2))
    res = select_subset(X, StarKernel(), SelectConfig(m=100, R_g=50, R_l=50, L=5, time_budget=0.5))
    assert res.timed_out and res.elapsed < 5.0
    assert res.value.value == pytest.approx(objective(X, res.subset.members), rel=1e-15)


def test_permuted_population_same_objective(rng):
    X = rng.random((40, 2))
    perm = rng.permutation(40)
    members = [0, 5, 9, 22]
    inv = np.argsort(perm)
    a = init_state(X, StarKernel(), IndexSubset(40, members)).objective
    b = init_state(X[perm], StarKernel(), IndexSubset.from_indices(40, inv[members])).objective
    assert a == pytest.approx(b, rel=1e-14)


@pytest.mark.parametrize("kw", [dict(m=10), dict(m=0), dict(m=3, R_g=0), dict(m=3, L=0),
                                dict(m=3, perturb_count=4), dict(m=3, time_budget=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SelectConfig(**kw).validate(10)


def test_default_perturbation_size():
    assert SelectConfig(m=5).resolved_perturb() == 1
    assert SelectConfig(m=50).resolved_perturb() == 5
    assert SelectConfig(m=500).resolved_perturb() == 8
