import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orderplay.bnp import (
    BnpOptions,
    Exploration,
    NodeStatus,
    SearchNode,
    WarmstartData,
    branch_and_play,
    bound_node,
    expand,
    make_warmstart,
    max_tree_size,
    prune_by_bound,
    select_node,
)
from orderplay.harness import brute_force_order
from orderplay.stp import SolveCache
from orderplay.trajopt import solve_single_agent
from orderplay.costs import CostWeights
from orderplay.types import (
    IncompletePermutation,
    JointState,
    Permutation,
    UnassignedMode,
)


def _joint(sc):
    return JointState(sc.starts)


def _node(prefix, n, bound=-math.inf, rho_perm=None):
    unassigned = frozenset(range(n)) - set(prefix)
    return SearchNode(perm=IncompletePermutation(tuple(prefix), unassigned), parent_bound=bound)


class TestSelectNode:
    def test_best_first_prefers_smaller_bound(self):
        a = _node((0,), 3)
        a.bound = 3.0
        b = _node((1, 2), 3)
        b.bound = 4.0
        pool = [a, b]
        assert select_node(pool, Exploration.BEST_FIRST) is a
        assert pool == [b]

    def test_depth_first_prefers_deeper(self):
        a = _node((0,), 3)
        a.bound = 3.0
        b = _node((1, 2), 3)
        b.bound = 4.0
        assert select_node([a, b], Exploration.DEPTH_FIRST) is b

    def test_ties_break_lexicographically(self):
        a = _node((2,), 3)
        a.bound = 1.0
        b = _node((0,), 3)
        b.bound = 1.0
        assert select_node([a, b], Exploration.BEST_FIRST) is b

    def test_empty_pool_raises(self):
        with pytest.raises(ValueError):
            select_node([], Exploration.BEST_FIRST)


class TestPruneByBound:
    def _pool(self, bounds):
        pool = []
        for k, b in enumerate(bounds):
            nd = _node((k,), len(bounds))
            nd.bound = b
            pool.append(nd)
        return pool

    def test_strictly_greater_pruned(self):
        pool = self._pool([12.0, 10.0, 9.0])
        removed = prune_by_bound(pool, 10.0)
        assert removed == 1
        assert [n.bound for n in pool] == [10.0, 9.0]

    def test_equal_bound_kept(self):
        pool = self._pool([10.0, 10.0])
        assert prune_by_bound(pool, 10.0) == 0
        assert len(pool) == 2

    def test_infinite_incumbent_prunes_nothing(self):
        pool = self._pool([1e9, 5.0])
        assert prune_by_bound(pool, math.inf) == 0

    def test_pruned_nodes_marked(self):
        pool = self._pool([20.0, 1.0])
        marked = pool[0]
        prune_by_bound(pool, 10.0)
        assert marked.status is NodeStatus.PRUNED


class TestBoundNode:
    def test_max_rule_keeps_parent_bound(self, spread_scenario):
        sc = spread_scenario(2)
        node = _node((0,), 2, bound=1e6)
        bound_node(node, sc, _joint(sc), BnpOptions())
        assert node.raw_value < 1e6
        assert node.bound == 1e6  # enforced: max(raw, parent)

    def test_raw_above_parent_wins(self, spread_scenario):
        sc = spread_scenario(2)
        node = _node((0,), 2, bound=-1.0)
        bound_node(node, sc, _joint(sc), BnpOptions())
        assert node.bound == node.raw_value > -1.0

    def test_enforcement_off_uses_raw(self, spread_scenario):
        sc = spread_scenario(2)
        node = _node((0,), 2, bound=1e6)
        bound_node(node, sc, _joint(sc), BnpOptions(enforce_admissibility=False))
        assert node.bound == node.raw_value < 1e6

    def test_unaware_root_is_sum_of_individual_optima(self, atc_scenario):
        sc = atc_scenario(3)
        opts = BnpOptions(unassigned_mode=UnassignedMode.UNAWARE)
        node = SearchNode(perm=IncompletePermutation.empty(3, UnassignedMode.UNAWARE))
        bound_node(node, sc, _joint(sc), opts)
        w = CostWeights.from_scenario(sc)
        total = 0.0
        for i in range(3):
            _, _, c = solve_single_agent(
                sc.starts[i], sc.targets[i], [], w, opts.ilqr, dt=sc.dt, horizon=sc.horizon, bounds=sc.control_bounds
            )
            total += c
        assert node.raw_value == pytest.approx(total, rel=1e-9)


class TestExpand:
    def test_all_children_without_pruning(self, atc_scenario):
        sc = atc_scenario(3)
        node = SearchNode(perm=IncompletePermutation.empty(3))
        opts = BnpOptions(pairwise_pruning=False)
        bound_node(node, sc, _joint(sc), opts)
        kids = expand(node, sc, opts)
        assert [k.perm.assigned for k in kids] == [(0,), (1,), (2,)]
        assert node.status is NodeStatus.EXPANDED

    def test_complete_node_raises(self, spread_scenario):
        sc = spread_scenario(2)
        node = SearchNode(perm=IncompletePermutation((0, 1), frozenset()))
        bound_node(node, sc, _joint(sc), BnpOptions())
        with pytest.raises(ValueError):
            expand(node, sc, BnpOptions())

    def test_unbounded_node_rejected(self):
        node = SearchNode(perm=IncompletePermutation.empty(2))
        with pytest.raises(ValueError):
            expand(node, None, BnpOptions())

    def test_children_inherit_bound(self, atc_scenario):
        sc = atc_scenario(3)
        node = SearchNode(perm=IncompletePermutation.empty(3))
        opts = BnpOptions(pairwise_pruning=False)
        bound_node(node, sc, _joint(sc), opts)
        for kid in expand(node, sc, opts):
            assert kid.parent_bound == node.bound
            assert kid.bound == node.bound


class TestBranchAndPlay:
    def test_single_agent(self):
        import dataclasses

        from orderplay.harness import sample_scenario

        sc = sample_scenario(0, 2)
        sc = dataclasses.replace(sc, n=1, starts=sc.starts[:1], targets=sc.targets[:1])
        res = branch_and_play(sc, JointState(sc.starts))
        assert res.permutation == Permutation((0,))
        assert res.stats.nodes_explored == 1

    def test_matches_brute_force_minimum(self, atc_scenario):
        sc = atc_scenario(3)
        cache = SolveCache()
        res = branch_and_play(sc, _joint(sc), cache=cache)
        _, bf_value = brute_force_order(sc, _joint(sc), cache=cache)
        assert res.value == bf_value  # float-identical via shared solve cache

    def test_non_interacting_promotes_at_root(self, spread_scenario):
        # Pairwise pruning should close the whole tree after the root child.
        sc = spread_scenario(4)
        res = branch_and_play(sc, _joint(sc))
        assert res.stats.nodes_explored == 1
        assert res.stats.nodes_explored < max_tree_size(4)

    def test_node_ceiling(self, atc_scenario):
        sc = atc_scenario(3)
        for opts in (BnpOptions(), BnpOptions(pairwise_pruning=False), BnpOptions(bound_pruning=False)):
            res = branch_and_play(sc, _joint(sc), opts)
            assert res.stats.nodes_explored <= max_tree_size(3)

    def test_depth_first_same_value(self, atc_scenario):
        sc = atc_scenario(3)
        cache = SolveCache()
        best = branch_and_play(sc, _joint(sc), BnpOptions(exploration=Exploration.BEST_FIRST), cache=cache)
        depth = branch_and_play(sc, _joint(sc), BnpOptions(exploration=Exploration.DEPTH_FIRST), cache=cache)
        assert best.value == depth.value

    def test_pruning_flags_do_not_change_value(self, atc_scenario):
        sc = atc_scenario(3)
        cache = SolveCache()
        base = branch_and_play(sc, _joint(sc), BnpOptions(), cache=cache)
        for opts in (
            BnpOptions(pairwise_pruning=False),
            BnpOptions(bound_pruning=False),
            BnpOptions(pairwise_pruning=False, bound_pruning=False),
        ):
            res = branch_and_play(sc, _joint(sc), opts, cache=cache)
            assert res.value == base.value
            assert res.stats.nodes_explored >= base.stats.nodes_explored

    def test_node_budget_flags_exhaustion(self, atc_scenario):
        # Depth-first dives straight to a leaf, so a tight budget still finds
        # an incumbent and the stop is reported instead of raised.
        sc = atc_scenario(3)
        opts = BnpOptions(
            exploration=Exploration.DEPTH_FIRST, node_budget=3, pairwise_pruning=False
        )
        res = branch_and_play(sc, _joint(sc), opts)
        assert res.budget_exhausted
        assert res.stats.nodes_explored <= 3
        assert math.isfinite(res.value)

    def test_trace_records_every_bounded_node(self, atc_scenario):
        sc = atc_scenario(3)
        trace = []
        res = branch_and_play(sc, _joint(sc), trace=trace)
        # root + every explored node
        assert len(trace) == res.stats.nodes_explored + 1
        assert trace[0]["rho"] == 0
        assert all({"prefix", "rho", "raw_value", "bound", "status"} <= set(r) for r in trace)


class TestMaxTreeSize:
    def test_examples(self):
        assert max_tree_size(1) == 1
        assert max_tree_size(2) == 4
        assert max_tree_size(3) == 15
        assert max_tree_size(4) == 64

    @given(st.integers(min_value=1, max_value=8))
    def test_matches_direct_sum(self, n):
        assert max_tree_size(n) == sum(
            math.factorial(n) // math.factorial(n - rho) for rho in range(1, n + 1)
        )


class TestWarmstart:
    def test_empty_history_is_cold(self, atc_scenario):
        sc = atc_scenario(2)
        warm = make_warmstart([], sc, _joint(sc), BnpOptions())
        assert warm.incumbent is None
        assert warm.node_inits == {}
        res = branch_and_play(sc, _joint(sc), warm=warm)
        cold = branch_and_play(sc, _joint(sc))
        assert res.value == cold.value

    def test_warmstart_seeds_incumbent(self, atc_scenario):
        sc = atc_scenario(2)
        first = branch_and_play(sc, _joint(sc))
        warm = make_warmstart(first.nodes, sc, _joint(sc), BnpOptions(), shift=0)
        assert warm.incumbent is not None
        assert isinstance(warm, WarmstartData)
        second = branch_and_play(sc, _joint(sc), warm=warm)
        # The seeded incumbent is an upper bound the warm search can only
        # improve on; at the same state it matches the cold optimum.
        assert second.value <= warm.incumbent[2] + 1e-9
        assert second.value <= first.value + 1e-9

    def test_precomputed_prefixes_skip_solves(self, atc_scenario):
        sc = atc_scenario(2)
        first = branch_and_play(sc, _joint(sc))
        counters = {}
        warm = make_warmstart(first.nodes, sc, _joint(sc), BnpOptions(), shift=0, counters=counters)
        pre_solves = counters.get("solves", 0)
        counters2 = {}
        branch_and_play(sc, _joint(sc), warm=warm, counters=counters2)
        # Every prefix seen in the first search is precomputed or cached.
        assert counters2.get("solves", 0) <= pre_solves + 2 * first.stats.nodes_explored
