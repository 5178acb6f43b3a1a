"""Tests for coarsening strategies and adaptive forest selection."""

import numpy as np
import pytest

from forestsmc import (
    BranchingSpec,
    Partition,
    Strategy,
    TraceRecorder,
    arpf_select,
    build_tree,
    choose_forest,
    ess_partition,
    is_coarsening,
    matching_exact_step,
    matching_step,
    merge_gain,
    pairing_step,
    rho,
    singletons,
)
from forestsmc.selection import blocks_to_partition
from util import (
    enumerate_pairings,
    random_power_of_two_tree,
    random_tree,
    random_weights,
)

C4 = np.array([1.0, 2.0, 3.0, 4.0])


def populated(levels=(2, 2), c=C4):
    t = build_tree(BranchingSpec(levels=levels))
    t.set_leaf_values(c)
    t.populate()
    return t


class TestStrategy:
    def test_known_kinds(self):
        for kind in ("pairing", "matching", "matching-exact", "arpf", "two-level"):
            assert Strategy(kind).kind == kind

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Strategy("greedy")


class TestPairingStep:
    def test_singletons_first_with_last(self):
        out = pairing_step(singletons(range(4)), C4)
        assert out.blocks == ((0, 3), (1, 2))
        assert rho(out, C4) == pytest.approx(1.0)

    def test_enumeration_of_three_pairings(self):
        rhos = sorted(
            rho(Partition(p), C4)
            for p in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))
        )
        np.testing.assert_allclose(rhos, [100 / 29 / 4, 100 / 26 / 4, 1.0], rtol=1e-12)

    def test_equal_sums_tie_break(self):
        out = pairing_step(singletons(range(4)), np.ones(4))
        assert out.blocks == ((0, 3), (1, 2))

    def test_two_blocks_merge(self):
        out = pairing_step(Partition(((0, 1), (2, 3))), C4)
        assert out.blocks == ((0, 1, 2, 3),)

    def test_odd_count_rejected(self):
        with pytest.raises(ValueError):
            pairing_step(singletons(range(3)), C4[:3])

    def test_unequal_sizes_rejected(self):
        with pytest.raises(ValueError):
            pairing_step(Partition(((0, 1), (2,), (3,), (4, 5))), np.ones(6))

    def test_optimality_randomized(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            n_blocks = int(rng.choice([2, 4, 6, 8]))
            size = int(rng.integers(1, 4))
            n = n_blocks * size
            blocks = tuple(
                tuple(range(k * size, (k + 1) * size)) for k in range(n_blocks)
            )
            c = random_weights(rng, n)
            best = max(
                rho(Partition(tuple(tuple(sorted(a + b)) for a, b in match)), c)
                for match in enumerate_pairings(list(blocks))
            )
            got = rho(pairing_step(Partition(blocks), c), c)
            assert got >= best - 1e-12


class TestMatchingStep:
    def test_extreme_means_merged(self):
        out = matching_step(singletons(range(4)), np.array([1.0, 4.0, 5.0, 100.0]))
        assert out.blocks == ((0, 3), (1,), (2,))

    def test_worked_rho(self):
        out = matching_step(singletons(range(4)), C4)
        assert out.blocks == ((0, 3), (1,), (2,))
        assert rho(out, C4) == pytest.approx(100 / 25.5 / 4, rel=1e-12)

    def test_all_equal_merges_first_and_last(self):
        out = matching_step(singletons(range(4)), np.ones(4))
        assert out.blocks == ((0, 3), (1,), (2,))
        assert rho(out, np.ones(4)) == pytest.approx(1.0)

    def test_single_block_rejected(self):
        with pytest.raises(ValueError):
            matching_step(Partition(((0, 1, 2),)), C4[:3])


class TestMergeGain:
    def test_singleton_maximizer(self):
        p = singletons(range(4))
        gains = {(k, l): merge_gain(p, k, l, C4) for k in range(4) for l in range(k + 1, 4)}
        assert gains[(0, 3)] == pytest.approx(4.5)
        assert max(gains, key=gains.get) == (0, 3)

    def test_equal_means_zero(self):
        assert merge_gain(Partition(((0, 3), (1, 2))), 0, 1, C4) == pytest.approx(0.0)

    def test_two_pair_blocks(self):
        p = Partition(((0, 1), (2, 3)))
        assert merge_gain(p, 0, 1, C4) == pytest.approx(4.0)

    def test_same_block_rejected(self):
        with pytest.raises(ValueError):
            merge_gain(singletons(range(4)), 1, 1, C4)

    def test_maximizer_matches_exhaustive_rho(self):
        rng = np.random.default_rng(43)
        from util import random_partition, random_subset

        for _ in range(200):
            n = int(rng.integers(2, 14))
            members = random_subset(rng, n, k=int(rng.integers(2, n + 1)))
            p = random_partition(rng, members)
            while len(p.blocks) < 2:
                p = random_partition(rng, members)
            c = random_weights(rng, n)
            k_count = len(p.blocks)

            def merged(k, l):
                rest = [b for m, b in enumerate(p.blocks) if m not in (k, l)]
                rest.append(tuple(sorted(p.blocks[k] + p.blocks[l])))
                return Partition(tuple(rest))

            pairs = [(k, l) for k in range(k_count) for l in range(k + 1, k_count)]
            best_rho = max(rho(merged(k, l), c) for k, l in pairs)
            k_star, l_star = max(pairs, key=lambda kl: merge_gain(p, kl[0], kl[1], c))
            assert rho(merged(k_star, l_star), c) == pytest.approx(best_rho, rel=1e-12)
            by_exact = matching_exact_step(p, c)
            assert rho(by_exact, c) == pytest.approx(best_rho, rel=1e-12)


class TestArpf:
    def test_equal_weights_all_leaves(self):
        t = populated(c=np.ones(4))
        f = arpf_select(t, np.ones(4), 1.0)
        assert f.partition().blocks == ((0,), (1,), (2,), (3,))

    def test_dominant_weight_full_merge(self):
        c = np.array([100.0, 1.0, 1.0, 1.0])
        t = populated(c=c)
        f = arpf_select(t, c, 0.5)  # plain ESS about 1.06 < 2
        assert f.partition().blocks == ((0, 1, 2, 3),)

    def test_tau_zero_all_leaves(self):
        c = np.array([100.0, 1.0, 1.0, 1.0])
        t = populated(c=c)
        f = arpf_select(t, c, 0.0)
        assert f.avg_degree() == pytest.approx(1.0)

    def test_choose_forest_route_requires_c(self):
        t = populated()
        with pytest.raises(ValueError):
            choose_forest(t, t.root, 0.5, "arpf")


class TestChooseForest:
    def test_tau_zero_gives_all_leaves(self):
        for strategy in ("pairing", "matching", "matching-exact", "two-level"):
            t = populated()
            f = choose_forest(t, t.root, 0.0, strategy)
            assert f.avg_degree() == pytest.approx(1.0)

    def test_tau_one_generic_gives_whole_tree(self):
        t = populated(c=np.array([1.0, 2.0, 3.0, 7.0]))
        f = choose_forest(t, t.root, 1.0, "matching")
        assert f.roots == (t.root,)
        assert f.avg_degree() == pytest.approx(4.0)

    def test_leaf_base_case(self):
        t = populated()
        leaf = t.leaf_of_particle[1]
        f = choose_forest(t, leaf, 0.9, "matching")
        assert f.roots == (leaf,)
        assert f.partition().blocks == ((1,),)

    def test_binary_pairing_trace(self):
        t = populated()
        rec = TraceRecorder()
        f = choose_forest(t, t.root, 0.95, "pairing", instrument=rec)
        assert f.roots == (t.root,)
        assert len(rec.traces) == 1
        trace = rec.traces[0]
        assert trace.n_candidates == 2
        np.testing.assert_allclose(trace.rhos, [100 / 29 / 4, 1.0], rtol=1e-12)
        assert trace.accepted == 1

    def test_merged_block_becomes_transient_node(self):
        # root with 4 leaf children; tau drives a two-pair grouping
        c = np.array([1.0, 2.0, 3.0, 4.0])
        t = populated(levels=(4,), c=c)
        base = t.n_nodes
        f = choose_forest(t, t.root, 0.95, "pairing")
        assert f.partition().block_sets() == frozenset({(0, 3), (1, 2)})
        assert t.n_nodes == base + 2  # two transient pair nodes
        assert all(r >= base for r in f.roots)

    def test_tau_validation(self):
        t = populated()
        with pytest.raises(ValueError):
            choose_forest(t, t.root, 1.5, "matching")

    def test_pairing_rejects_non_power_of_two(self):
        t = build_tree(BranchingSpec(levels=(3, 2)))
        t.set_leaf_values(random_weights(np.random.default_rng(0), 6))
        t.populate()
        with pytest.raises(ValueError):
            choose_forest(t, t.root, 0.99, "pairing")

    def test_pairing_rejects_unequal_leaf_counts(self):
        t = build_tree(BranchingSpec(shape=((None, None), (None, (None, None)))))
        t.set_leaf_values(random_weights(np.random.default_rng(0), 5))
        t.populate()
        with pytest.raises(ValueError):
            choose_forest(t, t.root, 0.99, "pairing")

    def test_floor_randomized(self):
        rng = np.random.default_rng(47)
        strategies = ("matching", "matching-exact", "two-level", "arpf")
        for _ in range(200):
            n = int(rng.integers(1, 50))
            t = random_tree(rng, n, permute=bool(rng.integers(0, 2)))
            c = random_weights(rng, n)
            t.set_leaf_values(c)
            t.populate()
            tau = float(rng.choice([0.0, 1.0, rng.random()]))
            strategy = strategies[int(rng.integers(0, len(strategies)))]
            f = choose_forest(t, t.root, tau, strategy, c=c)
            assert f.leaf_indices == tuple(range(n))
            assert ess_partition(f.partition(), c) >= tau * n - 1e-9

    def test_floor_randomized_pairing(self):
        rng = np.random.default_rng(53)
        for _ in range(100):
            t = random_power_of_two_tree(rng)
            n = t.n_leaves
            c = random_weights(rng, n)
            t.set_leaf_values(c)
            t.populate()
            tau = float(rng.random())
            f = choose_forest(t, t.root, tau, "pairing")
            assert ess_partition(f.partition(), c) >= tau * n - 1e-9

    def test_trace_invariants(self):
        rng = np.random.default_rng(59)
        for _ in range(60):
            n = int(rng.integers(2, 40))
            t = random_tree(rng, n)
            c = random_weights(rng, n)
            t.set_leaf_values(c)
            t.populate()
            rec = TraceRecorder()
            choose_forest(t, t.root, float(rng.random()), "matching", instrument=rec)
            assert rec.traces
            for trace in rec.traces:
                assert 1 <= trace.n_candidates <= trace.n_children
                # rho nondecreasing, block count strictly decreasing
                for lo, hi in zip(trace.rhos[:-1], trace.rhos[1:]):
                    assert hi >= lo - 1e-12
                sizes = [len(p) for p in trace.partitions]
                for a, b in zip(sizes[:-1], sizes[1:]):
                    assert b <= a - 1
                # accepted = first candidate at or above the node threshold
                assert trace.accepted == trace.n_candidates - 1
                for r in trace.rhos[:-1]:
                    assert r < trace.tau
                assert trace.rhos[-1] >= trace.tau or len(trace.partitions[-1]) == 1
                # successive candidates are genuine coarsenings
                parts = [blocks_to_partition(t, p) for p in trace.partitions]
                for fine, coarse in zip(parts[:-1], parts[1:]):
                    assert is_coarsening(fine, coarse)

    def test_two_level_considers_at_most_two_candidates(self):
        rng = np.random.default_rng(61)
        for _ in range(30):
            n = int(rng.integers(2, 30))
            t = random_tree(rng, n)
            c = random_weights(rng, n)
            t.set_leaf_values(c)
            t.populate()
            rec = TraceRecorder()
            choose_forest(t, t.root, float(rng.random()), "two-level", instrument=rec)
            for trace in rec.traces:
                assert trace.n_candidates <= 2

    def test_localism_reads_only_child_values(self):
        rng = np.random.default_rng(67)
        for strategy in ("matching", "matching-exact", "two-level"):
            n = 24
            t = random_tree(rng, n)
            c = random_weights(rng, n)
            t.set_leaf_values(c)
            t.populate()
            reads: list[int] = []
            original = t.value
            t.value = lambda h: (reads.append(h), original(h))[1]
            rec = TraceRecorder()
            choose_forest(t, t.root, 0.7, strategy, instrument=rec)
            visited = {trace.node for trace in rec.traces}
            allowed = set()
            for v in visited:
                allowed.update(t.children[v])
            assert set(reads) <= allowed

    def test_clamped_recursion_threshold(self):
        # tau/rho can exceed 1 only by rounding; recursion must still finish
        rng = np.random.default_rng(71)
        t = random_tree(rng, 16)
        c = random_weights(rng, 16)
        t.set_leaf_values(c)
        t.populate()
        f = choose_forest(t, t.root, 1.0, "matching")
        assert ess_partition(f.partition(), c) >= 16 - 1e-9
