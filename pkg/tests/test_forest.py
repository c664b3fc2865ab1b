import json
import math

import numpy as np
import pytest

from cogforest import (
    DistanceMatrix,
    FeatureMatrix,
    ForestParams,
    InputError,
    build_clf,
    build_forests,
    compute_density,
    forest_from_doc,
    forest_stats,
    forest_to_doc,
    load_forest,
    pairwise_distances,
    save_forest,
)
from cogforest.fixtures import fig3_forest_path
from conftest import random_forest, random_matrix
from oracles import (
    density_bruteforce,
    forest_topology,
    path_repetition_bruteforce,
    reference_forest,
    reference_topology,
)


class TestComputeDensity:
    def test_single_sample(self):
        dens = compute_density(DistanceMatrix(np.zeros((1, 1))), 1.0)
        assert dens.values.tolist() == [0.0]
        assert dens.order.tolist() == [0]

    def test_two_samples_at_radius(self):
        d_rd = 1.5
        v = np.array([[0.0, d_rd], [d_rd, 0.0]])
        dens = compute_density(DistanceMatrix(v), d_rd)
        assert dens.values == pytest.approx([math.exp(-1)] * 2, abs=0)

    def test_beyond_radius_contributes_zero(self):
        v = np.array([[0.0, 2.0], [2.0, 0.0]])
        dens = compute_density(DistanceMatrix(v), 1.0)
        assert dens.values.tolist() == [0.0, 0.0]

    def test_matches_bruteforce(self, rng):
        x = random_matrix(rng, 200, 3)
        d = pairwise_distances(x)
        dens = compute_density(d, 0.8)
        assert np.abs(dens.values - density_bruteforce(d.values, 0.8)).max() <= 1e-10

    def test_order_sorted_with_index_ties(self):
        v = np.zeros((3, 3))
        dens = compute_density(DistanceMatrix(v), 1.0)
        # all densities equal (duplicates): ties broken by ascending index
        assert dens.order.tolist() == [0, 1, 2]

    def test_rejects_bad_radius(self):
        with pytest.raises(InputError):
            compute_density(DistanceMatrix(np.zeros((2, 2))), 0.0)


def make_class(points, label=0):
    pts = np.asarray(points, dtype=float)
    return FeatureMatrix([f"p{i}" for i in range(len(pts))], pts, np.full(len(pts), label))


class TestBuildClf:
    def test_full_merge_single_node(self):
        x = make_class([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
        f = build_clf(x, ForestParams(1.0, 0.5))
        assert len(f.nodes) == 1
        assert sorted(f.nodes[0].members) == [0, 1, 2]
        assert f.roots == [0]

    def test_two_distant_clusters_two_roots(self):
        d_rd = 0.5
        far = 100.0 * d_rd
        pts = [[0, 0], [0.1, 0], [far, 0], [far + 0.1, 0]]
        f = build_clf(make_class(pts), ForestParams(d_rd, 0.05))
        assert f.n_trees == 2

    def test_collinear_chain_matches_reference(self):
        d_rn = 1.0
        pts = [[i * 1.5 * d_rn, 0.0] for i in range(5)]
        x = make_class(pts)
        f = build_clf(x, ForestParams(4.0 * d_rn, d_rn))
        nodes, roots = reference_forest(x.features, 4.0 * d_rn, d_rn)
        assert forest_topology(f) == reference_topology(nodes, roots)
        assert f.n_trees == 1
        assert max(nd.depth for nd in f.nodes) == 2

    def test_requires_single_class(self):
        x = FeatureMatrix(["a", "b"], np.zeros((2, 1)), np.array([0, 1]))
        with pytest.raises(InputError, match="single class"):
            build_clf(x, ForestParams(1.0, 1.0))

    def test_requires_absolute_radii(self):
        x = make_class([[0.0], [1.0]])
        with pytest.raises(InputError, match="resolve"):
            build_clf(x, ForestParams(1.0, 1.0, multiples=True))

    def test_empty_class_unrepresentable(self):
        with pytest.raises(InputError):
            FeatureMatrix([], np.zeros((0, 1)), np.zeros(0, dtype=int))

    def test_single_sample(self):
        f = build_clf(make_class([[2.0, 3.0]]), ForestParams(1.0, 1.0))
        assert len(f.nodes) == 1 and f.nodes[0].depth == 0 and f.n_trees == 1

    def test_leader_radius_flag(self):
        # gap is beyond d_rn but within d_rd: linked under the density rule,
        # split into two roots under the node rule
        pts = [[0.0, 0.0], [0.0, 0.05], [1.0, 0.0]]
        x = make_class(pts)
        linked = build_clf(x, ForestParams(2.0, 0.1), leader_radius="density")
        split = build_clf(x, ForestParams(2.0, 0.1), leader_radius="node")
        assert linked.n_trees == 1
        assert split.n_trees == 2

    def test_determinism(self, rng):
        x = random_matrix(rng, 60, 3, labels=np.zeros(60, dtype=int))
        a = build_clf(x, ForestParams(1.0, 0.3))
        b = build_clf(x, ForestParams(1.0, 0.3))
        assert forest_topology(a) == forest_topology(b)

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_reference_on_random_instances(self, seed):
        r = np.random.default_rng(1000 + seed)
        n = int(r.integers(2, 80))
        x = random_matrix(r, n, int(r.integers(1, 5)), labels=np.zeros(n, dtype=int))
        d_rn = float(r.uniform(0.2, 1.0))
        d_rd = d_rn * float(r.uniform(1.0, 4.0))
        f = build_clf(x, ForestParams(d_rd, d_rn))
        nodes, roots = reference_forest(x.features, d_rd, d_rn)
        assert forest_topology(f) == reference_topology(nodes, roots)


class TestForestInvariants:
    @pytest.mark.parametrize("seed", range(8))
    def test_invariant_bundle(self, seed):
        r = np.random.default_rng(7000 + seed)
        f, x, params = random_forest(r, n=int(r.integers(5, 70)))
        d = pairwise_distances(x).values
        dens = compute_density(pairwise_distances(x), params.d_rd)
        rho = dens.values
        # partition totality and disjointness
        seen = sorted(m for nd in f.nodes for m in nd.members)
        assert seen == list(range(f.n_samples))
        order_key = {int(s): k for k, s in enumerate(dens.order)}
        for nd in f.nodes:
            # prototype density dominance
            assert all(rho[nd.prototype] >= rho[m] for m in nd.members)
            # members within d_rn of the prototype
            assert all(d[nd.prototype, m] <= params.d_rn for m in nd.members)
            if nd.leader is not None:
                lead = f.nodes[nd.leader]
                # leader within d_rd, created earlier, strictly denser modulo ties
                assert d[nd.prototype, lead.prototype] <= params.d_rd
                assert order_key[lead.prototype] < order_key[nd.prototype]
        # leader monotonicity along root-ward paths + acyclicity
        for nd in f.nodes:
            hops, cur = 0, nd
            while cur.leader is not None:
                nxt = f.nodes[cur.leader]
                assert (-rho[nxt.prototype], nxt.prototype) < (
                    -rho[cur.prototype],
                    cur.prototype,
                )
                cur = nxt
                hops += 1
                assert hops <= len(f.nodes)
            assert cur.node_id in f.roots


class TestForestStats:
    def test_single_node(self):
        f = build_clf(make_class([[0.0]]), ForestParams(1.0, 1.0))
        stats = forest_stats(f)
        assert stats["trees"] == 1 and stats["nodes"] == 1 and stats["max_depth"] == 0

    def test_fixture_three_paths(self):
        f = load_forest(fig3_forest_path())
        stats = forest_stats(f)
        assert stats["trees"] == 1 and stats["paths"] == 3

    def test_random_stats_match_traversal(self, rng):
        f, _, _ = random_forest(rng)
        stats = forest_stats(f)
        paths, _ = path_repetition_bruteforce(f)
        assert stats["paths"] == len(paths)
        assert stats["nodes"] == len(f.nodes)
        assert stats["samples"] == sum(len(nd.members) for nd in f.nodes)
        assert stats["max_depth"] == max(len(p) for p in paths) - 1
        assert stats["trees"] == len(f.roots)


class TestSerialization:
    def test_round_trip_doc(self, rng):
        f, _, _ = random_forest(rng)
        doc = forest_to_doc(f)
        back = forest_from_doc(json.loads(json.dumps(doc)))
        assert forest_topology(back) == forest_topology(f)
        assert forest_to_doc(back) == doc

    def test_round_trip_file(self, rng, tmp_path):
        f, _, _ = random_forest(rng)
        p = tmp_path / "forest.json"
        save_forest(f, p)
        assert forest_topology(load_forest(p)) == forest_topology(f)

    def test_malformed_doc(self):
        with pytest.raises(InputError, match="malformed"):
            forest_from_doc({"class": 0})

    def test_invalid_structure_rejected(self):
        doc = json.loads(fig3_forest_path().read_text())
        doc["nodes"][3]["depth"] = 9
        with pytest.raises(InputError):
            forest_from_doc(doc)

    def test_overlapping_members_rejected(self):
        doc = json.loads(fig3_forest_path().read_text())
        doc["nodes"][1]["members"] = [1, 2]
        with pytest.raises(InputError):
            forest_from_doc(doc)


class TestBuildForests:
    def test_multiclass_with_multiples(self, rng):
        feats = np.vstack(
            [rng.normal(0, 0.3, (20, 2)), rng.normal(6, 0.3, (30, 2))]
        )
        x = FeatureMatrix(
            [f"s{i}" for i in range(50)], feats, np.array([0] * 20 + [1] * 30)
        )
        build = build_forests(x, ForestParams(4.0, 1.0, multiples=True))
        assert sorted(build.forests) == [0, 1]
        assert not build.params.multiples and build.base_distance > 0
        assert build.forests[0].n_samples == 20
        assert build.forests[1].n_samples == 30

    def test_degenerate_all_equal_features(self):
        x = FeatureMatrix(
            ["a", "b", "c", "d"], np.zeros((4, 2)), np.array([0, 0, 1, 1])
        )
        build = build_forests(x, ForestParams(2.0, 1.0, multiples=True))
        assert build.degenerate
        for f in build.forests.values():
            assert len(f.nodes) == 1 and f.n_trees == 1

    def test_threads_do_not_change_result(self, rng):
        x = random_matrix(rng, 40, 2, labels=np.array([i % 4 for i in range(40)]))
        a = build_forests(x, ForestParams(1.0, 0.3), threads=1)
        b = build_forests(x, ForestParams(1.0, 0.3), threads=4)
        for c in a.forests:
            assert forest_topology(a.forests[c]) == forest_topology(b.forests[c])
