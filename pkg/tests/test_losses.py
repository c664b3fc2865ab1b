import numpy as np
import pytest

from cogforest import (
    FeatureMatrix,
    ForestParams,
    InputError,
    assign_center,
    build_clf,
    build_forests,
    centers_to_doc,
    extract_centers,
    multi_center_loss,
    multi_center_triplet_loss,
    softmax_cross_entropy,
)
from oracles import central_difference


def two_blob_matrix(rng, n0=8, n1=8, gap=6.0, d=3):
    feats = np.vstack(
        [rng.normal(0, 0.4, (n0, d)), rng.normal(gap, 0.4, (n1, d))]
    )
    labels = np.array([0] * n0 + [1] * n1)
    return FeatureMatrix([f"s{i}" for i in range(n0 + n1)], feats, labels)


def build_center_setup(rng, **kw):
    x = two_blob_matrix(rng, **kw)
    build = build_forests(x, ForestParams(4.0, 1.0, multiples=True))
    return x, build.forests, extract_centers(build.forests, x)


class TestExtractCenters:
    def test_single_tree_center_is_root_prototype(self, rng):
        feats = rng.normal(0, 0.2, (5, 2))
        x = FeatureMatrix([f"s{i}" for i in range(5)], feats, np.zeros(5, dtype=int))
        f = build_clf(x, ForestParams(5.0, 0.01))
        centers = extract_centers({0: f}, x)
        root_proto = f.nodes[f.roots[0]].prototype
        assert np.array_equal(centers.vectors[0], feats[root_proto])

    def test_three_tree_class_gives_three_centers(self, rng):
        feats = np.vstack(
            [rng.normal(0, 0.1, (4, 2)), rng.normal(20, 0.1, (4, 2)), rng.normal(-20, 0.1, (4, 2))]
        )
        x = FeatureMatrix([f"s{i}" for i in range(12)], feats, np.zeros(12, dtype=int))
        f = build_clf(x, ForestParams(1.0, 0.3))
        assert f.n_trees == 3
        centers = extract_centers({0: f}, x)
        assert centers.count_for(0) == 3

    def test_provenance_roots_match_forest(self, rng):
        x, forests, centers = build_center_setup(rng)
        for c, f in forests.items():
            roots = [r for (cls, r) in centers.provenance if cls == c]
            assert roots == f.roots

    def test_center_count_equals_tree_count(self, rng):
        x, forests, centers = build_center_setup(rng, n0=20, n1=15)
        for c, f in forests.items():
            assert centers.count_for(c) == f.n_trees


class TestAssignCenter:
    def test_root_and_leaf_assignment(self, rng):
        x, forests, centers = build_center_setup(rng)
        for c, f in forests.items():
            root = f.nodes[f.roots[0]]
            sid = f.ids[root.prototype]
            assert assign_center(sid, forests, centers) == centers.assignment[sid]
            deepest = max(f.nodes, key=lambda nd: nd.depth)
            sid = f.ids[deepest.members[0]]
            assert assign_center(sid, forests, centers) == centers.assignment[sid]

    def test_partition_sizes_equal_tree_sizes(self, rng):
        feats = np.vstack([rng.normal(0, 0.2, (6, 2)), rng.normal(30, 0.2, (9, 2))])
        x = FeatureMatrix([f"s{i}" for i in range(15)], feats, np.zeros(15, dtype=int))
        f = build_clf(x, ForestParams(1.0, 0.3))
        assert f.n_trees == 2
        centers = extract_centers({0: f}, x)
        sizes = {}
        for sid in x.ids:
            row = assign_center(sid, {0: f}, centers)
            sizes[row] = sizes.get(row, 0) + 1
        tree = f.node_tree()
        expect = {}
        for nd in f.nodes:
            expect[int(tree[nd.node_id])] = expect.get(int(tree[nd.node_id]), 0) + len(nd.members)
        assert sorted(sizes.values()) == sorted(expect.values())

    def test_unknown_sample(self, rng):
        x, forests, centers = build_center_setup(rng)
        with pytest.raises(InputError, match="unknown sample"):
            assign_center("nope", forests, centers)


class TestSoftmaxCrossEntropy:
    def test_matches_manual(self):
        logits = np.array([[2.0, 0.5, -1.0], [0.0, 0.0, 0.0]])
        labels = np.array([0, 2])
        loss, _ = softmax_cross_entropy(logits, labels)
        p0 = np.exp(logits[0]) / np.exp(logits[0]).sum()
        expect = -np.log(p0[0]) - np.log(1 / 3)
        assert loss == pytest.approx(expect, rel=1e-12)

    def test_gradient_matches_fd(self, rng):
        logits = rng.normal(0, 1, (4, 3))
        labels = rng.integers(0, 3, 4)
        _, grad = softmax_cross_entropy(logits, labels)
        fd = central_difference(lambda z: softmax_cross_entropy(z, labels)[0], logits.copy())
        assert np.abs(grad - fd).max() < 1e-6


class TestMultiCenterLoss:
    def test_zero_distance_gives_cls_only(self, rng):
        x, forests, centers = build_center_setup(rng)
        feats = centers.centers_for(x.ids)
        breakdown, _ = multi_center_loss(feats, x.labels, centers, x.ids)
        assert breakdown.ifl_term == 0.0
        assert breakdown.total == breakdown.cls_term

    def test_alpha_zero_disables_regularizer(self, rng):
        x, forests, centers = build_center_setup(rng)
        feats = x.features + rng.normal(0, 0.2, x.features.shape)
        breakdown, grad = multi_center_loss(feats, x.labels, centers, x.ids, alpha=0.0)
        assert breakdown.total == breakdown.cls_term
        _, grad_cls = softmax_cross_entropy(feats, x.labels)
        assert np.array_equal(grad, grad_cls)

    def test_breakdown_identity(self, rng):
        x, forests, centers = build_center_setup(rng)
        feats = x.features + rng.normal(0, 0.2, x.features.shape)
        breakdown, _ = multi_center_loss(feats, x.labels, centers, x.ids, alpha=0.7)
        assert abs(breakdown.total - (breakdown.cls_term + 0.7 * breakdown.ifl_term)) <= 1e-12
        assert breakdown.ifl_term >= 0

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(11)
        x, forests, centers = build_center_setup(rng, n0=8, n1=8, d=8)
        feats = x.features + rng.normal(0, 0.5, x.features.shape)
        _, grad = multi_center_loss(feats, x.labels, centers, x.ids, alpha=0.5)

        def total(f):
            return multi_center_loss(f, x.labels, centers, x.ids, alpha=0.5)[0].total

        fd = central_difference(total, feats.copy())
        rel = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
        assert rel.max() < 1e-5

    def test_translation_covariance(self, rng):
        x, forests, centers = build_center_setup(rng)
        feats = x.features + rng.normal(0, 0.2, x.features.shape)
        b1, _ = multi_center_loss(feats, x.labels, centers, x.ids)
        shift = rng.normal(0, 5.0, feats.shape[1])
        shifted = extract_centers(
            {c: f for c, f in forests.items()},
            FeatureMatrix(x.ids, x.features + shift, x.labels),
        )
        b2, _ = multi_center_loss(feats + shift, x.labels, shifted, x.ids)
        assert b2.ifl_term == pytest.approx(b1.ifl_term, abs=1e-9)

    def test_dimension_mismatch(self, rng):
        x, forests, centers = build_center_setup(rng)
        with pytest.raises(InputError, match="dimension mismatch"):
            multi_center_loss(np.zeros((len(x.ids), 7)), x.labels, centers, x.ids)


class TestMultiCenterTripletLoss:
    def test_inactive_hinge(self, rng):
        x, forests, centers = build_center_setup(rng)
        feats = centers.centers_for(x.ids)  # on their own centers: dp=0 < dn
        breakdown, grad = multi_center_triplet_loss(feats, x.labels, centers, x.ids)
        assert breakdown.ifl_term == 0.0
        _, grad_cls = softmax_cross_entropy(feats, x.labels)
        assert np.array_equal(grad, grad_cls)

    def test_boundary_gives_zero_subgradient(self):
        # hand-built: one center per class, feature exactly equidistant
        from cogforest.losses import CenterSet

        centers = CenterSet(
            classes=[0, 1],
            vectors=np.array([[0.0, 0.0], [2.0, 0.0]]),
            center_class=np.array([0, 1]),
            provenance=[(0, 0), (1, 0)],
            assignment={"a": 0},
        )
        feats = np.array([[1.0, 0.0]])
        labels = np.array([0])
        breakdown, grad = multi_center_triplet_loss(
            feats, labels, centers, ["a"], alpha=1.0
        )
        assert breakdown.ifl_term == 0.0
        _, grad_cls = softmax_cross_entropy(feats, labels)
        assert np.array_equal(grad, grad_cls)

    def test_gradient_matches_fd_with_active_hinges(self):
        rng = np.random.default_rng(23)
        x, forests, centers = build_center_setup(rng, n0=8, n1=8, d=8, gap=2.0)
        # place half the batch near the opposite class's center: active hinges
        opposite = centers.vectors[
            [centers.count_for(0) if y == 0 else 0 for y in x.labels]
        ]
        feats = np.where(
            (np.arange(len(x.ids)) % 2 == 0)[:, None],
            opposite + rng.normal(0, 0.3, x.features.shape),
            x.features + rng.normal(0, 0.3, x.features.shape),
        )
        breakdown, grad = multi_center_triplet_loss(
            feats, x.labels, centers, x.ids, alpha=0.5
        )
        assert breakdown.ifl_term > 0

        def total(f):
            return multi_center_triplet_loss(f, x.labels, centers, x.ids, alpha=0.5)[0].total

        positives = centers.centers_for(x.ids)
        dist_all = np.linalg.norm(
            feats[:, None, :] - centers.vectors[None, :, :], axis=2
        )
        own = centers.center_class[None, :] == x.labels[:, None]
        masked = np.where(own, np.inf, dist_all)
        two = np.sort(masked, axis=1)[:, :2]
        dp = np.linalg.norm(feats - positives, axis=1)
        dn = two[:, 0]
        safe = (
            (np.abs(dp - dn) > 1e-3)
            & (dp > 1e-3)
            & (dn > 1e-3)
            & ((two[:, 1] - two[:, 0]) > 1e-3)
        )
        fd = central_difference(total, feats.copy())
        rel = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
        assert rel[safe].max() < 1e-5
        assert safe.sum() >= len(x.ids) // 2

    def test_single_class_errors(self, rng):
        feats = rng.normal(0, 0.3, (5, 2))
        x = FeatureMatrix([f"s{i}" for i in range(5)], feats, np.zeros(5, dtype=int))
        f = build_clf(x, ForestParams(5.0, 1.0))
        centers = extract_centers({0: f}, x)
        with pytest.raises(InputError, match="at least 2 classes"):
            multi_center_triplet_loss(feats, x.labels, centers, x.ids)

    def test_scale_covariance(self, rng):
        x, forests, centers = build_center_setup(rng, gap=2.0)
        feats = x.features + rng.normal(0, 1.0, x.features.shape)
        b1, _ = multi_center_triplet_loss(feats, x.labels, centers, x.ids)
        s = 3.7
        scaled_centers = extract_centers(
            forests, FeatureMatrix(x.ids, x.features * s, x.labels)
        )
        b2, _ = multi_center_triplet_loss(feats * s, x.labels, scaled_centers, x.ids)
        assert b2.ifl_term == pytest.approx(s * b1.ifl_term, rel=1e-9)

    def test_margin_extension(self, rng):
        x, forests, centers = build_center_setup(rng)
        feats = centers.centers_for(x.ids)
        b0, _ = multi_center_triplet_loss(feats, x.labels, centers, x.ids, margin=0.0)
        b1, _ = multi_center_triplet_loss(feats, x.labels, centers, x.ids, margin=100.0)
        assert b0.ifl_term == 0.0 and b1.ifl_term > 0.0


class TestCentersDoc:
    def test_doc_shape(self, rng):
        x, forests, centers = build_center_setup(rng)
        doc = centers_to_doc(centers)
        for c, f in forests.items():
            assert len(doc[str(c)]) == f.n_trees
            assert doc[str(c)][0]["tree_root_id"] == f.roots[0]
