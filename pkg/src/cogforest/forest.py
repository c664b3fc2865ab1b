"""Density computation and per-class coarse-grained leading forests."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DistanceMatrix,
    FeatureMatrix,
    ForestParams,
    base_distance,
    pairwise_distances,
)
from .errors import InputError

THREADS_ENV = "COGFOREST_THREADS"


@dataclass(frozen=True, eq=False)
class Densities:
    """Per-sample densities and the processing order they induce.

    ``order`` sorts samples by decreasing density, ties broken by ascending
    sample index, so it is a deterministic permutation of 0..N-1.
    """

    values: np.ndarray
    order: np.ndarray


def compute_density(d: DistanceMatrix, d_rd: float) -> Densities:
    """Gaussian-kernel density: sum of exp(-(d_ij/d_rd)^2) over j within d_rd.

    Neighbors strictly beyond d_rd contribute nothing; a sample with no
    neighbor inside the radius has density exactly 0.
    """
    if not d_rd > 0:
        raise InputError(f"d_rd must be positive, got {d_rd}")
    v = d.values
    with np.errstate(over="ignore", under="ignore"):
        contrib = np.exp(-((v / d_rd) ** 2))
    inside = v <= d_rd
    np.fill_diagonal(inside, False)
    rho = (contrib * inside).sum(axis=1)
    order = np.lexsort((np.arange(rho.size), -rho))
    return Densities(rho, order)


@dataclass
class CoarseNode:
    """One coarse-grained node: a prototype plus the samples merged into it."""

    node_id: int
    prototype: int
    members: list[int]
    leader: int | None
    children: list[int]
    depth: int


@dataclass
class LeadingForest:
    """Per-class forest of coarse nodes linked by leader (parent) edges.

    ``ids`` lists the class's sample ids in class-local order; prototype and
    member indices are positions in that list. ``membership`` maps each
    class-local sample index to its node id.
    """

    class_label: int
    params: ForestParams
    metric: str
    ids: list[str]
    nodes: list[CoarseNode]
    roots: list[int]
    membership: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        n = len(self.ids)
        if n < 1:
            raise InputError("forest must cover at least one sample")
        if len(set(self.ids)) != n:
            raise InputError("forest ids must be unique")
        membership = np.full(n, -1, dtype=np.int64)
        for pos, node in enumerate(self.nodes):
            if node.node_id != pos:
                raise InputError(f"node id {node.node_id} out of order at position {pos}")
            if not node.members:
                raise InputError(f"node {pos} has no members")
            if node.prototype not in node.members:
                raise InputError(f"node {pos}: prototype not among members")
            for m in node.members:
                if not 0 <= m < n:
                    raise InputError(f"node {pos}: member index {m} out of range")
                if membership[m] != -1:
                    raise InputError(f"sample {m} belongs to nodes {membership[m]} and {pos}")
                membership[m] = pos
        if (membership == -1).any():
            missing = int(np.flatnonzero(membership == -1)[0])
            raise InputError(f"sample {missing} belongs to no node")
        for node in self.nodes:
            if node.leader is None:
                if node.depth != 0:
                    raise InputError(f"root node {node.node_id} has depth {node.depth}")
            else:
                if not 0 <= node.leader < len(self.nodes) or node.leader == node.node_id:
                    raise InputError(f"node {node.node_id}: bad leader {node.leader}")
                parent = self.nodes[node.leader]
                if node.node_id not in parent.children:
                    raise InputError(f"node {node.node_id} missing from leader's children")
                if node.depth != parent.depth + 1:
                    raise InputError(f"node {node.node_id}: depth inconsistent with leader")
        expected_roots = [nd.node_id for nd in self.nodes if nd.leader is None]
        if sorted(self.roots) != expected_roots:
            raise InputError("roots list disagrees with leaderless nodes")
        for node in self.nodes:
            for c in node.children:
                if not 0 <= c < len(self.nodes) or self.nodes[c].leader != node.node_id:
                    raise InputError(f"node {node.node_id}: bad child link {c}")
        # depth consistency above guarantees acyclicity of leader links
        self.membership = membership

    @property
    def n_samples(self) -> int:
        return len(self.ids)

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def node_tree(self) -> np.ndarray:
        """Node id -> index of its root in ``roots`` (i.e. which tree)."""
        tree = np.full(len(self.nodes), -1, dtype=np.int64)
        for t, r in enumerate(self.roots):
            stack = [r]
            while stack:
                nid = stack.pop()
                tree[nid] = t
                stack.extend(self.nodes[nid].children)
        return tree

    def leaves(self) -> list[int]:
        return [nd.node_id for nd in self.nodes if not nd.children]


def build_clf(
    x: FeatureMatrix,
    params: ForestParams,
    metric: str = "euclidean",
    leader_radius: str = "density",
) -> LeadingForest:
    """Build the coarse-grained leading forest for one class.

    All samples must carry the same label (or none). Radii must already be
    absolute; resolve multiples against the full dataset first.

    ``leader_radius`` bounds the leader search: "density" uses d_rd (the
    formal definition), "node" uses d_rn (the looser pseudocode variant).
    """
    labels = x.class_labels()
    if len(labels) != 1:
        raise InputError(f"build_clf expects a single class, got labels {labels}")
    if params.multiples:
        raise InputError("resolve_params must be applied before build_clf")
    d = pairwise_distances(x, metric)
    forest, _ = _build_class_forest(d.values, params, metric, labels[0], x.ids, leader_radius)
    return forest


def _build_class_forest(
    dist: np.ndarray,
    params: ForestParams,
    metric: str,
    class_label: int,
    ids: list[str],
    leader_radius: str,
) -> tuple[LeadingForest, Densities]:
    if dist.shape[0] == 0:
        raise InputError(f"class {class_label} has no samples")
    if leader_radius not in ("density", "node"):
        raise InputError(f"leader_radius must be 'density' or 'node', got {leader_radius!r}")
    dens = compute_density(DistanceMatrix(dist, metric), params.d_rd)
    radius = params.d_rd if leader_radius == "density" else params.d_rn
    n = dist.shape[0]
    visited = np.zeros(n, dtype=bool)
    nodes: list[CoarseNode] = []
    roots: list[int] = []
    protos: list[int] = []
    for i in dens.order:
        if visited[i]:
            continue
        members = np.flatnonzero(~visited & (dist[i] <= params.d_rn))
        visited[members] = True
        leader: int | None = None
        if protos:
            proto_dist = dist[i, protos]
            eligible = proto_dist <= radius
            if eligible.any():
                # argmin keeps the first (earliest-created) node on distance ties
                leader = int(np.argmin(np.where(eligible, proto_dist, np.inf)))
        nid = len(nodes)
        depth = 0 if leader is None else nodes[leader].depth + 1
        nodes.append(CoarseNode(nid, int(i), [int(m) for m in members], leader, [], depth))
        protos.append(int(i))
        if leader is None:
            roots.append(nid)
        else:
            nodes[leader].children.append(nid)
    forest = LeadingForest(class_label, params, metric, list(ids), nodes, roots)
    return forest, dens


@dataclass(frozen=True)
class ForestBuild:
    """Per-class forests plus the densities and resolved radii that produced them."""

    forests: dict[int, LeadingForest]
    densities: dict[int, Densities]
    params: ForestParams
    base_distance: float | None
    degenerate: bool


def build_forests(
    x: FeatureMatrix,
    params: ForestParams,
    metric: str = "euclidean",
    leader_radius: str = "density",
    threads: int | None = None,
) -> ForestBuild:
    """Build one forest per class, resolving multiple-of-base radii globally.

    The base distance is taken over the whole dataset; per-class construction
    then reuses slices of the one distance matrix. Classes build in parallel
    up to ``threads`` workers (default: COGFOREST_THREADS or CPU count).
    """
    d = pairwise_distances(x, metric)
    base = None
    degenerate = False
    if params.multiples:
        base = base_distance(d) if x.n_samples > 1 else 0.0
        degenerate = base <= 0.0
        resolved = ForestParams(
            params.d_rd * (base if base > 0 else 1.0),
            params.d_rn * (base if base > 0 else 1.0),
            multiples=False,
        )
    else:
        resolved = params
    labels = x.class_labels()
    rows = {c: x.rows_of(c) for c in labels}

    def build_one(c: int) -> tuple[LeadingForest, Densities]:
        r = rows[c]
        sub = d.values[np.ix_(r, r)]
        return _build_class_forest(sub, resolved, metric, c, [x.ids[i] for i in r], leader_radius)

    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = max(1, min(threads, len(labels)))
    if threads == 1 or len(labels) == 1:
        built = [build_one(c) for c in labels]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(build_one, labels))
    forests = {c: f for c, (f, _) in zip(labels, built)}
    densities = {c: dens for c, (_, dens) in zip(labels, built)}
    return ForestBuild(forests, densities, resolved, base, degenerate)


def forest_stats(f: LeadingForest) -> dict:
    """Summary counts: trees, nodes, samples, max depth, paths, node-size histogram."""
    sizes = [len(nd.members) for nd in f.nodes]
    hist: dict[int, int] = {}
    for s in sizes:
        hist[s] = hist.get(s, 0) + 1
    return {
        "trees": f.n_trees,
        "nodes": len(f.nodes),
        "samples": f.n_samples,
        "max_depth": max(nd.depth for nd in f.nodes),
        "paths": len(f.leaves()),
        "node_size_hist": {str(k): hist[k] for k in sorted(hist)},
    }


# ---------------------------------------------------------------------------
# JSON serialization: {class, params, ids, nodes, roots}; lossless round-trip.


def forest_to_doc(f: LeadingForest) -> dict:
    return {
        "class": f.class_label,
        "params": {"d_rd": f.params.d_rd, "d_rn": f.params.d_rn, "metric": f.metric},
        "ids": list(f.ids),
        "nodes": [
            {
                "id": nd.node_id,
                "prototype": nd.prototype,
                "members": list(nd.members),
                "leader": nd.leader,
                "children": list(nd.children),
                "depth": nd.depth,
            }
            for nd in f.nodes
        ],
        "roots": list(f.roots),
    }


def forest_from_doc(doc: dict) -> LeadingForest:
    try:
        params = ForestParams(float(doc["params"]["d_rd"]), float(doc["params"]["d_rn"]))
        metric = str(doc["params"].get("metric", "euclidean"))
        nodes = [
            CoarseNode(
                int(nd["id"]),
                int(nd["prototype"]),
                [int(m) for m in nd["members"]],
                None if nd["leader"] is None else int(nd["leader"]),
                [int(c) for c in nd["children"]],
                int(nd["depth"]),
            )
            for nd in doc["nodes"]
        ]
        return LeadingForest(
            int(doc["class"]), params, metric,
            [str(s) for s in doc["ids"]], nodes, [int(r) for r in doc["roots"]],
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed forest document: {exc}") from None


def save_forest(f: LeadingForest, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(forest_to_doc(f), fh, indent=2)
        fh.write("\n")


def load_forest(path: str | Path) -> LeadingForest:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
    return forest_from_doc(doc)
