"""Attribute paths, per-sample sampling weights, and environment construction."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import BalanceFactors, FeatureMatrix, format_float
from .errors import InputError
from .forest import LeadingForest

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PathSet:
    """Every root-to-leaf node sequence of a forest, plus per-node repetition.

    ``repetition[n]`` counts the paths that contain node ``n``; it equals the
    number of leaves below the node and is at least 1.
    """

    paths: list[list[int]]
    repetition: np.ndarray


def generate_paths(f: LeadingForest) -> PathSet:
    """Enumerate root-to-leaf paths (depth-first, children in creation order)."""
    paths: list[list[int]] = []
    for r in f.roots:
        stack: list[list[int]] = [[r]]
        while stack:
            path = stack.pop()
            node = f.nodes[path[-1]]
            if not node.children:
                paths.append(path)
            else:
                for c in reversed(node.children):
                    stack.append(path + [c])
    repetition = np.zeros(len(f.nodes), dtype=np.int64)
    for path in paths:
        repetition[path] += 1
    return PathSet(paths, repetition)


def resample_probs(counts: Sequence[int] | np.ndarray, q: float) -> np.ndarray:
    """Sampling probabilities p_j = n_j^q / sum_i n_i^q.

    q = 0 balances the groups exactly; q = 1 is proportional sampling.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise InputError("counts must be non-empty")
    if (counts < 1).any():
        raise InputError("counts must all be >= 1")
    if not (0.0 <= q <= 1.0):
        raise InputError(f"q must lie in [0, 1], got {q}")
    powered = counts**q
    return powered / powered.sum()


@dataclass(frozen=True, eq=False)
class SampleWeights:
    """Normalized per-sample sampling probabilities, aligned with ``ids``."""

    ids: list[str]
    weights: np.ndarray
    scope: str = "class"


@dataclass(frozen=True, eq=False)
class AttributeWeightDetail:
    """Intermediate quantities of attribute-wise weighting, for inspection.

    raw values are pre-normalization: ``node_weights`` are the per-node
    weights after the repetition penalty, ``raw`` the per-sample shares
    before the final normalization.
    """

    paths: PathSet
    path_counts: np.ndarray
    path_weights: np.ndarray
    node_weights: np.ndarray
    raw: np.ndarray
    weights: np.ndarray


def attribute_weight_detail(
    f: LeadingForest, q_attr: float, excluded: Iterable[str] = ()
) -> AttributeWeightDetail:
    """Attribute-balanced weighting over one class's forest.

    Each root-to-leaf path is one implicit attribute. Path weights follow
    resample_probs over per-path sample counts; each node accumulates
    path_weight / path_length from every path containing it, is penalized by
    its repetition count, and splits its weight equally among members.

    Excluded samples are dropped from node member lists before the path
    counts are taken; paths left without samples get zero weight and the
    remaining paths share the balance.
    """
    ps = generate_paths(f)
    id_pos = {s: i for i, s in enumerate(f.ids)}
    excluded_local = {id_pos[s] for s in excluded if s in id_pos}
    members_left: list[list[int]] = [
        [m for m in nd.members if m not in excluded_local] for nd in f.nodes
    ]
    counts = np.array(
        [sum(len(members_left[n]) for n in path) for path in ps.paths], dtype=np.int64
    )
    alive = np.flatnonzero(counts > 0)
    if alive.size == 0:
        raise InputError(f"class {f.class_label}: every sample is excluded")
    path_weights = np.zeros(len(ps.paths))
    path_weights[alive] = resample_probs(counts[alive], q_attr)
    node_acc = np.zeros(len(f.nodes))
    for k in alive:
        share = path_weights[k] / len(ps.paths[k])
        for n in ps.paths[k]:
            node_acc[n] += share
    node_weights = node_acc / ps.repetition
    raw = np.zeros(f.n_samples)
    for nd in f.nodes:
        left = members_left[nd.node_id]
        if left:
            raw[left] = node_weights[nd.node_id] / len(left)
    total = raw.sum()
    return AttributeWeightDetail(ps, counts, path_weights, node_weights, raw, raw / total)


def attribute_weights(
    f: LeadingForest, q_attr: float, excluded: Iterable[str] = ()
) -> SampleWeights:
    """Normalized class-local sampling weights (see attribute_weight_detail)."""
    detail = attribute_weight_detail(f, q_attr, excluded)
    return SampleWeights(list(f.ids), detail.weights, scope="class")


@dataclass(frozen=True, eq=False)
class Environment:
    """One resampled view of the dataset under a (q_cls, q_attr) pair."""

    env_id: str
    factors: BalanceFactors
    weights: SampleWeights
    excluded: frozenset[str]


def build_environment(
    matrix: FeatureMatrix | None,
    forests: Mapping[int, LeadingForest],
    factors: BalanceFactors,
    excluded: Iterable[str] = (),
    env_id: str = "e0",
) -> Environment:
    """Combine class-wise and attribute-wise balancing into global weights.

    Class masses come from resample_probs over non-excluded class sizes with
    q_cls; within each class the mass is spread by attribute_weights with
    q_attr. Excluded samples get weight exactly 0. When ``matrix`` is given,
    its ids fix the output order and must match the forests per class.
    """
    if not forests:
        raise InputError("at least one class forest is required")
    excluded = frozenset(excluded)
    classes = sorted(forests)
    if matrix is not None:
        order = list(matrix.ids)
        for c in classes:
            expect = {matrix.ids[i] for i in matrix.rows_of(c)}
            if set(forests[c].ids) != expect:
                raise InputError(f"forest/feature id mismatch for class {c}")
        if set(matrix.class_labels()) != set(classes):
            raise InputError("forests do not cover every class in the matrix")
    else:
        order = [s for c in classes for s in forests[c].ids]
        if len(set(order)) != len(order):
            raise InputError("forests share sample ids; classes must be disjoint")
    sizes = []
    for c in classes:
        left = len(forests[c].ids) - sum(1 for s in forests[c].ids if s in excluded)
        if left == 0:
            raise InputError(f"class {c}: every sample is excluded")
        sizes.append(left)
    class_mass = resample_probs(sizes, factors.q_cls)
    pos = {s: i for i, s in enumerate(order)}
    weights = np.zeros(len(order))
    for c, mass in zip(classes, class_mass):
        sw = attribute_weights(forests[c], factors.q_attr, excluded)
        for s, w in zip(sw.ids, sw.weights):
            weights[pos[s]] = mass * w
    weights /= weights.sum()
    return Environment(env_id, factors, SampleWeights(order, weights, scope="global"), excluded)


def draw_batch(
    env: Environment, batch_size: int, seed: int | np.random.Generator
) -> list[str]:
    """Draw ids i.i.d. with replacement from the environment's weights."""
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(env.weights.ids), size=batch_size, replace=True, p=env.weights.weights)
    return [env.weights.ids[i] for i in idx]


# ---------------------------------------------------------------------------
# Exports.


def write_weights_csv(sw: SampleWeights, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "weight"])
    for s, v in zip(sw.ids, sw.weights):
        w.writerow([s, format_float(v)])


def weights_to_csv(sw: SampleWeights, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        write_weights_csv(sw, fh)


def weights_to_doc(sw: SampleWeights) -> dict:
    return {
        "scope": sw.scope,
        "ids": list(sw.ids),
        "weights": [float(v) for v in sw.weights],
    }


def environment_to_doc(env: Environment) -> dict:
    return {
        "env_id": env.env_id,
        "q_cls": env.factors.q_cls,
        "q_attr": env.factors.q_attr,
        "excluded": sorted(env.excluded),
        "ids": list(env.weights.ids),
        "weights": [float(v) for v in env.weights.weights],
    }


def environment_from_doc(doc: dict) -> Environment:
    try:
        factors = BalanceFactors(float(doc["q_cls"]), float(doc["q_attr"]))
        sw = SampleWeights(
            [str(s) for s in doc["ids"]],
            np.asarray(doc["weights"], dtype=np.float64),
            scope="global",
        )
        return Environment(str(doc["env_id"]), factors, sw, frozenset(doc["excluded"]))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed environment document: {exc}") from None


def save_environment(env: Environment, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(environment_to_doc(env), fh, indent=2)
        fh.write("\n")


def load_environment(path: str | Path) -> Environment:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
    return environment_from_doc(doc)
