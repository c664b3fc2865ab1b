"""Noise selection over a leading forest: small trees, bottom layers, low density."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .data import NoiseParams, format_float
from .errors import InputError
from .forest import Densities, LeadingForest

REASON_CLUSTER = "cluster_size"
REASON_DEPTH = "depth_layer"


@dataclass(frozen=True, eq=False)
class NoiseReport:
    """Flagged samples of one class with the criterion that fired.

    ``candidates`` holds the pre-cap hits of the structural criteria;
    ``flagged`` is their intersection with the lowest-density fraction.
    ``density_rank`` maps every class sample to its ascending-density
    percentile in (0, 1].
    """

    class_label: int
    flagged: list[str]
    reason: dict[str, str]
    density_rank: dict[str, float]
    candidates: list[str]


def _density_cap(p_d: float, n: int) -> int:
    # guard against float fuzz pushing an exact integer product past its ceil
    return max(0, math.ceil(p_d * n - 1e-9))


def select_noise(f: LeadingForest, rho: Densities, params: NoiseParams) -> NoiseReport:
    """Apply the three criteria: (small tree OR bottom layers) AND low density.

    Criterion 1 flags every sample of a tree holding fewer than n_min
    samples. Criterion 2 flags samples of nodes at depth >= n_d that sit in
    the bottom n_l depth layers of their tree. Criterion 3 keeps only
    candidates among the ceil(p_d * N) lowest-density samples of the class
    (ties broken by ascending index), which also caps the flagged count.
    """
    n = f.n_samples
    if rho.values.shape != (n,):
        raise InputError("density vector does not match the forest's samples")
    tree = f.node_tree()
    tree_samples = np.zeros(f.n_trees, dtype=np.int64)
    tree_max_depth = np.zeros(f.n_trees, dtype=np.int64)
    for nd in f.nodes:
        t = tree[nd.node_id]
        tree_samples[t] += len(nd.members)
        tree_max_depth[t] = max(tree_max_depth[t], nd.depth)

    reason_local: dict[int, str] = {}
    for nd in f.nodes:
        if tree_samples[tree[nd.node_id]] < params.n_min:
            for m in nd.members:
                reason_local[m] = REASON_CLUSTER
    if params.n_l >= 1:
        for nd in f.nodes:
            floor = tree_max_depth[tree[nd.node_id]] - params.n_l + 1
            if nd.depth >= params.n_d and nd.depth >= floor:
                for m in nd.members:
                    reason_local.setdefault(m, REASON_DEPTH)

    order_asc = np.lexsort((np.arange(n), rho.values))
    rank = np.empty(n, dtype=np.int64)
    rank[order_asc] = np.arange(n)
    cap = _density_cap(params.p_d, n)
    lowest = set(int(i) for i in order_asc[:cap])

    candidates = sorted(reason_local)
    flagged_local = [m for m in candidates if m in lowest]
    return NoiseReport(
        f.class_label,
        [f.ids[m] for m in flagged_local],
        {f.ids[m]: reason_local[m] for m in flagged_local},
        {f.ids[i]: float((rank[i] + 1) / n) for i in range(n)},
        [f.ids[m] for m in candidates],
    )


def select_noise_all(
    forests: Mapping[int, LeadingForest],
    densities: Mapping[int, Densities],
    params: NoiseParams,
) -> dict[int, NoiseReport]:
    return {c: select_noise(forests[c], densities[c], params) for c in sorted(forests)}


def flagged_ids(reports: Iterable[NoiseReport]) -> frozenset[str]:
    out: set[str] = set()
    for rep in reports:
        out.update(rep.flagged)
    return frozenset(out)


def write_noise_csv(reports: Iterable[NoiseReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "reason", "density_percentile"])
    for rep in reports:
        for s in rep.flagged:
            w.writerow([s, rep.reason[s], format_float(rep.density_rank[s])])


def noise_to_csv(reports: Iterable[NoiseReport], path: str | Path) -> None:
    """CSV export `id,reason,density_percentile`, one row per flagged sample."""
    with open(path, "w", newline="") as fh:
        write_noise_csv(reports, fh)
