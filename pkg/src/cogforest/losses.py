"""Tree centers and the multi-center / multi-center triplet loss kernels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .data import FeatureMatrix
from .errors import InputError
from .forest import LeadingForest

EPS = 1e-12

ClsLoss = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True, eq=False)
class CenterSet:
    """One center per tree per class, with a sample-to-center assignment.

    ``vectors`` stacks all centers; ``center_class`` gives each row's class;
    ``provenance`` records (class, root node id); ``assignment`` maps every
    covered sample id to its center row.
    """

    classes: list[int]
    vectors: np.ndarray
    center_class: np.ndarray
    provenance: list[tuple[int, int]]
    assignment: dict[str, int]

    def count_for(self, label: int) -> int:
        return int((self.center_class == label).sum())

    def centers_for(self, sample_ids: Sequence[str]) -> np.ndarray:
        try:
            rows = [self.assignment[s] for s in sample_ids]
        except KeyError as exc:
            raise InputError(f"sample {exc.args[0]!r} has no assigned center") from None
        return self.vectors[rows]


def extract_centers(forests: Mapping[int, LeadingForest], x: FeatureMatrix) -> CenterSet:
    """One center per tree: the feature vector of the tree root's prototype."""
    row_of = {s: i for i, s in enumerate(x.ids)}
    classes = sorted(forests)
    vectors: list[np.ndarray] = []
    center_class: list[int] = []
    provenance: list[tuple[int, int]] = []
    assignment: dict[str, int] = {}
    for c in classes:
        f = forests[c]
        base = len(vectors)
        for r in f.roots:
            proto_id = f.ids[f.nodes[r].prototype]
            if proto_id not in row_of:
                raise InputError(f"forest/feature id mismatch for class {c}")
            vectors.append(x.features[row_of[proto_id]])
            center_class.append(c)
            provenance.append((c, r))
        tree = f.node_tree()
        for local, s in enumerate(f.ids):
            assignment[s] = base + int(tree[f.membership[local]])
    return CenterSet(
        classes,
        np.array(vectors, dtype=np.float64),
        np.array(center_class, dtype=np.int64),
        provenance,
        assignment,
    )


def assign_center(
    sample_id: str, forests: Mapping[int, LeadingForest], centers: CenterSet
) -> int:
    """Center row for one sample, found by walking its tree to the root."""
    for c in sorted(forests):
        f = forests[c]
        if sample_id in f.ids:
            local = f.ids.index(sample_id)
            nid = int(f.membership[local])
            while f.nodes[nid].leader is not None:
                nid = f.nodes[nid].leader
            return centers.provenance.index((c, nid))
    raise InputError(f"unknown sample {sample_id!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """total = cls_term + alpha * ifl_term."""

    total: float
    cls_term: float
    ifl_term: float
    alpha: float


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(logits.shape[0])
    loss = float(-logp[rows, labels].sum())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad


def _pull_gradient(diff: np.ndarray, norms: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(diff)
    nz = norms >= EPS
    grad[nz] = diff[nz] / norms[nz, None]
    return grad


def multi_center_loss(
    features: np.ndarray,
    labels: np.ndarray,
    centers: CenterSet,
    sample_ids: Sequence[str],
    cls_loss: ClsLoss | None = None,
    alpha: float = 0.5,
) -> tuple[LossBreakdown, np.ndarray]:
    """Classification loss plus an unsquared L2 pull toward assigned centers.

    The pull term per sample is ||f_i - C(x_i)||_2; its gradient is the unit
    vector (f_i - C)/||f_i - C||, taken as zero within EPS of the center.
    Returns the loss breakdown and the gradient w.r.t. the features.
    """
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    features = np.asarray(features, dtype=np.float64)
    assigned = centers.centers_for(sample_ids)
    if assigned.shape != features.shape:
        raise InputError(
            f"feature/center dimension mismatch: {features.shape} vs {assigned.shape}"
        )
    diff = features - assigned
    norms = np.linalg.norm(diff, axis=1)
    ifl = float(norms.sum())
    grad_ifl = _pull_gradient(diff, norms)
    fn = cls_loss if cls_loss is not None else softmax_cross_entropy
    cls_val, grad_cls = fn(features, np.asarray(labels, dtype=np.int64))
    breakdown = LossBreakdown(cls_val + alpha * ifl, cls_val, ifl, alpha)
    return breakdown, grad_cls + alpha * grad_ifl


def multi_center_triplet_loss(
    features: np.ndarray,
    labels: np.ndarray,
    centers: CenterSet,
    sample_ids: Sequence[str],
    cls_loss: ClsLoss | None = None,
    alpha: float = 0.5,
    margin: float = 0.0,
) -> tuple[LossBreakdown, np.ndarray]:
    """Hinge variant: pull toward the own center, push from the nearest
    other-class center.

    Per sample the term is max(0, ||f - C_p|| - ||f - C_n|| + margin) where
    C_n is the closest center of any other class. The subgradient is zero
    when the hinge is inactive or sits exactly at zero. The margin is an
    extension knob and defaults to 0.
    """
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    if len(set(centers.classes)) < 2:
        raise InputError("triplet loss needs centers from at least 2 classes")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    positive = centers.centers_for(sample_ids)
    if positive.shape != features.shape:
        raise InputError(
            f"feature/center dimension mismatch: {features.shape} vs {positive.shape}"
        )
    dist_all = cdist(features, centers.vectors)
    own = centers.center_class[None, :] == labels[:, None]
    masked = np.where(own, np.inf, dist_all)
    neg_idx = masked.argmin(axis=1)
    negative = centers.vectors[neg_idx]

    diff_p = features - positive
    diff_n = features - negative
    norm_p = np.linalg.norm(diff_p, axis=1)
    norm_n = np.linalg.norm(diff_n, axis=1)
    hinge = norm_p - norm_n + margin
    active = hinge > 0
    ifl = float(hinge[active].sum())
    grad_ifl = np.zeros_like(features)
    if active.any():
        grad_ifl[active] = (
            _pull_gradient(diff_p, norm_p)[active] - _pull_gradient(diff_n, norm_n)[active]
        )
    fn = cls_loss if cls_loss is not None else softmax_cross_entropy
    cls_val, grad_cls = fn(features, labels)
    breakdown = LossBreakdown(cls_val + alpha * ifl, cls_val, ifl, alpha)
    return breakdown, grad_cls + alpha * grad_ifl


def centers_to_doc(centers: CenterSet) -> dict:
    """JSON export: {class: [{tree_root_id, vector}]}."""
    out: dict[str, list[dict]] = {}
    for (c, root), vec in zip(centers.provenance, centers.vectors):
        out.setdefault(str(c), []).append(
            {"tree_root_id": root, "vector": [float(v) for v in vec]}
        )
    return out


def save_centers(centers: CenterSet, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(centers_to_doc(centers), fh, indent=2)
        fh.write("\n")
