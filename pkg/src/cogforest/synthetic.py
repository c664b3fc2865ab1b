"""Seeded synthetic datasets: Gaussian class/attribute blobs with optional planted noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureMatrix, save_features_csv
from .errors import InputError

# Blob centers per (class, attribute). The minority blob of each class sits on
# the other class's side of the vertical axis, so a purely majority-driven
# linear boundary misclassifies it while a tilted one separates all four.
BLOB_MEANS = {
    (0, 0): (-3.0, 0.0),
    (0, 1): (1.5, 3.0),
    (1, 0): (3.0, 0.0),
    (1, 1): (-1.5, -3.0),
}


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """Training split, attribute-balanced eval split, and ground truth."""

    train: FeatureMatrix
    eval: FeatureMatrix
    attribute: dict[str, int]
    noise_ids: list[str]


def make_two_attribute_gaussians(
    n_per_class: int = 200,
    majority_frac: float = 0.9,
    spread: float = 0.6,
    noise_frac: float = 0.0,
    eval_per_cell: int = 25,
    seed: int = 0,
) -> SyntheticData:
    """2 classes x 2 attributes with a majority/minority attribute imbalance.

    The eval split holds ``eval_per_cell`` clean samples per (class,
    attribute) cell, balanced by construction. With ``noise_frac`` > 0 the
    last fraction of each class's training samples keeps its label but gets
    features scattered on a far ring, standing in for corrupted samples.
    """
    if n_per_class < 2:
        raise InputError("n_per_class must be >= 2")
    if not (0.5 <= majority_frac < 1.0):
        raise InputError("majority_frac must lie in [0.5, 1)")
    if not (0.0 <= noise_frac < 0.5):
        raise InputError("noise_frac must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    ids: list[str] = []
    feats: list[np.ndarray] = []
    labels: list[int] = []
    attribute: dict[str, int] = {}
    noise_ids: list[str] = []
    for c in (0, 1):
        n_major = round(n_per_class * majority_frac)
        n_noise = round(n_per_class * noise_frac)
        attrs = [0] * n_major + [1] * (n_per_class - n_major)
        # corrupt positions spread over the whole class, so both attribute
        # cells keep clean samples
        corrupt = set(rng.choice(n_per_class, size=n_noise, replace=False).tolist())
        for i, a in enumerate(attrs):
            sid = f"c{c}_{i:04d}"
            ids.append(sid)
            labels.append(c)
            attribute[sid] = a
            if i in corrupt:
                radius = rng.uniform(9.0, 13.0)
                angle = rng.uniform(0.0, 2.0 * np.pi)
                feats.append(np.array([radius * np.cos(angle), radius * np.sin(angle)]))
                noise_ids.append(sid)
            else:
                feats.append(np.asarray(BLOB_MEANS[(c, a)]) + rng.normal(0.0, spread, 2))
    train = FeatureMatrix(ids, np.array(feats), np.array(labels))

    eval_ids: list[str] = []
    eval_feats: list[np.ndarray] = []
    eval_labels: list[int] = []
    for c in (0, 1):
        for a in (0, 1):
            for i in range(eval_per_cell):
                eval_ids.append(f"e{c}{a}_{i:04d}")
                eval_labels.append(c)
                eval_feats.append(np.asarray(BLOB_MEANS[(c, a)]) + rng.normal(0.0, spread, 2))
    eval_fm = FeatureMatrix(eval_ids, np.array(eval_feats), np.array(eval_labels))
    return SyntheticData(train, eval_fm, attribute, noise_ids)


def save_synthetic(data: SyntheticData, out_dir: str | Path) -> dict[str, Path]:
    """Write train.csv, eval.csv, and truth.csv (ground truth, evaluation only)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out / "train.csv",
        "eval": out / "eval.csv",
        "truth": out / "truth.csv",
    }
    save_features_csv(data.train, paths["train"])
    save_features_csv(data.eval, paths["eval"])
    noise = set(data.noise_ids)
    with open(paths["truth"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "attribute", "is_noise"])
        assert data.train.labels is not None
        for i, sid in enumerate(data.train.ids):
            w.writerow(
                [sid, int(data.train.labels[i]), data.attribute[sid], int(sid in noise)]
            )
    return paths
