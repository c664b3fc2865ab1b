"""Toy training loops: warm-up, forest refresh, environment sampling, center losses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import BalanceFactors, FeatureMatrix, ForestParams, NoiseParams
from .errors import InputError
from .forest import ForestBuild, build_forests
from .losses import (
    CenterSet,
    extract_centers,
    multi_center_loss,
    multi_center_triplet_loss,
    softmax_cross_entropy,
)
from .noise import flagged_ids, select_noise_all
from .sampling import Environment, build_environment, draw_batch


class LinearExtractor:
    """Single linear map with bias and analytic gradients."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InputError("weight must be (out, in) with a matching bias")

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias

    def backward(
        self, x: np.ndarray, grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gradients w.r.t. weight, bias, and input for an upstream gradient."""
        return grad_out.T @ x, grad_out.sum(axis=0), grad_out @ self.weight

    def step(self, grad_w: np.ndarray, grad_b: np.ndarray, lr: float) -> None:
        self.weight -= lr * grad_w
        self.bias -= lr * grad_b

    def to_doc(self) -> dict:
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_doc(cls, doc: dict) -> "LinearExtractor":
        return cls(np.asarray(doc["weight"]), np.asarray(doc["bias"]))


def make_toy_extractor(input_dim: int, feature_dim: int, seed: int) -> LinearExtractor:
    """Seeded Gaussian initialization scaled by 1/sqrt(input_dim)."""
    if input_dim < 1 or feature_dim < 1:
        raise InputError("dims must be >= 1")
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(feature_dim, input_dim))
    return LinearExtractor(weight, np.zeros(feature_dim))


class SoftmaxClassifier:
    """Linear logits plus summed softmax cross-entropy."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight.T + self.bias

    def loss_and_grads(
        self, features: np.ndarray, labels: np.ndarray
    ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
        z = self.logits(features)
        loss, grad_z = softmax_cross_entropy(z, labels)
        return loss, grad_z @ self.weight, grad_z.T @ features, grad_z.sum(axis=0)

    def step(self, grad_w: np.ndarray, grad_b: np.ndarray, lr: float) -> None:
        self.weight -= lr * grad_w
        self.bias -= lr * grad_b

    def to_doc(self) -> dict:
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_doc(cls, doc: dict) -> "SoftmaxClassifier":
        return cls(np.asarray(doc["weight"]), np.asarray(doc["bias"]))


def make_toy_classifier(feature_dim: int, n_classes: int, seed: int) -> SoftmaxClassifier:
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 1.0 / math.sqrt(feature_dim), size=(n_classes, feature_dim))
    return SoftmaxClassifier(weight, np.zeros(n_classes))


class _ClassifierLoss:
    """Adapter exposing the classifier as a pluggable (value, feature-grad) loss.

    Stashes the parameter gradients of the most recent call so the training
    step can update the classifier without a second forward pass.
    """

    def __init__(self, classifier: SoftmaxClassifier):
        self.classifier = classifier
        self.grad_w: np.ndarray | None = None
        self.grad_b: np.ndarray | None = None

    def __call__(self, features: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad_f, self.grad_w, self.grad_b = self.classifier.loss_and_grads(features, labels)
        return loss, grad_f


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 2
    epochs: int = 20
    refresh_period: int = 1
    envs: tuple[BalanceFactors, ...] = (BalanceFactors(1.0, 1.0), BalanceFactors(0.0, 0.0))
    alpha: float = 0.5
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    loss_kind: str | None = None
    noise: NoiseParams | None = None
    forest: ForestParams = ForestParams(4.0, 1.0, multiples=True)
    metric: str = "euclidean"
    feature_dim: int | None = None

    def __post_init__(self) -> None:
        if self.warmup_epochs < 0:
            raise InputError("warmup_epochs must be >= 0")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.refresh_period < 1:
            raise InputError("refresh_period must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if not self.lr > 0:
            raise InputError("lr must be positive")
        if self.alpha < 0:
            raise InputError("alpha must be >= 0")
        if not self.envs:
            raise InputError("at least one environment spec is required")
        if self.loss_kind not in (None, "mcl", "mctl"):
            raise InputError(f"loss_kind must be 'mcl' or 'mctl', got {self.loss_kind!r}")


@dataclass
class TrainHistory:
    """One record per epoch; serializes as JSON lines."""

    records: list[dict] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [json.dumps(rec) for rec in self.records]

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def main_records(self) -> list[dict]:
        return [r for r in self.records if r["phase"] == "main"]

    def summed_loss(self, record: dict) -> float:
        return sum(e["total"] for e in record["env_losses"])


def balanced_accuracy(
    extractor: LinearExtractor, classifier: SoftmaxClassifier, data: FeatureMatrix
) -> float:
    """Mean per-class accuracy of argmax predictions."""
    if data.labels is None:
        raise InputError("evaluation data must be labeled")
    pred = classifier.logits(extractor.forward(data.features)).argmax(axis=1)
    accs = [float((pred[data.rows_of(c)] == c).mean()) for c in data.class_labels()]
    return float(np.mean(accs))


def _build_state(
    data: FeatureMatrix,
    extractor: LinearExtractor,
    cfg: TrainConfig,
) -> tuple[FeatureMatrix, ForestBuild, CenterSet]:
    feats = extractor.forward(data.features)
    fm = FeatureMatrix(data.ids, feats, data.labels)
    build = build_forests(fm, cfg.forest, cfg.metric)
    centers = extract_centers(build.forests, fm)
    return fm, build, centers


def _environments(
    fm: FeatureMatrix, build: ForestBuild, cfg: TrainConfig, excluded: frozenset[str]
) -> list[Environment]:
    return [
        build_environment(fm, build.forests, factors, excluded, env_id=f"e{k}")
        for k, factors in enumerate(cfg.envs)
    ]


def run_training(
    data: FeatureMatrix,
    extractor: LinearExtractor,
    classifier: SoftmaxClassifier,
    cfg: TrainConfig,
    eval_data: FeatureMatrix | None = None,
    noise_filter: bool = False,
) -> tuple[LinearExtractor, SoftmaxClassifier, TrainHistory]:
    """Warm-up on plain classification, then environment-based epochs.

    Each main epoch draws batches alternately from every environment and
    steps on cls + alpha * pull losses; forests, centers, noise flags, and
    environments refresh every ``refresh_period`` epochs. Deterministic for
    a fixed seed.
    """
    if data.labels is None or len(data.class_labels()) < 2:
        raise InputError("training data must carry at least 2 classes")
    if noise_filter and cfg.noise is None:
        raise InputError("noise filtering requires cfg.noise")
    loss_kind = cfg.loss_kind or ("mctl" if noise_filter else "mcl")
    rng = np.random.default_rng(cfg.seed)
    ids = data.ids
    X = data.features
    y = data.labels
    n = data.n_samples
    steps = math.ceil(n / cfg.batch_size)
    row_of = {s: i for i, s in enumerate(ids)}
    history = TrainHistory()

    def evaluate() -> float | None:
        if eval_data is None:
            return None
        return balanced_accuracy(extractor, classifier, eval_data)

    for epoch in range(cfg.warmup_epochs):
        total = 0.0
        for _ in range(steps):
            batch = rng.integers(0, n, size=cfg.batch_size)
            feats = extractor.forward(X[batch])
            loss, grad_f, grad_w, grad_b = classifier.loss_and_grads(feats, y[batch])
            gwe, gbe, _ = extractor.backward(X[batch], grad_f)
            classifier.step(grad_w, grad_b, cfg.lr)
            extractor.step(gwe, gbe, cfg.lr)
            total += loss
        history.records.append(
            {
                "epoch": epoch,
                "phase": "warmup",
                "env_losses": [
                    {"env": "warmup", "total": total, "cls": total, "ifl": 0.0}
                ],
                "tree_counts": None,
                "noise_flagged": 0,
                "noise_ids": [],
                "balanced_accuracy": evaluate(),
                "notes": [],
            }
        )

    excluded: frozenset[str] = frozenset()
    fm, build, centers = _build_state(data, extractor, cfg)
    envs = _environments(fm, build, cfg, excluded)
    pending_notes = {"degenerate-features"} if build.degenerate else set()

    for epoch_idx in range(cfg.epochs):
        epoch = cfg.warmup_epochs + epoch_idx
        sums = {env.env_id: {"total": 0.0, "cls": 0.0, "ifl": 0.0} for env in envs}
        for _ in range(steps):
            for env in envs:
                batch_ids = draw_batch(env, cfg.batch_size, rng)
                rows = np.array([row_of[s] for s in batch_ids])
                xb = X[rows]
                yb = y[rows]
                feats = extractor.forward(xb)
                adapter = _ClassifierLoss(classifier)
                if loss_kind == "mcl":
                    breakdown, grad_f = multi_center_loss(
                        feats, yb, centers, batch_ids, cls_loss=adapter, alpha=cfg.alpha
                    )
                else:
                    breakdown, grad_f = multi_center_triplet_loss(
                        feats, yb, centers, batch_ids, cls_loss=adapter, alpha=cfg.alpha
                    )
                gwe, gbe, _ = extractor.backward(xb, grad_f)
                assert adapter.grad_w is not None and adapter.grad_b is not None
                classifier.step(adapter.grad_w, adapter.grad_b, cfg.lr)
                extractor.step(gwe, gbe, cfg.lr)
                acc = sums[env.env_id]
                acc["total"] += breakdown.total
                acc["cls"] += breakdown.cls_term
                acc["ifl"] += breakdown.ifl_term
        if (epoch_idx + 1) % cfg.refresh_period == 0:
            fm, build, centers = _build_state(data, extractor, cfg)
            if build.degenerate:
                pending_notes.add("degenerate-features")
            if noise_filter:
                assert cfg.noise is not None
                reports = select_noise_all(build.forests, build.densities, cfg.noise)
                excluded = flagged_ids(reports.values())
            envs = _environments(fm, build, cfg, excluded)
        history.records.append(
            {
                "epoch": epoch,
                "phase": "main",
                "env_losses": [{"env": k, **v} for k, v in sums.items()],
                "tree_counts": {
                    str(c): build.forests[c].n_trees for c in sorted(build.forests)
                },
                "noise_flagged": len(excluded),
                "noise_ids": sorted(excluded),
                "balanced_accuracy": evaluate(),
                "notes": sorted(pending_notes),
            }
        )
        pending_notes = set()
    return extractor, classifier, history


def run_training_with_noise_filter(
    data: FeatureMatrix,
    extractor: LinearExtractor,
    classifier: SoftmaxClassifier,
    cfg: TrainConfig,
    eval_data: FeatureMatrix | None = None,
) -> tuple[LinearExtractor, SoftmaxClassifier, TrainHistory]:
    """Training loop that re-selects noise after every forest refresh and
    excludes it from the rebuilt environments; defaults to the triplet loss."""
    return run_training(data, extractor, classifier, cfg, eval_data, noise_filter=True)


def model_to_doc(
    extractor: LinearExtractor, classifier: SoftmaxClassifier, cfg: TrainConfig
) -> dict:
    return {
        "extractor": extractor.to_doc(),
        "classifier": classifier.to_doc(),
        "config": {
            "warmup_epochs": cfg.warmup_epochs,
            "epochs": cfg.epochs,
            "refresh_period": cfg.refresh_period,
            "envs": [[f.q_cls, f.q_attr] for f in cfg.envs],
            "alpha": cfg.alpha,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "loss_kind": cfg.loss_kind,
            "noise": None
            if cfg.noise is None
            else {
                "n_min": cfg.noise.n_min,
                "n_d": cfg.noise.n_d,
                "n_l": cfg.noise.n_l,
                "p_d": cfg.noise.p_d,
            },
            "forest": {
                "d_rd": cfg.forest.d_rd,
                "d_rn": cfg.forest.d_rn,
                "multiples": cfg.forest.multiples,
            },
            "metric": cfg.metric,
            "feature_dim": cfg.feature_dim,
        },
    }


def save_model(
    extractor: LinearExtractor,
    classifier: SoftmaxClassifier,
    cfg: TrainConfig,
    path: str | Path,
) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_doc(extractor, classifier, cfg), fh, indent=2)
        fh.write("\n")
