"""Command-line surface: build forests, emit weights, report noise, run training.

Exit codes: 0 success, 2 usage or input error, 1 internal error. All numeric
output on stdout and in CSV files carries 17 significant digits. Every
command is deterministic given --seed; COGFOREST_THREADS caps internal
parallelism.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import (
    BalanceFactors,
    FeatureMatrix,
    ForestParams,
    NoiseParams,
    format_float,
    load_features,
    pairwise_distances,
    save_features_csv,
)
from .errors import InputError
from .forest import (
    build_forests,
    compute_density,
    forest_stats,
    load_forest,
    save_forest,
)
from .noise import select_noise, write_noise_csv
from .sampling import attribute_weight_detail, build_environment, write_weights_csv, SampleWeights
from .training import (
    TrainConfig,
    make_toy_classifier,
    make_toy_extractor,
    run_training,
    save_model,
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cogforest", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build per-class forests from features")
    b.add_argument("features", help="feature file (.csv or CGF1 binary)")
    b.add_argument("--d-rd", type=float, required=True, help="density radius")
    b.add_argument("--d-rn", type=float, required=True, help="coarse-node radius")
    b.add_argument(
        "--base-multiples",
        action="store_true",
        help="treat radii as multiples of the base distance",
    )
    b.add_argument("--metric", default="euclidean", choices=["euclidean", "cosine", "manhattan"])
    b.add_argument("--leader-radius", default="density", choices=["density", "node"])
    b.add_argument("--out-dir", default=".", help="directory for forest_class<k>.json files")

    w = sub.add_parser("weights", help="sampling weights from forest files")
    w.add_argument("forests", nargs="+", help="forest JSON files")
    w.add_argument("--q-attr", type=float, required=True)
    w.add_argument(
        "--q-cls",
        type=float,
        default=None,
        help="emit global environment weights across the given class forests",
    )
    w.add_argument("--exclude", default=None, help="file of sample ids to exclude")
    w.add_argument(
        "--raw",
        action="store_true",
        help="emit pre-normalization weights (single forest only)",
    )
    w.add_argument("-o", "--out", default=None, help="output CSV (default stdout)")

    n = sub.add_parser("noise", help="noise report from forests and features")
    n.add_argument("forests", nargs="+", help="forest JSON files")
    n.add_argument("--features", required=True, help="feature file for density computation")
    n.add_argument("--n-min", type=int, default=3)
    n.add_argument("--n-d", type=int, default=2)
    n.add_argument("--n-l", type=int, default=1)
    n.add_argument("--p-d", type=float, default=0.1)
    n.add_argument("-o", "--out", default=None, help="output CSV (default stdout)")

    t = sub.add_parser("train", help="run the toy training loop")
    t.add_argument("features", help="training feature file")
    t.add_argument("--eval", default=None, help="held-out feature file for accuracy")
    t.add_argument("--config", default=None, help="flat key=value config file")
    t.add_argument("--plus", action="store_true", help="enable iterative noise filtering")
    t.add_argument("--warmup", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--refresh", type=int, default=None)
    t.add_argument("--envs", default=None, help="environment pairs, e.g. '1,1;0,0'")
    t.add_argument("--alpha", type=float, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--loss", choices=["mcl", "mctl"], default=None)
    t.add_argument("--feature-dim", type=int, default=None)
    t.add_argument("--d-rd", type=float, default=None)
    t.add_argument("--d-rn", type=float, default=None)
    t.add_argument("--base-multiples", dest="base_multiples", action="store_true", default=None)
    t.add_argument("--absolute-radii", dest="base_multiples", action="store_false")
    t.add_argument("--metric", default=None, choices=["euclidean", "cosine", "manhattan"])
    t.add_argument("--n-min", type=int, default=None)
    t.add_argument("--n-d", type=int, default=None)
    t.add_argument("--n-l", type=int, default=None)
    t.add_argument("--p-d", type=float, default=None)
    t.add_argument("--model-out", default="model.json")
    t.add_argument("--history-out", default="history.jsonl")
    t.add_argument("--features-out", default=None, help="write final extracted features as CSV")
    return p


def _cmd_build(args: argparse.Namespace) -> int:
    x = load_features(args.features)
    params = ForestParams(args.d_rd, args.d_rn, multiples=args.base_multiples)
    build = build_forests(x, params, args.metric, args.leader_radius)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.base_multiples:
        base = build.base_distance if build.base_distance is not None else 0.0
        print(f"base_distance={format_float(base)}")
    print(
        f"resolved d_rd={format_float(build.params.d_rd)} "
        f"d_rn={format_float(build.params.d_rn)}"
    )
    for c in sorted(build.forests):
        f = build.forests[c]
        stats = forest_stats(f)
        path = out_dir / f"forest_class{c}.json"
        save_forest(f, path)
        print(
            f"class {c}: trees={stats['trees']} nodes={stats['nodes']} "
            f"samples={stats['samples']} max_depth={stats['max_depth']} "
            f"paths={stats['paths']} -> {path}"
        )
    return 0


def _load_excluded(path: str | None) -> frozenset[str]:
    if path is None:
        return frozenset()
    ids: set[str] = set()
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            first = line.split(",")[0].strip()
            if first in ("id", ""):
                continue
            ids.add(first)
    return frozenset(ids)


def _emit_csv(sw: SampleWeights, out: str | None) -> None:
    if out is None:
        write_weights_csv(sw, sys.stdout)
    else:
        with open(out, "w", newline="") as fh:
            write_weights_csv(sw, fh)


def _cmd_weights(args: argparse.Namespace) -> int:
    forests = {}
    for path in args.forests:
        f = load_forest(path)
        if f.class_label in forests:
            raise InputError(f"duplicate forest for class {f.class_label}")
        forests[f.class_label] = f
    excluded = _load_excluded(args.exclude)
    if args.raw:
        if len(forests) != 1 or args.q_cls is not None:
            raise InputError("--raw applies to a single forest without --q-cls")
        (f,) = forests.values()
        detail = attribute_weight_detail(f, args.q_attr, excluded)
        _emit_csv(SampleWeights(list(f.ids), detail.raw, scope="class"), args.out)
        return 0
    if args.q_cls is None:
        if len(forests) != 1:
            raise InputError("multiple forests require --q-cls to combine classes")
        (f,) = forests.values()
        detail = attribute_weight_detail(f, args.q_attr, excluded)
        _emit_csv(SampleWeights(list(f.ids), detail.weights, scope="class"), args.out)
        return 0
    env = build_environment(
        None, forests, BalanceFactors(args.q_cls, args.q_attr), excluded
    )
    _emit_csv(env.weights, args.out)
    return 0


def _cmd_noise(args: argparse.Namespace) -> int:
    x = load_features(args.features)
    params = NoiseParams(args.n_min, args.n_d, args.n_l, args.p_d)
    reports = []
    for path in sorted(args.forests):
        f = load_forest(path)
        rows = [x.ids.index(s) if s in x.ids else -1 for s in f.ids]
        if -1 in rows:
            missing = f.ids[rows.index(-1)]
            raise InputError(f"forest/feature id mismatch: {missing!r} not in features")
        sub = x.subset(rows)
        d = pairwise_distances(sub, f.metric)
        dens = compute_density(d, f.params.d_rd)
        reports.append(select_noise(f, dens, params))
    reports.sort(key=lambda r: r.class_label)
    if args.out is None:
        write_noise_csv(reports, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            write_noise_csv(reports, fh)
    return 0


def _parse_envs(text: str) -> tuple[BalanceFactors, ...]:
    pairs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise InputError(f"bad environment spec {chunk!r}; expected 'q_cls,q_attr'")
        pairs.append(BalanceFactors(float(parts[0]), float(parts[1])))
    if not pairs:
        raise InputError("no environment specs given")
    return tuple(pairs)


_CONFIG_KEYS = {
    "warmup", "epochs", "refresh", "envs", "alpha", "lr", "batch", "seed",
    "loss", "feature-dim", "d-rd", "d-rn", "base-multiples", "metric",
    "n-min", "n-d", "n-l", "p-d", "plus",
}


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            key = key.strip().replace("_", "-")
            if key not in _CONFIG_KEYS:
                raise InputError(f"{path}: line {lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InputError(f"bad boolean value {text!r}")


def _train_config(args: argparse.Namespace) -> tuple[TrainConfig, bool]:
    file_cfg = _load_config(args.config) if args.config else {}

    def pick(flag_value, key: str, parse, default):
        if flag_value is not None:
            return flag_value
        if key in file_cfg:
            return parse(file_cfg[key])
        return default

    defaults = TrainConfig()
    plus = bool(args.plus) or ("plus" in file_cfg and _parse_bool(file_cfg["plus"]))
    envs = pick(
        _parse_envs(args.envs) if args.envs is not None else None,
        "envs",
        _parse_envs,
        defaults.envs,
    )
    noise = None
    if plus:
        base = NoiseParams()
        noise = NoiseParams(
            pick(args.n_min, "n-min", int, base.n_min),
            pick(args.n_d, "n-d", int, base.n_d),
            pick(args.n_l, "n-l", int, base.n_l),
            pick(args.p_d, "p-d", float, base.p_d),
        )
    forest = ForestParams(
        pick(args.d_rd, "d-rd", float, defaults.forest.d_rd),
        pick(args.d_rn, "d-rn", float, defaults.forest.d_rn),
        multiples=pick(args.base_multiples, "base-multiples", _parse_bool, True),
    )
    cfg = TrainConfig(
        warmup_epochs=pick(args.warmup, "warmup", int, defaults.warmup_epochs),
        epochs=pick(args.epochs, "epochs", int, defaults.epochs),
        refresh_period=pick(args.refresh, "refresh", int, defaults.refresh_period),
        envs=envs,
        alpha=pick(args.alpha, "alpha", float, defaults.alpha),
        lr=pick(args.lr, "lr", float, defaults.lr),
        batch_size=pick(args.batch, "batch", int, defaults.batch_size),
        seed=pick(args.seed, "seed", int, defaults.seed),
        loss_kind=pick(args.loss, "loss", str, None),
        noise=noise,
        forest=forest,
        metric=pick(args.metric, "metric", str, defaults.metric),
        feature_dim=pick(args.feature_dim, "feature-dim", int, None),
    )
    return cfg, plus


def _cmd_train(args: argparse.Namespace) -> int:
    data = load_features(args.features)
    if data.labels is None:
        raise InputError("training features must carry labels")
    eval_data = load_features(args.eval) if args.eval else None
    cfg, plus = _train_config(args)
    feature_dim = cfg.feature_dim or data.n_features
    extractor = make_toy_extractor(data.n_features, feature_dim, cfg.seed)
    classifier = make_toy_classifier(feature_dim, len(data.class_labels()), cfg.seed + 1)
    extractor, classifier, history = run_training(
        data, extractor, classifier, cfg, eval_data, noise_filter=plus
    )
    save_model(extractor, classifier, cfg, args.model_out)
    history.save_jsonl(args.history_out)
    if args.features_out:
        final = FeatureMatrix(data.ids, extractor.forward(data.features), data.labels)
        save_features_csv(final, args.features_out)
    last = history.records[-1]
    print(f"epochs={len(history.records)} model={args.model_out} history={args.history_out}")
    print(f"final_summed_loss={format_float(history.summed_loss(last))}")
    if last["balanced_accuracy"] is not None:
        print(f"final_balanced_accuracy={format_float(last['balanced_accuracy'])}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "build":
            return _cmd_build(args)
        if args.command == "weights":
            return _cmd_weights(args)
        if args.command == "noise":
            return _cmd_noise(args)
        if args.command == "train":
            return _cmd_train(args)
        raise InputError(f"unknown command {args.command!r}")
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
