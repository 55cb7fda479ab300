"""``emofuse`` command line: one subcommand per pipeline stage.

Every run writes a JSON manifest (resolved arguments, SHA-256 of inputs and
outputs, seed, tool version) beside its primary output, or to ``--manifest``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .consensus import (
    ConsensusConfig,
    augmentation_report,
    augmented_labels,
    label_counts,
    recompute_consensus,
)
from .core import (
    EmofuseError,
    LabelX,
    X,
    assemble_samples,
    read_annotations,
    read_feature_container,
    read_labels,
    read_predictions,
    write_csv,
    write_labels,
    write_predictions,
)
from .evaluation import confusion_csv, evaluate, render_report
from .fusion import SvmFusionModel, build_fusion_vectors, pseudo_posteriors, svm_predict, train_svm
from .losses import JeffreysParams
from .synth import SyntheticSpec, generate, write_corpus
from .trainer import PRESETS, LinearHeadModel, NewBobConfig, TrainConfig, predict, train

log = logging.getLogger("emofuse")

SEED_ENV = "EMOFUSE_SEED"


class UsageError(Exception):
    pass


def _default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None:
        return 42
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={value!r} is not an integer") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(args, inputs: Sequence, outputs: Sequence, primary, seed=None, resolved=None) -> Path:
    path = Path(args.manifest) if args.manifest else Path(f"{primary}.manifest.json")
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    doc = {
        "tool": "emofuse",
        "version": __version__,
        "subcommand": args.command,
        "config": config,
        "resolved_config": resolved,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _load(path, reader):
    try:
        return reader(path)
    except FileNotFoundError:
        raise EmofuseError(f"{path}: file not found") from None
    except (EmofuseError, ValueError, KeyError) as exc:
        raise EmofuseError(f"{path}: {exc}") from None


def _stream_paths(primary, extra) -> list[str]:
    return [primary, *(extra or [])]


def _load_samples(paths, labels=None):
    streams = [_load(p, read_feature_container) for p in paths]
    try:
        return assemble_samples(streams, labels)
    except ValueError as exc:
        raise EmofuseError(f"{', '.join(map(str, paths))}: {exc}") from None


def _labeled(samples, labels, what):
    """Keep samples that have an entry in the label file."""
    kept = [s for s in samples if s.sample_id in labels]
    if len(kept) < len(samples):
        log.info("%s: %d of %d samples have no label and are skipped", what, len(samples) - len(kept), len(samples))
    for s in kept:
        if s.label is X:
            raise LabelX(f"{what}: sample {s.sample_id} is labeled X")
    return kept


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_consensus(args) -> int:
    annotations = _load(args.annotations, read_annotations)
    original = _load(args.original, read_labels)
    config = ConsensusConfig(evaluator_threshold=args.threshold, neutral_drop_tie=not args.no_neutral_drop)
    results = recompute_consensus(annotations, original, config)

    out = Path(args.out)
    write_csv(out, ["sample_id", "label", "source"], ((r.sample_id, r.label.value, r.source) for r in results))
    outputs = [out]

    augmented = augmented_labels(original, results)
    if args.augmented:
        write_labels(augmented, args.augmented)
        outputs.append(Path(args.augmented))
    if args.report:
        before = label_counts(v for v in original.values() if v is not X)
        after = label_counts(augmented.values())
        Path(args.report).write_text(augmentation_report(before, after), encoding="utf-8")
        outputs.append(Path(args.report))
    n_new = sum(1 for r in results if r.source == "recomputed" and original[r.sample_id] is X and r.label is not X)
    log.info("%d samples, %d newly labeled", len(results), n_new)
    write_manifest(args, [args.annotations, args.original], outputs, out)
    return 0


def _train_config(args) -> TrainConfig:
    base = PRESETS[args.preset] if args.preset else TrainConfig()
    loss = args.loss or base.loss
    if loss == "jeffreys" and (args.alpha is None or args.beta is None):
        raise UsageError("--loss jeffreys requires explicit --alpha and --beta")
    jeffreys = JeffreysParams(
        alpha=args.alpha if args.alpha is not None else base.jeffreys.alpha,
        beta=args.beta if args.beta is not None else base.jeffreys.beta,
    )
    nb = base.newbob
    newbob = NewBobConfig(
        improvement_threshold=args.newbob_threshold if args.newbob_threshold is not None else nb.improvement_threshold,
        anneal_factor=args.anneal_factor if args.anneal_factor is not None else nb.anneal_factor,
        patience=args.patience if args.patience is not None else nb.patience,
        enabled=nb.enabled if args.newbob is None else args.newbob,
    )
    return TrainConfig(
        loss=loss,
        jeffreys=jeffreys,
        pooling=args.pooling or base.pooling,
        batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
        max_epochs=args.epochs if args.epochs is not None else base.max_epochs,
        learning_rate_head=args.lr_head if args.lr_head is not None else base.learning_rate_head,
        learning_rate_pooling=args.lr_pooling if args.lr_pooling is not None else base.learning_rate_pooling,
        newbob=newbob,
        seed=args.seed if args.seed is not None else _default_seed(),
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    train_paths = _stream_paths(args.features, args.features2)
    dev_paths = _stream_paths(args.dev_features, args.dev_features2)
    if len(train_paths) != len(dev_paths):
        raise UsageError(f"{len(train_paths)} training streams but {len(dev_paths)} dev streams")
    labels = _load(args.labels, read_labels)
    dev_labels = _load(args.dev_labels, read_labels)
    train_set = _labeled(_load_samples(train_paths, labels), labels, str(args.labels))
    dev_set = _labeled(_load_samples(dev_paths, dev_labels), dev_labels, str(args.dev_labels))

    model, history = train(train_set, dev_set, config)
    model.save(args.out)
    outputs = [Path(args.out)]
    if args.history:
        Path(args.history).write_text(json.dumps(history, indent=1) + "\n", encoding="utf-8")
        outputs.append(Path(args.history))
    write_manifest(
        args, [*train_paths, args.labels, *dev_paths, args.dev_labels], outputs, args.out, seed=config.seed,
        resolved=config.to_dict(),
    )
    return 0


def cmd_predict(args) -> int:
    model = _load(args.model, LinearHeadModel.load)
    paths = _stream_paths(args.features, args.features2)
    if len(paths) != len(model.stream_dims):
        raise EmofuseError(f"{args.model}: model expects {len(model.stream_dims)} feature streams, got {len(paths)}")
    samples = _load_samples(paths)
    write_predictions(predict(model, samples), args.out)
    write_manifest(args, [args.model, *paths], [args.out], args.out, seed=model.metadata.get("seed"))
    return 0


def _split_inputs(text: str) -> list[str]:
    paths = [p for p in text.split(",") if p]
    if not paths:
        raise UsageError("--inputs needs at least one prediction CSV")
    return paths


def _fusion_vectors(paths, names):
    preds = [_load(p, read_predictions) for p in paths]
    names = names.split(",") if names else [Path(p).stem for p in paths]
    if len(names) != len(paths):
        raise UsageError("--names must list one name per input")
    return build_fusion_vectors(preds, names)


def cmd_fuse_train(args) -> int:
    paths = _split_inputs(args.inputs)
    vectors = _fusion_vectors(paths, args.names)
    labels = _load(args.labels, read_labels)
    missing = [v.sample_id for v in vectors if v.sample_id not in labels]
    if missing:
        raise EmofuseError(f"{args.labels}: no label for {len(missing)} fusion samples (e.g. {missing[0]!r})")
    y = [labels[v.sample_id] for v in vectors]
    if any(lab is X for lab in y):
        raise LabelX(f"{args.labels}: fusion training labels must not be X")
    seed = args.seed if args.seed is not None else _default_seed()
    model = train_svm(vectors, y, C=args.c, seed=seed, iterations=args.iterations)
    model.save(args.out)
    write_manifest(args, [*paths, args.labels], [args.out], args.out, seed=seed)
    return 0


def cmd_fuse_predict(args) -> int:
    model = _load(args.model, SvmFusionModel.load)
    paths = _split_inputs(args.inputs)
    vectors = _fusion_vectors(paths, args.names or ",".join(model.source_order) or None)
    scores = np.array([s for _, _, s in svm_predict(model, vectors)])
    probs = pseudo_posteriors(scores)
    write_predictions(zip((v.sample_id for v in vectors), probs), args.out)
    write_manifest(args, [args.model, *paths], [args.out], args.out, seed=model.seed)
    return 0


def cmd_eval(args) -> int:
    preds = _load(args.pred, read_predictions)
    refs = _load(args.ref, read_labels)
    missing = [sid for sid in preds if sid not in refs]
    if missing:
        raise EmofuseError(f"{args.ref}: no reference for {len(missing)} predicted samples (e.g. {missing[0]!r})")
    unscored = [sid for sid in refs if sid not in preds]
    if unscored:
        raise EmofuseError(f"{args.pred}: no prediction for {len(unscored)} reference samples (e.g. {unscored[0]!r})")
    ids = sorted(preds)
    report, cm = evaluate([refs[i] for i in ids], [preds[i][1] for i in ids])
    text = render_report(report, cm, args.format)
    outputs = []
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        outputs.append(Path(args.out))
    else:
        sys.stdout.write(text)
    if args.confusion:
        Path(args.confusion).write_text(confusion_csv(cm), encoding="utf-8")
        outputs.append(Path(args.confusion))
    primary = args.out or args.confusion or f"{args.pred}.eval"
    write_manifest(args, [args.pred, args.ref], outputs, primary)
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        per_class_count=args.per_class,
        heldout_per_class=args.heldout_per_class,
        feature_dim=args.dim,
        second_dim=args.dim2,
        streams=args.streams,
        t_min=args.t_min,
        t_max=args.t_max,
        separation=args.separation,
        noise=args.noise,
        annotators=args.annotators,
        votes_per_sample=args.votes_per_sample,
        error_rate=args.error_rate,
        seed=args.seed if args.seed is not None else _default_seed(),
    )
    written = write_corpus(generate(spec), args.out_dir)
    write_manifest(args, [], written, Path(args.out_dir) / "synth", seed=spec.seed)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emofuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"emofuse {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
        return p

    p = add("consensus", "recompute consensus labels from annotator votes")
    p.add_argument("--annotations", required=True)
    p.add_argument("--original", required=True, help="labels CSV with the original consensus (X allowed)")
    p.add_argument("--threshold", type=float, default=0.5, help="minimum evaluator score to keep an annotator")
    p.add_argument("--no-neutral-drop", action="store_true", help="treat an N-vs-label tie as no consensus")
    p.add_argument("--out", required=True)
    p.add_argument("--augmented", help="write training labels with newly labeled samples added")
    p.add_argument("--report", help="write the before/after class-count table")
    p.set_defaults(func=cmd_consensus)

    p = add("train", "train a linear head on pooled feature streams")
    p.add_argument("--preset", choices=sorted(PRESETS), help="sub-system preset; explicit flags override")
    p.add_argument("--features", required=True)
    p.add_argument("--features2", action="append", help="additional feature stream (repeatable)")
    p.add_argument("--labels", required=True)
    p.add_argument("--dev-features", required=True)
    p.add_argument("--dev-features2", action="append")
    p.add_argument("--dev-labels", required=True)
    p.add_argument("--loss", choices=["nll", "jeffreys"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--pooling", choices=["mean", "attention"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-head", type=float)
    p.add_argument("--lr-pooling", type=float)
    p.add_argument("--newbob", dest="newbob", action="store_true", default=None)
    p.add_argument("--no-newbob", dest="newbob", action="store_false")
    p.add_argument("--newbob-threshold", type=float)
    p.add_argument("--anneal-factor", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch history JSON")
    p.set_defaults(func=cmd_train)

    p = add("predict", "write posteriors for a feature container")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--features2", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = add("fuse-train", "train the SVM fusion stage on sub-system posteriors")
    p.add_argument("--inputs", required=True, help="comma-separated prediction CSVs")
    p.add_argument("--names", help="comma-separated sub-system names (default: file stems)")
    p.add_argument("--labels", required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse_train)

    p = add("fuse-predict", "apply a fusion SVM to sub-system posteriors")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse_predict)

    p = add("eval", "score predictions against reference labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--confusion", help="write raw confusion counts CSV")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = add("synth", "generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--heldout-per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--dim2", type=int, default=8)
    p.add_argument("--streams", type=int, default=2)
    p.add_argument("--t-min", type=int, default=5)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--annotators", type=int, default=12)
    p.add_argument("--votes-per-sample", type=int, default=5)
    p.add_argument("--error-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"emofuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (EmofuseError, OSError, ValueError, KeyError) as exc:
        print(f"emofuse {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
