"""Harness entry point: train | predict | transfer.

Reads photoforge dataset trees (manifest + PNGs); writes checkpoints,
training-log CSVs, and prediction files scored by `photoforge eval`.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import read_manifest
from .models import TaskSpec
from .predict import predict_counts_for_split, predict_forces_for_split, write_predictions
from .training import TrainConfig, load_model, train
from .transfer import DEFAULT_TIERS, Tier, transfer_count_model


def _records(args):
    root = Path(args.data_root)
    return read_manifest(root / "manifest.jsonl"), root


def _cmd_train(args) -> int:
    records, root = _records(args)
    spec = TaskSpec(args.task, args.m)
    config = TrainConfig.desk(
        main_epochs=args.epochs,
        patience=min(args.patience, max(args.epochs - 1, 1)),
        batch_size=args.batch_size,
        seed=args.seed,
    )
    report = train(spec, records, root, args.out, config,
                   train_split=args.train_split, val_split=args.val_split)
    print(json.dumps({
        "task": args.task, "m": args.m, "best_epoch": report.best_epoch,
        "best_val": report.best_val, "epochs_run": report.epochs_run,
        "checkpoint": report.checkpoint, "log": report.log,
    }, indent=2))
    return 0


def _cmd_predict(args) -> int:
    records, root = _records(args)
    counts = None
    forces = None
    if args.count_model:
        model, spec = load_model(args.count_model)
        counts = predict_counts_for_split(model, records, root, args.split)
    if args.magnitude_models or args.impact_models or args.tangent_models:
        regressors: dict[str, dict] = {"magnitude": {}, "impact": {}, "tangent": {}}
        for task, paths in (
            ("magnitude", args.magnitude_models),
            ("impact", args.impact_models),
            ("tangent", args.tangent_models),
        ):
            for path in paths or []:
                model, spec = load_model(path)
                if spec.task != task:
                    print(f"error: {path} is a {spec.task} model, expected {task}", file=sys.stderr)
                    return 2
                regressors[task][spec.m] = model
        forces = predict_forces_for_split(regressors, records, root, args.split, counts)
    if counts is None and forces is None:
        print("error: no models given", file=sys.stderr)
        return 2
    n = write_predictions(args.out, counts, forces)
    print(f"wrote {n} predictions to {args.out}")
    return 0


def _cmd_transfer(args) -> int:
    records, root = _records(args)
    model, spec = load_model(args.model)
    if spec.task != "count":
        print("error: transfer expects the count-classification model", file=sys.stderr)
        return 2
    tiers = tuple(
        Tier(name, f"train{name}", f"val{name}") for name in args.tiers.split(",")
    ) if args.tiers else DEFAULT_TIERS
    config = TrainConfig.desk(
        main_epochs=args.epochs,
        patience=min(args.patience, max(args.epochs - 1, 1)),
        main_lr=args.lr,
        seed=args.seed,
    )
    results = transfer_count_model(model, records, root, args.out, tiers, args.test_split, config)
    summary = {name: {"accuracy": r["accuracy"], "n_test": r["n_test"]} for name, r in results.items()}
    print(json.dumps(summary, indent=2))
    out = Path(args.out) / "transfer-summary.json"
    out.write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photoforge-harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one task model on a dataset")
    p.add_argument("--data-root", required=True, help="dataset directory with manifest.jsonl")
    p.add_argument("--task", required=True, choices=("count", "magnitude", "impact", "tangent"))
    p.add_argument("--m", type=int, help="force count for regression tasks")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--train-split", default="train")
    p.add_argument("--val-split", default="val")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="write a predictions file for a split")
    p.add_argument("--data-root", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--count-model")
    p.add_argument("--magnitude-models", nargs="*")
    p.add_argument("--impact-models", nargs="*")
    p.add_argument("--tangent-models", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("transfer", help="fine-tune the count model over small-particle tiers")
    p.add_argument("--data-root", required=True)
    p.add_argument("--model", required=True, help="count-model checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--tiers", help="comma-separated tier names (default 320,800,3200)")
    p.add_argument("--test-split", default="test")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_transfer)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
