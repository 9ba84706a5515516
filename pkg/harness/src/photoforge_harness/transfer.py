"""Size-transfer experiment: fine-tune large-particle models on small-particle tiers.

The small-particle dataset carries a ladder of disjoint train/val tiers
plus one common test split. Each tier fine-tunes a copy of the
large-particle model with every weight free at the low fine-tune rate, no
warm-up and no head reprogramming (the tasks are near-identical, only the
fringe scale changes). Tier disjointness is asserted before any training
so an overlapping ladder aborts immediately.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import torch
from torch import nn

from .data import Record, augmented
from .models import TaskSpec
from .predict import predict_counts_for_split
from .training import TrainConfig, TrainReport, train


class TierOverlapError(ValueError):
    pass


@dataclass(frozen=True)
class Tier:
    name: str
    train_split: str
    val_split: str


DEFAULT_TIERS = (
    Tier("320", "train320", "val320"),
    Tier("800", "train800", "val800"),
    Tier("3200", "train3200", "val3200"),
)


def assert_tiers_disjoint(records: list[Record], tiers: tuple[Tier, ...]) -> None:
    """Train/val base samples of different tiers must not overlap."""
    pools: dict[str, set[str]] = {}
    for tier in tiers:
        pool = {
            r.base_id
            for r in records
            if r.split in (tier.train_split, tier.val_split)
        }
        for other, other_pool in pools.items():
            common = pool & other_pool
            if common:
                raise TierOverlapError(
                    f"tiers {other} and {tier.name} share {len(common)} base samples"
                )
        pools[tier.name] = pool


def fine_tune_tier(
    model: nn.Module,
    spec: TaskSpec,
    records: list[Record],
    data_root,
    out_dir,
    tier: Tier,
    config: TrainConfig | None = None,
) -> tuple[nn.Module, TrainReport]:
    """Fine-tune a copy of the model on one tier (all weights, low rate)."""
    config = config or TrainConfig()
    tuned = copy.deepcopy(model)
    report = train(
        spec,
        records,
        data_root,
        out_dir,
        replace(config, warmup_epochs=0),
        train_split=tier.train_split,
        val_split=tier.val_split,
        model=tuned,
        warmup=False,
    )
    return tuned, report


def transfer_count_model(
    model: nn.Module,
    records: list[Record],
    data_root,
    out_dir,
    tiers: tuple[Tier, ...] = DEFAULT_TIERS,
    test_split: str = "test",
    config: TrainConfig | None = None,
) -> dict[str, dict]:
    """Fine-tune the count classifier across the tier ladder.

    Returns per-tier test accuracy on the common test split plus training
    reports; tier overlap aborts before any work.
    """
    assert_tiers_disjoint(records, tiers)
    spec = TaskSpec("count")
    results: dict[str, dict] = {}
    truth = {r.id: r.m for r in augmented(records, test_split)}
    for tier in tiers:
        tuned, report = fine_tune_tier(model, spec, records, data_root, out_dir, tier, config)
        preds = predict_counts_for_split(tuned, records, data_root, test_split)
        hits = sum(1 for k, v in preds.items() if truth.get(k) == v)
        results[tier.name] = {
            "accuracy": hits / max(len(preds), 1),
            "n_test": len(preds),
            "report": report,
            "model": tuned,
        }
    return results
