"""Prediction files in the force-metrics schema.

One JSONL record per sample: {"id": ..., "m": ..., "forces": [[F, alpha,
tau], ...]}. Count-only predictions omit "forces". Full force predictions
are assembled from the per-component regression models (one per force
count): magnitudes, impact angles, and tangent angles are predicted
independently and zipped in canonical (impact-angle-sorted) order. The
scoring itself is the primary toolkit's job (`photoforge eval`), so there
is exactly one metric implementation.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader

from .data import FringeDataset, Record, augmented
from .models import TaskSpec, decode_angles, predict_counts


def _batched(model: nn.Module, dataset: FringeDataset, batch_size: int = 64) -> np.ndarray:
    loader = DataLoader(dataset, batch_size=batch_size)
    outputs = []
    model.eval()
    with torch.no_grad():
        for images, _ in loader:
            outputs.append(model(images).cpu().numpy())
    return np.concatenate(outputs, axis=0)


def predict_counts_for_split(
    model: nn.Module, records: list[Record], data_root, split: str
) -> dict[str, int]:
    ds = FringeDataset(data_root, augmented(records, split), "count")
    logits = _batched(model, ds)
    counts = predict_counts(torch.from_numpy(logits))
    return {r.id: int(c) for r, c in zip(ds.records, counts)}


def predict_forces_for_split(
    regressors: dict[str, dict[int, nn.Module]],
    records: list[Record],
    data_root,
    split: str,
    counts: dict[str, int] | None = None,
) -> dict[str, list[list[float]]]:
    """Assemble (F, alpha, tau) lists from the per-count component models.

    `counts` supplies the force count per sample (e.g. classifier output);
    by default the true count is used, mirroring the protocol of testing
    the regression stages with the count known. Samples whose count has no
    trained model are skipped.
    """
    out: dict[str, list[list[float]]] = {}
    split_records = augmented(records, split)
    by_m: dict[int, list[Record]] = {}
    for r in split_records:
        m = counts.get(r.id, r.m) if counts else r.m
        by_m.setdefault(m, []).append(r)
    for m, recs in sorted(by_m.items()):
        if not all(m in regressors.get(task, {}) for task in ("magnitude", "impact", "tangent")):
            continue
        ds = FringeDataset(data_root, recs, "magnitude", m)
        mags = _batched(regressors["magnitude"][m], ds)
        impact = decode_angles(_batched(regressors["impact"][m], ds), "impact")
        tangent = decode_angles(_batched(regressors["tangent"][m], ds), "tangent")
        for i, r in enumerate(ds.records):
            forces = [
                [float(max(mags[i, k], 1e-6)), float(impact[i, k]), float(tangent[i, k])]
                for k in range(m)
            ]
            out[r.id] = forces
    return out


def write_predictions(
    path,
    counts: dict[str, int] | None = None,
    forces: dict[str, list[list[float]]] | None = None,
) -> int:
    """Write a predictions JSONL consumable by `photoforge eval`."""
    counts = counts or {}
    forces = forces or {}
    ids = sorted(set(counts) | set(forces))
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id in ids:
            record: dict = {"id": sample_id}
            if sample_id in forces:
                record["forces"] = forces[sample_id]
                record["m"] = counts.get(sample_id, len(forces[sample_id]))
            else:
                record["m"] = counts[sample_id]
            fh.write(json.dumps(record) + "\n")
            n += 1
    return n
