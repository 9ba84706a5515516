"""Manifest-driven data access.

The harness reads photoforge datasets only through their published
interface: the JSONL manifest plus the PNG files it points at. Records
under ``raw/`` are native-resolution renders for the classical solver;
the networks train on the augmented 128x128 records. Augmented variants
of one base sample always share its split, which is asserted at load
time so a leaky manifest fails fast.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

MANIFEST_FIELDS = {
    "id", "particle_radius", "m", "forces", "base_id", "rotation", "image_path", "split",
}

M_VALUES = (2, 3, 4, 5, 6)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    m: int
    forces: tuple[tuple[float, float, float], ...]
    base_id: str
    split: str
    image_path: str


def read_manifest(path) -> list[Record]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if set(d) != MANIFEST_FIELDS:
                raise ManifestError(f"line {lineno}: unexpected fields {sorted(set(d) ^ MANIFEST_FIELDS)}")
            records.append(
                Record(
                    id=str(d["id"]),
                    m=int(d["m"]),
                    forces=tuple((float(f), float(a), float(t)) for f, a, t in d["forces"]),
                    base_id=str(d["base_id"]),
                    split=str(d["split"]),
                    image_path=str(d["image_path"]),
                )
            )
    assert_no_leakage(records)
    return records


def assert_no_leakage(records: list[Record]) -> None:
    """Augmented variants of one base sample must never straddle splits."""
    splits: dict[str, str] = {}
    for r in records:
        seen = splits.setdefault(r.base_id, r.split)
        if seen != r.split:
            raise ManifestError(
                f"split leakage: base {r.base_id} appears in both '{seen}' and '{r.split}'"
            )


def augmented(records: list[Record], split: str | None = None) -> list[Record]:
    """The 128x128 training records (excludes the native raw renders)."""
    out = [r for r in records if r.id != r.base_id]
    if split is not None:
        out = [r for r in out if r.split == split]
    return out


def load_image(root, record: Record) -> np.ndarray:
    with Image.open(Path(root) / record.image_path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return arr


def count_label(record: Record) -> int:
    return record.m - M_VALUES[0]


def regression_targets(record: Record, task: str) -> np.ndarray:
    """Canonically ordered per-force targets; angles as (sin, cos) pairs."""
    forces = sorted(record.forces, key=lambda f: f[1])
    if task == "magnitude":
        return np.array([f for f, _, _ in forces], dtype=np.float32)
    if task == "impact":
        out = []
        for _, a, _ in forces:
            out.extend((math.sin(a), math.cos(a)))
        return np.array(out, dtype=np.float32)
    if task == "tangent":
        out = []
        for _, _, t in forces:
            out.extend((math.sin(t), math.cos(t)))
        return np.array(out, dtype=np.float32)
    raise ValueError(f"unknown regression task {task!r}")


class FringeDataset(Dataset):
    """Images plus task targets for one split.

    task: 'count' for classification, or one of 'magnitude' / 'impact' /
    'tangent' with a fixed force count m (one model per task and count).
    """

    def __init__(self, root, records: list[Record], task: str, m: int | None = None):
        self.root = Path(root)
        self.task = task
        if task == "count":
            self.records = list(records)
        else:
            if m is None:
                raise ValueError("regression tasks need a fixed force count m")
            self.records = [r for r in records if r.m == m]
        self.m = m
        if not self.records:
            raise ManifestError(f"no records for task={task!r} m={m}")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int):
        r = self.records[idx]
        image = torch.from_numpy(load_image(self.root, r)).unsqueeze(0)
        if self.task == "count":
            return image, torch.tensor(count_label(r), dtype=torch.long)
        return image, torch.from_numpy(regression_targets(r, self.task))
