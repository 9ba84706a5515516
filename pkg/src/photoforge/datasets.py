"""Labeled dataset generation and the manifest file format.

A dataset is a directory tree holding one native-resolution render per
sampled force list under ``raw/`` plus a configured number of augmented
variants (random rotation, resize to 128, Gaussian blur) under one
directory per split. The manifest is a UTF-8 JSONL file, one record per
line, ordered by id, with exactly the fields of :class:`SampleRecord`.
Everything is a pure function of the config and its seed: regenerating a
dataset reproduces every byte.

Splits are assigned to base samples before augmentation; all variants of
one base sample share its split, so no content leaks across splits.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import streams
from .elastic import TWO_PI, ForceList, ParticleSpec
from .rendering import ImageSpec, IntensityImage, load_png, preprocess, render, save_png
from .sampling import SamplerConfig, sample_force_list, validate_force_list

MANIFEST_FIELDS = (
    "id",
    "particle_radius",
    "m",
    "forces",
    "base_id",
    "rotation",
    "image_path",
    "split",
)


class ManifestError(ValueError):
    """Malformed manifest record; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    """One labeled sample: forces after any augmentation rotation, plus provenance."""

    id: str
    particle_radius: float
    m: int
    forces: tuple[tuple[float, float, float], ...]
    base_id: str
    rotation: float
    image_path: str
    split: str

    def force_list(self) -> ForceList:
        return ForceList.from_rows(self.forces)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "particle_radius": self.particle_radius,
            "m": self.m,
            "forces": [list(f) for f in self.forces],
            "base_id": self.base_id,
            "rotation": self.rotation,
            "image_path": self.image_path,
            "split": self.split,
        }


@dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to regenerate a dataset bit for bit."""

    radius: float
    per_m_count: int
    splits: tuple[tuple[str, int], ...]
    m_values: tuple[int, ...] = (2, 3, 4, 5, 6)
    augmentations: int = 5
    fringe_coefficient: float = 0.18
    intensity_scale: float = 255.0
    pixel_size: float = 0.00019
    sampler: SamplerConfig = SamplerConfig()
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.augmentations < 0:
            raise ConfigError(f"augmentation count must be >= 0, got {self.augmentations}")
        if sum(n for _, n in self.splits) != self.per_m_count:
            raise ConfigError(
                f"split sizes {[n for _, n in self.splits]} must sum to per-M count {self.per_m_count}"
            )
        if len({name for name, _ in self.splits}) != len(self.splits):
            raise ConfigError("split names must be unique")
        object.__setattr__(self, "splits", tuple((str(n), int(c)) for n, c in self.splits))
        object.__setattr__(self, "m_values", tuple(sorted(self.m_values)))

    @property
    def base_count(self) -> int:
        return self.per_m_count * len(self.m_values)

    def particle(self) -> ParticleSpec:
        return ParticleSpec(self.radius, self.fringe_coefficient, self.intensity_scale)

    def image_spec(self) -> ImageSpec:
        return ImageSpec(self.pixel_size)

    def to_json_dict(self) -> dict:
        return {
            "radius": self.radius,
            "per_m_count": self.per_m_count,
            "splits": [[n, c] for n, c in self.splits],
            "m_values": list(self.m_values),
            "augmentations": self.augmentations,
            "fringe_coefficient": self.fringe_coefficient,
            "intensity_scale": self.intensity_scale,
            "pixel_size": self.pixel_size,
            "sampler": self.sampler.to_json_dict(),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetConfig":
        kwargs = dict(d)
        kwargs["splits"] = tuple((n, c) for n, c in kwargs["splits"])
        if "m_values" in kwargs:
            kwargs["m_values"] = tuple(kwargs["m_values"])
        if "sampler" in kwargs:
            kwargs["sampler"] = SamplerConfig.from_json_dict(kwargs["sampler"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "DatasetConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def write_manifest(records: Iterable[SampleRecord], path) -> None:
    """Write records as JSONL, sorted by id, fixed field order."""
    ordered = sorted(records, key=lambda r: r.id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in ordered:
            fh.write(json.dumps(rec.to_json_dict(), separators=(",", ":")) + "\n")


def read_manifest(path) -> tuple[SampleRecord, ...]:
    """Parse a manifest strictly; any schema deviation names its line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(d, dict):
                raise ManifestError("record is not an object", lineno)
            extra = set(d) - set(MANIFEST_FIELDS)
            if extra:
                raise ManifestError(f"unknown field(s) {sorted(extra)}", lineno)
            missing = set(MANIFEST_FIELDS) - set(d)
            if missing:
                raise ManifestError(f"missing field(s) {sorted(missing)}", lineno)
            try:
                forces = tuple(
                    (float(f), float(a), float(t)) for f, a, t in d["forces"]
                )
                rec = SampleRecord(
                    id=str(d["id"]),
                    particle_radius=float(d["particle_radius"]),
                    m=int(d["m"]),
                    forces=forces,
                    base_id=str(d["base_id"]),
                    rotation=float(d["rotation"]),
                    image_path=str(d["image_path"]),
                    split=str(d["split"]),
                )
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"bad field value: {exc}", lineno) from exc
            if rec.m != len(rec.forces):
                raise ManifestError(
                    f"m={rec.m} disagrees with {len(rec.forces)} forces", lineno
                )
            records.append(rec)
    return tuple(records)


def split_assign(
    base_ids: Sequence[str],
    sizes: Sequence[tuple[str, int]],
    rng: np.random.Generator,
) -> dict[str, str]:
    """Seeded shuffle of the ids followed by contiguous assignment.

    Sizes may sum to less than the number of ids; leftover ids are simply
    not assigned. Oversubscription is a config error.
    """
    total = sum(n for _, n in sizes)
    if total > len(base_ids):
        raise ConfigError(
            f"split sizes sum to {total} but only {len(base_ids)} ids are available"
        )
    perm = rng.permutation(len(base_ids))
    assignment: dict[str, str] = {}
    cursor = 0
    for name, count in sizes:
        for k in perm[cursor : cursor + count]:
            assignment[base_ids[int(k)]] = name
        cursor += count
    return assignment


def base_id(m: int, serial: int) -> str:
    return f"m{m}-{serial:05d}"


def plan_base_ids(config: DatasetConfig) -> list[str]:
    """Ids of every base sample the config would generate (no rendering)."""
    return [base_id(m, s) for m in config.m_values for s in range(config.per_m_count)]


def _generate_one(args) -> list[SampleRecord]:
    config, out_dir, m, serial, split = args
    out = Path(out_dir)
    bid = base_id(m, serial)
    sampler_cfg = replace(config.sampler, seed=config.seed)
    forces = sample_force_list(m, sampler_cfg, sample_index=serial)
    particle = config.particle()
    native = render(forces, particle, config.image_spec())

    raw_path = f"raw/{bid}.png"
    save_png(native, out / raw_path)
    records = [
        SampleRecord(
            id=bid,
            particle_radius=config.radius,
            m=m,
            forces=tuple(tuple(r) for r in forces.rows()),
            base_id=bid,
            rotation=0.0,
            image_path=raw_path,
            split=split,
        )
    ]
    if config.augmentations:
        angles = streams.stream(config.seed, streams.TAG_AUGMENT, m, serial).uniform(
            0.0, TWO_PI, config.augmentations
        )
        for k, angle in enumerate(angles):
            aug_id = f"{bid}-a{k}"
            img = preprocess(native, angle=float(angle))
            path = f"{split}/{aug_id}.png"
            save_png(img, out / path)
            rotated = forces.rotated(float(angle))
            records.append(
                SampleRecord(
                    id=aug_id,
                    particle_radius=config.radius,
                    m=m,
                    forces=tuple(tuple(r) for r in rotated.rows()),
                    base_id=bid,
                    rotation=float(angle),
                    image_path=path,
                    split=split,
                )
            )
    return records


def generate(
    config: DatasetConfig,
    out_dir=None,
    *,
    workers: int = 1,
) -> tuple[SampleRecord, ...]:
    """Generate the full dataset tree plus manifest; returns the records.

    Deterministic given the config (including its seed) and independent of
    the worker count: every sample draws from its own stream and the
    manifest is assembled in id order.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir or ".")
    (out / "raw").mkdir(parents=True, exist_ok=True)
    for name, _ in config.splits:
        (out / name).mkdir(parents=True, exist_ok=True)

    tasks = []
    for m in config.m_values:
        ids = [base_id(m, s) for s in range(config.per_m_count)]
        split_map = split_assign(
            ids, config.splits, streams.stream(config.seed, streams.TAG_SPLIT, m)
        )
        tasks.extend(
            (config, str(out), m, s, split_map[ids[s]]) for s in range(config.per_m_count)
        )

    records: list[SampleRecord] = []
    if workers <= 1:
        for task in tasks:
            records.extend(_generate_one(task))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_generate_one, tasks, chunksize=16):
                records.extend(batch)

    records.sort(key=lambda r: r.id)
    write_manifest(records, out / "manifest.jsonl")
    return tuple(records)


def verify_record(
    record: SampleRecord,
    base_record: SampleRecord,
    config: DatasetConfig,
    root,
) -> bool:
    """Re-render a record from its base labels and compare with the stored pixels."""
    native = render(base_record.force_list(), config.particle(), config.image_spec())
    if record.id == record.base_id:
        expected = native
    else:
        expected = preprocess(native, angle=record.rotation)
    stored = load_png(Path(root) / record.image_path, expected.pixel_size)
    return stored == expected
