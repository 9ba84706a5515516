import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from photoforge import streams
from photoforge.datasets import (
    ConfigError,
    DatasetConfig,
    ManifestError,
    SampleRecord,
    generate,
    plan_base_ids,
    read_manifest,
    split_assign,
    verify_record,
    write_manifest,
)
from photoforge.sampling import SamplerConfig, validate_force_list


def tiny_config(**overrides):
    base = dict(
        radius=0.008,
        per_m_count=6,
        splits=(("train", 4), ("val", 1), ("test", 1)),
        m_values=(2, 3),
        augmentations=2,
        sampler=SamplerConfig(),
        seed=7,
    )
    base.update(overrides)
    return DatasetConfig(**base)


def tree_hashes(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file()
    }


def record_fixture(**overrides):
    base = dict(
        id="m2-00001-a0",
        particle_radius=0.008,
        m=2,
        forces=((0.5, 0.1, 0.0), (0.5, 0.1 + math.pi, 0.0)),
        base_id="m2-00001",
        rotation=1.25,
        image_path="train/m2-00001-a0.png",
        split="train",
    )
    base.update(overrides)
    return SampleRecord(**base)


class TestSplitAssign:
    def test_partition_no_overlap(self):
        ids = [f"x{i}" for i in range(4800)]
        rng = streams.stream(0, streams.TAG_SPLIT)
        assignment = split_assign(ids, [("train", 3200), ("val", 800), ("test", 800)], rng)
        assert len(assignment) == 4800
        counts = {}
        for split in assignment.values():
            counts[split] = counts.get(split, 0) + 1
        assert counts == {"train": 3200, "val": 800, "test": 800}

    def test_val_disjoint_from_train(self):
        ids = [f"x{i}" for i in range(100)]
        rng = streams.stream(1, streams.TAG_SPLIT)
        assignment = split_assign(ids, [("train", 64), ("val", 16)], rng)
        train = {k for k, v in assignment.items() if v == "train"}
        val = {k for k, v in assignment.items() if v == "val"}
        assert not train & val
        assert len(train) == 64 and len(val) == 16

    def test_deterministic(self):
        ids = [f"x{i}" for i in range(50)]
        a = split_assign(ids, [("train", 30), ("test", 20)], streams.stream(5, streams.TAG_SPLIT))
        b = split_assign(ids, [("train", 30), ("test", 20)], streams.stream(5, streams.TAG_SPLIT))
        assert a == b

    def test_oversubscription(self):
        with pytest.raises(ConfigError):
            split_assign(["a"], [("train", 2)], streams.stream(0, streams.TAG_SPLIT))


class TestManifestIO:
    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        write_manifest([], path)
        assert read_manifest(path) == ()

    def test_single_record_preserves_all_fields(self, tmp_path):
        rec = record_fixture()
        path = tmp_path / "manifest.jsonl"
        write_manifest([rec], path)
        (back,) = read_manifest(path)
        assert back == rec

    def test_unknown_field_rejected_with_line(self, tmp_path):
        rec = record_fixture()
        path = tmp_path / "manifest.jsonl"
        write_manifest([rec, rec], path)
        lines = path.read_text().splitlines()
        bad = json.loads(lines[1])
        bad["surprise"] = 1
        path.write_text(lines[0] + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(ManifestError) as err:
            read_manifest(path)
        assert err.value.line == 2
        assert "surprise" in str(err.value)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        d = record_fixture().to_json_dict()
        del d["split"]
        path.write_text(json.dumps(d) + "\n")
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        d = record_fixture().to_json_dict()
        d["m"] = 3
        path.write_text(json.dumps(d) + "\n")
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_byte_stable_ordering(self, tmp_path):
        a, b = record_fixture(), record_fixture(id="m2-00000", base_id="m2-00000")
        p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        write_manifest([a, b], p1)
        write_manifest([b, a], p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestConfig:
    def test_split_sizes_must_sum(self):
        with pytest.raises(ConfigError):
            tiny_config(splits=(("train", 4), ("val", 1)))

    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "config.json"
        cfg.to_file(path)
        assert DatasetConfig.from_file(path) == cfg

    def test_shipped_configs_parse(self):
        root = Path(__file__).resolve().parents[1] / "configs"
        large = DatasetConfig.from_file(root / "paper-large.json")
        assert large.base_count == 24000
        assert large.radius == 0.008
        assert dict(large.splits)["train"] == 3200
        small = DatasetConfig.from_file(root / "paper-small.json")
        assert small.base_count == 7400
        assert small.radius == 0.004
        assert sum(n for _, n in small.splits) == 1480

    def test_plan_counts(self):
        cfg = tiny_config()
        ids = plan_base_ids(cfg)
        assert len(ids) == cfg.base_count == 12
        assert len(set(ids)) == 12


class TestGenerate:
    @pytest.fixture(scope="class")
    def dataset(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("ds")
        cfg = tiny_config()
        records = generate(cfg, out)
        return cfg, out, records

    def test_counts(self, dataset):
        cfg, out, records = dataset
        per_base = 1 + cfg.augmentations
        assert len(records) == cfg.base_count * per_base
        assert sum(1 for r in records if r.id == r.base_id) == cfg.base_count

    def test_manifest_matches_return(self, dataset):
        cfg, out, records = dataset
        assert read_manifest(out / "manifest.jsonl") == records

    def test_no_split_leakage(self, dataset):
        _, _, records = dataset
        by_base = {}
        for r in records:
            by_base.setdefault(r.base_id, set()).add(r.split)
        assert all(len(s) == 1 for s in by_base.values())

    def test_labels_valid_and_rotated(self, dataset):
        _, _, records = dataset
        by_id = {r.id: r for r in records}
        for r in records:
            assert validate_force_list(r.forces) is None
            if r.id != r.base_id:
                base = by_id[r.base_id]
                rotated = sorted((a + r.rotation) % (2 * math.pi) for _, a, _ in base.forces)
                stored = sorted(a for _, a, _ in r.forces)
                np.testing.assert_allclose(stored, rotated, atol=1e-12)

    def test_images_exist_with_correct_shapes(self, dataset):
        cfg, out, records = dataset
        from photoforge.rendering import load_png

        for r in records[:12]:
            img = load_png(out / r.image_path, 1.0)
            if r.id == r.base_id:
                assert img.width == 85
            else:
                assert img.pixels.shape == (128, 128)

    def test_records_rerender_bit_exactly(self, dataset):
        cfg, out, records = dataset
        by_id = {r.id: r for r in records}
        sample = list(records)[:3] + list(records)[-3:]
        for r in sample:
            assert verify_record(r, by_id[r.base_id], cfg, out)

    def test_determinism_and_worker_independence(self, tmp_path):
        cfg = tiny_config(per_m_count=4, splits=(("train", 3), ("test", 1)))
        t1, t2, t3 = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        generate(cfg, t1)
        generate(cfg, t2)
        generate(cfg, t3, workers=2)
        h1, h2, h3 = tree_hashes(t1), tree_hashes(t2), tree_hashes(t3)
        assert h1 == h2
        assert h1 == h3

    def test_seed_changes_output(self, tmp_path):
        cfg1 = tiny_config(per_m_count=2, splits=(("train", 2),), m_values=(2,), augmentations=0)
        cfg2 = tiny_config(
            per_m_count=2, splits=(("train", 2),), m_values=(2,), augmentations=0, seed=8
        )
        t1, t2 = tmp_path / "a", tmp_path / "b"
        generate(cfg1, t1)
        generate(cfg2, t2)
        assert tree_hashes(t1) != tree_hashes(t2)
