"""Command-line entry point: render | sample | dataset | reconstruct | eval.

Force-list files are plain text, one force per line as three floats
(magnitude N, impact angle rad, tangent angle rad); blank lines separate
lists and '#' starts a comment. Predictions files for `eval` are JSONL
records {"id": ..., "m": ..., "forces": [[F, alpha, tau], ...]} where
either of "m"/"forces" may be omitted; a dataset manifest is accepted
directly as a predictions file (its own labels then act as predictions).

Exit codes: 0 success, 2 invalid input or constraint violation, 3 missing
file, 4 schema or parse error, 5 sampler exhaustion, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .datasets import (
    DatasetConfig,
    ManifestError,
    SampleRecord,
    generate,
    read_manifest,
)
from .elastic import ForceList, ParticleSpec
from .inverse import SolverConfig, reconstruct, reconstruct_fixed_m, initial_guess
from .metrics import evaluate_forces
from .rendering import ImageSpec, load_png, preprocess, render, save_png
from .sampling import (
    SamplerConfig,
    SamplerExhausted,
    sample_force_list,
    validate_force_list,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_MISSING = 3
EXIT_SCHEMA = 4
EXIT_EXHAUSTED = 5

_EPILOG = """\
exit codes:
  0  success
  1  unexpected error
  2  invalid input or constraint violation
  3  missing input file
  4  schema or parse error
  5  sampler exhaustion
"""


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def read_force_lists(path: Path) -> list[list[list[float]]]:
    """Parse a force-list text file into blocks of [F, alpha, tau] rows."""
    if not path.exists():
        raise CliError(f"force-list file not found: {path}", EXIT_MISSING)
    blocks: list[list[list[float]]] = []
    current: list[list[float]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            if current:
                blocks.append(current)
                current = []
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CliError(
                f"{path}:{lineno}: expected 3 values per force, got {len(parts)}", EXIT_SCHEMA
            )
        try:
            current.append([float(v) for v in parts])
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: {exc}", EXIT_SCHEMA) from exc
    if current:
        blocks.append(current)
    if not blocks:
        raise CliError(f"{path}: no force lists found", EXIT_SCHEMA)
    return blocks


def write_force_lists(lists: list[ForceList], path: Path) -> None:
    lines = ["# force list records: magnitude_N impact_angle_rad tangent_angle_rad"]
    for forces in lists:
        lines.append("")
        for f, a, t in forces.rows():
            lines.append(f"{f!r} {a!r} {t!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_render(args) -> int:
    rows = read_force_lists(Path(args.forces))
    if len(rows) != 1:
        raise CliError("render expects exactly one force list in the file", EXIT_INVALID)
    reason = validate_force_list(rows[0])
    if reason is not None:
        raise CliError(f"invalid force list: {reason}", EXIT_INVALID)
    forces = ForceList.from_rows(rows[0])
    particle = ParticleSpec(args.radius, args.fringe_coefficient)
    spec = ImageSpec(args.pixel_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = render(forces, particle, spec)
    save_png(raw, out / "raw.png")
    save_png(preprocess(raw), out / "preprocessed.png")
    fx, fy = forces.net_force()
    print(f"side: {raw.width} px")
    print(f"net force: {math.hypot(fx, fy):.3e} N   torque sum: {abs(forces.torque_sum()):.3e} N")
    print(f"wrote {out / 'raw.png'} and {out / 'preprocessed.png'}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    config = SamplerConfig(seed=args.seed)
    try:
        lists = [
            sample_force_list(args.m, config, sample_index=i) for i in range(args.n)
        ]
    except SamplerExhausted as exc:
        raise CliError(str(exc), EXIT_EXHAUSTED) from exc
    out = Path(args.out)
    write_force_lists(lists, out)
    print(f"wrote {len(lists)} force lists to {out}")
    return EXIT_OK


def _cmd_dataset(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}", EXIT_MISSING)
    try:
        config = DatasetConfig.from_file(path)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"bad dataset config: {exc}", EXIT_SCHEMA) from exc
    if args.seed is not None:
        config = DatasetConfig.from_json_dict({**config.to_json_dict(), "seed": args.seed})
    out_dir = args.out or config.out_dir
    if not out_dir:
        raise CliError("no output directory (set --out or out_dir in the config)", EXIT_INVALID)
    try:
        records = generate(config, out_dir, workers=args.threads)
    except SamplerExhausted as exc:
        raise CliError(f"M={exc.m}: {exc}", EXIT_EXHAUSTED) from exc
    bases = sum(1 for r in records if r.id == r.base_id)
    print(f"generated {len(records)} records ({bases} base samples) in {out_dir}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    path = Path(args.image)
    if not path.exists():
        raise CliError(f"image not found: {path}", EXIT_MISSING)
    observed = load_png(path, args.pixel_size)
    particle = ParticleSpec(args.radius, args.fringe_coefficient)
    config = SolverConfig()
    if args.m == "auto":
        result = reconstruct(observed, particle, config)
    else:
        m = int(args.m)
        guess = initial_guess(observed, m, particle, config)
        result = reconstruct_fixed_m(observed, m, guess, particle, config)
    payload = result.to_json_dict()
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _load_predictions(path: Path) -> dict[str, dict]:
    """Read a predictions file (or a manifest acting as one) keyed by id."""
    if not path.exists():
        raise CliError(f"predictions file not found: {path}", EXIT_MISSING)
    try:
        records = read_manifest(path)
        return {
            r.id: {"m": r.m, "forces": [list(f) for f in r.forces]} for r in records
        }
    except ManifestError:
        pass
    out: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{lineno}: invalid JSON: {exc.msg}", EXIT_SCHEMA) from exc
            if not isinstance(d, dict) or "id" not in d:
                raise CliError(f"{path}:{lineno}: prediction record needs an 'id'", EXIT_SCHEMA)
            if "m" not in d and "forces" not in d:
                raise CliError(
                    f"{path}:{lineno}: prediction record needs 'm' and/or 'forces'", EXIT_SCHEMA
                )
            entry: dict = {}
            if d.get("forces") is not None:
                try:
                    entry["forces"] = [[float(f), float(a), float(t)] for f, a, t in d["forces"]]
                except (TypeError, ValueError) as exc:
                    raise CliError(f"{path}:{lineno}: bad forces: {exc}", EXIT_SCHEMA) from exc
            if d.get("m") is not None:
                entry["m"] = int(d["m"])
            elif "forces" in entry:
                entry["m"] = len(entry["forces"])
            out[str(d["id"])] = entry
    return out


def _cmd_eval(args) -> int:
    truth_path = Path(args.truth)
    if not truth_path.exists():
        raise CliError(f"truth file not found: {truth_path}", EXIT_MISSING)
    try:
        truth_records = read_manifest(truth_path)
    except ManifestError as exc:
        raise CliError(f"bad truth manifest: {exc}", EXIT_SCHEMA) from exc
    truths: list[SampleRecord] = [
        r
        for r in truth_records
        if (args.split is None or r.split == args.split)
        and (r.id != r.base_id if args.against == "augmented" else r.id == r.base_id)
    ]
    if not truths:
        raise CliError("no truth records match the requested split/subset", EXIT_INVALID)
    preds = _load_predictions(Path(args.pred))

    truth_lists = []
    pred_lists = []
    pred_ms = []
    missing = 0
    for rec in truths:
        p = preds.get(rec.id)
        if p is None:
            missing += 1
            continue
        truth_lists.append(rec.force_list())
        pred_lists.append(ForceList.from_rows(p["forces"]) if "forces" in p else None)
        pred_ms.append(p["m"])
    if not truth_lists:
        raise CliError("no prediction ids overlap the truth records", EXIT_INVALID)
    report = evaluate_forces(pred_lists, truth_lists, pred_ms)
    if missing:
        print(f"warning: {missing} truth records had no prediction", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.format_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photoforge",
        description="Photoelastic fringe rendering, dataset generation, and force reconstruction.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one force list to raw and preprocessed PNGs")
    p.add_argument("--forces", required=True, help="force-list text file (one list)")
    p.add_argument("--radius", type=float, default=0.008, help="particle radius in metres")
    p.add_argument("--pixel-size", type=float, default=0.00019, help="metres per pixel")
    p.add_argument("--fringe-coefficient", type=float, default=0.18)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("sample", help="sample valid force lists to a text file")
    p.add_argument("--m", type=int, required=True, help="forces per list (2..6)")
    p.add_argument("--n", type=int, required=True, help="number of lists")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output force-list file")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("dataset", help="generate a labeled dataset from a config file")
    p.add_argument("--config", required=True, help="dataset config JSON")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--seed", type=int, help="seed override (wins over config)")
    p.add_argument("--threads", type=int, default=1, help="parallel workers")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("reconstruct", help="reconstruct forces from a fringe image")
    p.add_argument("--image", required=True, help="8-bit grayscale PNG")
    p.add_argument("--m", default="auto", help="force count 2..6, or 'auto' for model selection")
    p.add_argument("--radius", type=float, default=0.008)
    p.add_argument("--pixel-size", type=float, default=0.00019)
    p.add_argument("--fringe-coefficient", type=float, default=0.18)
    p.add_argument("--out", help="write the result record JSON here")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("eval", help="score a predictions file against a manifest")
    p.add_argument("--pred", required=True, help="predictions JSONL (or a manifest)")
    p.add_argument("--truth", required=True, help="truth manifest JSONL")
    p.add_argument("--split", help="restrict to one split name")
    p.add_argument(
        "--against",
        choices=("augmented", "raw"),
        default="augmented",
        help="score against augmented records (default) or the raw base records",
    )
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - top-level CLI guard
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
