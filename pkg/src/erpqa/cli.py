"""``erpqa`` command line: stitch, analyze, make-toy, generate, stats, grade, judge, advantage, curriculum.

Exit codes: 0 success, 2 missing input, 3 I/O or format error, 4 invariant violation.
``ERPQA_OUTPUT_ROOT`` resolves relative output paths; ``ERPQA_PARALLELISM`` sets the worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import __version__
from .errors import ConfigurationError, DomainError, FormatError, JudgeParseError, SceneFormatError
from .generator import GenerationConfig, dataset_stats, generate_dataset
from .geometry import FACES, ErpDims, face_shares, stitch_cubemap_to_erp
from .grpo import STAGES, CurriculumStage, GrpoConfig, RolloutGroup, curriculum_batches, total_objective
from .judge import JudgeRequest, build_judge_prompt, judge, parse_judge_reply
from .records import iter_jsonl, read_records, write_jsonl, write_records
from .rewards import grade_responses, parse_response
from .scene import META_FILE, FilterConfig, analyze_scene, load_scene
from .toy import write_toy_corpus

log = logging.getLogger("erpqa")

EXIT_OK, EXIT_MISSING, EXIT_FORMAT, EXIT_INVARIANT = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- plumbing -----------------------------------------------------------------

def output_root() -> Path | None:
    root = os.environ.get("ERPQA_OUTPUT_ROOT")
    return Path(root) if root else None


def out_path(p) -> Path:
    p = Path(p)
    root = output_root()
    if root is not None and not p.is_absolute():
        p = root / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def parallelism(default: int = 1) -> int:
    raw = os.environ.get("ERPQA_PARALLELISM")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"ERPQA_PARALLELISM must be an integer, got {raw!r}", EXIT_INVARIANT) from None
    return max(1, n)


def require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING)
    return p


def write_meta(path: Path, **fields) -> Path:
    """Sidecar ``<name>.meta.json`` recording config and seed next to a JSONL output."""
    meta = path.with_name(path.name + ".meta.json")
    meta.write_text(json.dumps({"erpqa_version": __version__, **fields}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return meta


def load_yaml(path) -> dict:
    p = require(path, "config")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise CliError(f"{p}: invalid YAML ({exc})", EXIT_FORMAT) from None
    if not isinstance(data, dict):
        raise CliError(f"{p}: config must be a mapping", EXIT_FORMAT)
    return data


def discover_scenes(paths) -> list[Path]:
    """Bundle directories: each path is a bundle itself or a root of bundle subdirectories."""
    found = []
    for p in paths:
        p = require(p, "scene path")
        if (p / META_FILE).exists():
            found.append(p)
        else:
            found.extend(sorted(d for d in p.iterdir() if d.is_dir()))
    if not found:
        raise CliError("no scene bundles found", EXIT_MISSING)
    return found


def filter_config(d: dict | None) -> FilterConfig:
    d = dict(d or {})
    if "excluded_classes" in d:
        d["excluded_classes"] = frozenset(d["excluded_classes"])
    try:
        return FilterConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad filter config: {exc}") from None


def analyze_paths(paths: list[Path], fcfg: FilterConfig, seed: int, workers: int, n_samples: int = 100,
                  azimuth_sign: int = 1):
    def one(p):
        try:
            return analyze_scene(load_scene(p), fcfg, n_samples, seed, azimuth_sign)
        except SceneFormatError as exc:
            raise CliError(f"scene {p.name}: {exc}", EXIT_FORMAT) from None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, paths))
    return [one(p) for p in paths]


# -- commands -----------------------------------------------------------------

def cmd_stitch(args) -> int:
    faces_dir = require(args.faces, "faces directory")
    cube, missing = {}, []
    for face in FACES:
        hits = sorted(faces_dir.glob(f"{face.value.lower()}.*"))
        if not hits:
            missing.append(face.value.lower())
            continue
        with Image.open(hits[0]) as im:
            cube[face] = np.asarray(im)
    if missing:
        raise CliError(f"missing cube faces: {', '.join(missing)}", EXIT_MISSING)
    dims = ErpDims(args.width, args.height)
    try:
        erp = stitch_cubemap_to_erp(cube, dims, sampling=args.sampling)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_FORMAT) from None
    dest = out_path(args.out)
    Image.fromarray(erp).save(dest)
    shares = face_shares(dims)
    print(f"wrote {dest} ({dims.width}x{dims.height})")
    for face in FACES:
        print(f"  {face.value:<6} {100 * shares[face]:6.2f}% of sphere")
    return EXIT_OK


def cmd_make_toy(args) -> int:
    dest = out_path(Path(args.out) / "_")
    written = write_toy_corpus(dest.parent, n_scenes=args.n_scenes, dims=ErpDims(args.width, args.height),
                               n_objects=args.n_objects, seed=args.seed)
    print(f"wrote {len(written)} toy scenes to {dest.parent}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    paths = discover_scenes(args.scenes)
    cfg = filter_config(load_yaml(args.config).get("filter") if args.config else None)
    analyses = analyze_paths(paths, cfg, args.seed, parallelism(args.workers))
    dest = out_path(args.out)
    write_jsonl(dest, (a.summary() for a in analyses))
    write_meta(dest, seed=args.seed, scenes=[str(p) for p in paths])
    print(f"analyzed {len(analyses)} scenes, {sum(len(a.objects) for a in analyses)} objects -> {dest}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg_path = require(args.config, "config")
    conf = load_yaml(cfg_path)
    base = cfg_path.parent
    scenes = conf.get("scenes")
    if not scenes:
        raise CliError("config lists no scenes", EXIT_MISSING)
    scenes = [p if Path(p).is_absolute() else base / p for p in ([scenes] if isinstance(scenes, str) else scenes)]
    seed = int(conf.get("seed", 0))
    gen = GenerationConfig.from_dict({**(conf.get("generation") or {}), "seed": seed})
    fcfg = filter_config(conf.get("filter"))
    analysis = conf.get("analysis") or {}
    workers = parallelism(int(conf.get("parallelism", 1)))

    paths = discover_scenes(scenes)
    analyses = analyze_paths(paths, fcfg, seed, workers, int(analysis.get("n_samples", 100)),
                             int(analysis.get("azimuth_sign", 1)))
    records, stats = generate_dataset(analyses, gen, fcfg, workers=workers)

    out_dir = Path(args.out or conf.get("output_root") or "out")
    if not out_dir.is_absolute() and output_root() is None and args.out is None:
        out_dir = base / out_dir
    dest = out_path(out_dir / "dataset.jsonl")
    write_records(dest, records)
    sidecar = dest.with_name("dataset.stats.json")
    sidecar.write_text(json.dumps({"seed": seed, "config": gen.to_dict(), "scenes": [p.name for p in paths],
                                   "stats": stats.to_dict()}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} records to {dest}")
    _print_stats(stats.to_dict())
    for cat, n in stats.shortfalls.items():
        print(f"shortfall: {cat} is {n} records below target")
    return EXIT_OK


def _print_stats(s: dict) -> None:
    print(f"records: {s['total']}")
    for c, share in s["category_shares"].items():
        print(f"  category {c:<12} {s['category_counts'][c]:6d}  {100 * share:6.2f}%")
    for t, share in s["type_shares"].items():
        print(f"  type     {t:<16} {s['type_counts'][t]:6d}  {100 * share:6.2f}%")
    print(f"unique_answers: {s['unique_answers']}")
    print(f"mean_answer_length: {s['mean_answer_length']:.2f}")
    ratio = s["yes_no_ratio"]
    print(f"yes_no_ratio: {'n/a' if ratio is None else f'{ratio:.4f}'}")


def _read_dataset(path):
    p = require(path, "dataset")
    try:
        return read_records(p)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_FORMAT) from None


def _read_rows(path, what: str) -> list[dict]:
    p = require(path, what)
    try:
        return [row for _, row in iter_jsonl(p)]
    except FormatError as exc:
        raise CliError(str(exc), EXIT_FORMAT) from None


def cmd_stats(args) -> int:
    stats = dataset_stats(_read_dataset(args.dataset)).to_dict()
    if args.json:
        print(json.dumps(stats, indent=2, sort_keys=True))
    else:
        _print_stats(stats)
    return EXIT_OK


def _responses(path) -> list[dict]:
    rows = _read_rows(path, "responses")
    for i, r in enumerate(rows, 1):
        if "record_id" not in r:
            raise CliError(f"{path}: response row {i} has no record_id", EXIT_FORMAT)
    return rows


def cmd_grade(args) -> int:
    records = {r.id: r for r in _read_dataset(args.dataset)}
    responses = _responses(args.responses)
    try:
        rows = grade_responses(records, responses)
    except KeyError as exc:
        raise CliError(f"unknown record ids: {', '.join(exc.args[0])}", EXIT_INVARIANT) from None
    dest = out_path(args.out)
    write_jsonl(dest, rows)
    write_meta(dest, dataset=str(args.dataset), responses=str(args.responses), weights={"acc": 0.9, "fmt": 0.1})
    n = len(rows)
    mean = (lambda key, rs: sum(r[key] for r in rs) / len(rs) if rs else 0.0)
    print(f"graded {n} responses -> {dest}")
    print(f"mean_total: {mean('total', rows):.6f}")
    print(f"mean_r_fmt: {mean('r_fmt', rows):.6f}")
    print(f"mean_r_acc: {mean('r_acc', rows):.6f}")
    by_strategy = defaultdict(list)
    for r in rows:
        by_strategy[r["strategy"]].append(r)
    for s in sorted(by_strategy):
        print(f"  {s:<9} n={len(by_strategy[s]):5d} mean_total={mean('total', by_strategy[s]):.6f}")
    return EXIT_OK


def cmd_judge(args) -> int:
    records = {r.id: r for r in _read_dataset(args.dataset)}
    dest = out_path(args.out)
    if args.mode == "ingest-replies":
        if not args.replies:
            raise CliError("--replies is required for ingest-replies", EXIT_MISSING)
        replies = _read_rows(args.replies, "replies")
        rows, rejects = [], []
        for r in replies:
            rid = r.get("record_id")
            if rid not in records:
                rejects.append({"record_id": rid, "error": "unknown record id"})
                continue
            try:
                s = parse_judge_reply(str(r.get("reply", "")))
            except JudgeParseError as exc:
                rejects.append({"record_id": rid, "error": str(exc), "tail": exc.tail})
                continue
            rows.append({"record_id": rid, "score": s.value})
        write_jsonl(dest, rows)
        rej = out_path(args.rejects) if args.rejects else dest.with_name(dest.stem + ".rejects.jsonl")
        write_jsonl(rej, rejects)
        print(f"joined {len(rows)} scores -> {dest}")
        if rejects:
            print(f"warning: {len(rejects)} replies rejected -> {rej}", file=sys.stderr)
        return EXIT_OK

    responses = _responses(args.responses)
    unknown = sorted({r["record_id"] for r in responses if r["record_id"] not in records})
    if unknown:
        raise CliError(f"unknown record ids: {', '.join(unknown)}", EXIT_INVARIANT)
    rows = []
    for r in responses:
        rec = records[r["record_id"]]
        answer = parse_response(r.get("response_text", "")).answer
        if args.mode == "emit-prompts":
            system, user = build_judge_prompt(JudgeRequest.for_record(rec, answer or "(empty)"))
            rows.append({"record_id": rec.id, "system": system, "user": user})
        elif not answer.strip():
            rows.append({"record_id": rec.id, "score": 0, "rationale": "empty answer"})
        else:
            s = judge(JudgeRequest.for_record(rec, answer))
            rows.append({"record_id": rec.id, "score": s.value, "rationale": s.rationale})
    write_jsonl(dest, rows)
    print(f"wrote {len(rows)} {'transcripts' if args.mode == 'emit-prompts' else 'scores'} -> {dest}")
    if args.mode == "deterministic" and rows:
        print(f"mean_score: {sum(r['score'] for r in rows) / len(rows):.4f}")
    return EXIT_OK


def _grpo_config(path) -> GrpoConfig:
    if not path:
        return GrpoConfig()
    return GrpoConfig.from_dict(load_yaml(path).get("grpo") or {})


def cmd_advantage(args) -> int:
    cfg = _grpo_config(args.config)
    rows = _read_rows(args.rollouts, "rollouts")
    groups = [RolloutGroup.from_dict(r) for r in rows]
    for g in groups:
        g.validate(cfg.group_size)
    with ThreadPoolExecutor(max_workers=parallelism()) as ex:
        reports = list(ex.map(lambda g: total_objective(g, cfg), groups))
    dest = out_path(args.out)
    write_jsonl(dest, reports)
    write_meta(dest, grpo=cfg.__dict__)
    print(f"wrote {len(reports)} group reports -> {dest}")
    if reports:
        print(f"mean_objective: {sum(r['objective'] for r in reports) / len(reports):.6f}")
    return EXIT_OK


def cmd_curriculum(args) -> int:
    records = _read_dataset(args.dataset)
    stage = CurriculumStage(args.stage, tuple(records), args.seed)
    dest = out_path(args.out)
    n = write_jsonl(dest, curriculum_batches(stage, args.batch_size, args.epochs))
    write_meta(dest, stage=args.stage, seed=args.seed, batch_size=args.batch_size, epochs=args.epochs)
    print(f"wrote {n} {args.stage} batches -> {dest}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erpqa", description="Panoramic geometry QA toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stitch", help="merge six cube faces into an ERP image")
    s.add_argument("--faces", required=True, help="directory with front/back/left/right/top/bottom images")
    s.add_argument("--width", type=int, default=2048)
    s.add_argument("--height", type=int, default=1024)
    s.add_argument("--sampling", choices=("bilinear", "nearest"), default="bilinear")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("make-toy", help="write synthetic scene bundles")
    s.add_argument("--out", required=True)
    s.add_argument("--n-scenes", type=int, default=12)
    s.add_argument("--width", type=int, default=512)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--n-objects", type=int, default=14)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_toy)

    s = sub.add_parser("analyze", help="per-object geometry summaries for scene bundles")
    s.add_argument("scenes", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("generate", help="generate a QA dataset from a YAML config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (overrides output_root in the config)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("dataset")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("grade", help="routed rewards for model responses")
    s.add_argument("--dataset", required=True)
    s.add_argument("--responses", required=True, help="JSONL of {record_id, response_text}")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_grade)

    s = sub.add_parser("judge", help="0-10 rubric scores or external-judge transcripts")
    s.add_argument("--dataset", required=True)
    s.add_argument("--responses")
    s.add_argument("--mode", choices=("deterministic", "emit-prompts", "ingest-replies"), default="deterministic")
    s.add_argument("--replies", help="JSONL of {record_id, reply} for ingest-replies")
    s.add_argument("--rejects")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_judge)

    s = sub.add_parser("advantage", help="GRPO advantages and objective per rollout group")
    s.add_argument("--rollouts", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_advantage)

    s = sub.add_parser("curriculum", help="curriculum batch manifests")
    s.add_argument("--dataset", required=True)
    s.add_argument("--stage", choices=STAGES, required=True)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_curriculum)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "judge" and args.mode != "ingest-replies" and not args.responses:
        print("erpqa: error: --responses is required for this mode", file=sys.stderr)
        return EXIT_MISSING
    try:
        return args.func(args)
    except CliError as exc:
        print(f"erpqa: error: {exc}", file=sys.stderr)
        return exc.code
    except (DomainError, ConfigurationError) as exc:
        print(f"erpqa: error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FormatError, OSError) as exc:
        print(f"erpqa: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
