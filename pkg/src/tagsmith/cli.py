"""``tagsmith`` command line: build / tag / eval / validate / synth.

Exit codes: 0 success, 2 config, 3 IO or file format, 4 data mismatch,
5 backend failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import builder, metrics
from .config import ConfigError, RunConfig, config_keys, dump_config, load_config
from .corpus import CorpusError, load_corpus
from .llm import LLMError
from .prompt import TemplateError
from .synth import write_synthetic_workspace
from .tagger import MODES, read_assignments, tag_batch, write_assignments

logger = logging.getLogger("tagsmith")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _keys_epilog() -> str:
    lines = ["config keys (override with --set section.key=value; corpus.map.<clue>=<source> adds a mapping):"]
    lines += [f"  {k} (default: {v!r})" for k, v in config_keys()]
    return "\n".join(lines)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", type=Path, help="TOML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. builder.min_freq=3 (repeatable)")
    p.add_argument("--map", dest="maps", action="append", default=[], metavar="CLUE=SOURCE",
                   help="map a corpus record key onto a clue field, e.g. title=t (repeatable)")
    p.add_argument("--id-field", help="record key holding the entity id")
    p.add_argument("--output-dir", help="directory for artifacts")
    p.add_argument("--parallelism", type=int, help="concurrent LLM requests")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="fixed clocks and jitter-free retries for byte-stable outputs")
    p.add_argument("-v", "--verbose", action="store_true")


def _load(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    overrides += [f"corpus.map.{m.partition('=')[0]}={json.dumps(m.partition('=')[2])}" for m in args.maps]
    if args.id_field:
        overrides.append(f"corpus.id_field={json.dumps(args.id_field)}")
    if args.output_dir:
        overrides.append(f"run.output_dir={json.dumps(args.output_dir)}")
    if args.parallelism is not None:
        overrides.append(f"llm.parallelism={args.parallelism}")
    if args.deterministic:
        overrides.append("run.deterministic=true")
    for m in args.maps:
        if "=" not in m:
            raise CliError(EXIT_CONFIG, f"config validation: --map expects CLUE=SOURCE, got {m!r}")
    try:
        return load_config(args.config, overrides)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config validation: {exc}") from exc


def _validate(cfg: RunConfig, need_corpus: bool = True) -> None:
    try:
        cfg.validate(need_corpus=need_corpus)
    except (ConfigError, TemplateError, CorpusError) as exc:
        raise CliError(EXIT_CONFIG, f"config validation: {exc}") from exc


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.resolve(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_corpus(cfg: RunConfig, path: Path):
    try:
        return load_corpus(path, cfg.schema(), strict=cfg.corpus.strict)
    except CorpusError as exc:
        raise CliError(EXIT_IO, f"corpus: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"corpus: {exc}") from exc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def cmd_build(args: argparse.Namespace) -> int:
    cfg = _load(args)
    _validate(cfg)
    corpus_path = cfg.resolve(cfg.corpus.path)
    corpus = _read_corpus(cfg, corpus_path)
    out = _outdir(cfg)
    llm, encoder = cfg.make_llm(), cfg.make_encoder()
    try:
        result = builder.build_stages(corpus, cfg.generation_templates(), llm, encoder, cfg.build_config(),
                                      corpus_hash=hashlib.sha256(corpus_path.read_bytes()).hexdigest())
    except builder.BuildError as exc:
        code = EXIT_BACKEND if exc.stage == "generate" and "failed" in str(exc) else EXIT_DATA
        raise CliError(code, f"build: {exc}") from exc
    except LLMError as exc:
        raise CliError(EXIT_BACKEND, f"build: backend failure: {exc}") from exc

    builder.save_counts(result.raw, out / "raw_counts.json")
    builder.save_counts(result.truncated, out / "truncated_counts.json")
    builder.save_tag_system(result.tag_system, out / "tag_system.json")
    _write_json(out / "manifest.json", result.tag_system.manifest)
    _write_json(out / "build_log.json", {
        "stages": [
            {"stage": "generate", "tags": len(result.raw), "failed_completions": len(result.raw.failures)},
            {"stage": "truncate", "tags": len(result.truncated),
             "band": [cfg.builder.min_freq, result.tag_system.manifest["max_freq"]]},
            {"stage": "fuse", "tags": len(result.tag_system),
             "threshold": cfg.builder.fusion_threshold},
        ],
        "failures": result.raw.failures,
    })
    print(f"built tag system: {len(result.tag_system)} tags "
          f"(raw {len(result.raw)}, truncated {len(result.truncated)}) -> {out / 'tag_system.json'}")
    return EXIT_OK


def _load_system(cfg: RunConfig, path: Path | None, encoder_name: str | None):
    path = path or cfg.resolve(cfg.run.output_dir) / "tag_system.json"
    try:
        return builder.load_tag_system(path, expected_encoder=encoder_name), path
    except (OSError, builder.TagSystemFormatError) as exc:
        raise CliError(EXIT_IO, f"cannot load tag system: {exc}") from exc


def cmd_tag(args: argparse.Namespace) -> int:
    cfg = _load(args)
    _validate(cfg, need_corpus=args.input is None)
    encoder, llm = cfg.make_encoder(), cfg.make_llm()
    ts, _ = _load_system(cfg, args.tag_system, encoder.name)
    entities = _read_corpus(cfg, args.input or cfg.resolve(cfg.corpus.path))
    template = cfg.generation_templates()[0] if args.mode == "generative" else cfg.selective_template()
    results = tag_batch(entities, ts, args.mode, llm, encoder, template, cfg.tagger_config(),
                        parallelism=cfg.llm.parallelism)
    dest = args.out or _outdir(cfg) / f"assignments.{args.mode}.jsonl"
    write_assignments(results, dest)
    failures = sum(r.error is not None for r in results.values())
    empty = sum(not r.tags and r.error is None for r in results.values())
    assigned = sum(len(r.tags) for r in results.values())
    print(f"tagged {len(results)} entities ({args.mode}): {assigned} tags assigned, "
          f"{empty} empty, {failures} failures -> {dest}")
    return EXIT_BACKEND if results and failures == len(results) else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.use_ground_truth == bool(args.assignments):
        raise CliError(EXIT_CONFIG, "config validation: give exactly one of --assignments or --use-ground-truth")
    _validate(cfg, need_corpus=args.use_ground_truth and args.corpus is None)
    encoder = cfg.make_encoder()
    threshold = cfg.metrics.threshold
    if args.use_ground_truth:
        corpus_path = args.corpus or cfg.resolve(cfg.corpus.path)
        entities = _read_corpus(cfg, corpus_path)
        if any(e.ground_truth_tags is None for e in entities):
            raise CliError(EXIT_DATA, "data mismatch: corpus.hashtag_field is not set, no ground-truth tags")
        items = {e.id: list(e.ground_truth_tags) for e in entities}
        ts = metrics.tag_system_from_assignments(items, encoder.name)
        provenance = {"source": "ground_truth", "corpus": corpus_path.name}
        stem = "report.ground_truth"
    else:
        ts, ts_path = _load_system(cfg, args.tag_system, encoder.name)
        try:
            results = read_assignments(args.assignments)
        except (ValueError, KeyError, OSError) as exc:
            raise CliError(EXIT_DATA, f"data mismatch: {exc}") from exc
        known = set(ts.tags)
        stray = sorted({t for r in results.values() for t in r.tag_names if t not in known})
        if stray:
            raise CliError(EXIT_DATA, f"data mismatch: assignments use tags missing from the tag system: {stray[:10]}")
        items = {eid: r.tag_names for eid, r in results.items()}
        provenance = {"source": "assignments", "tag_system": ts_path.name, "assignments": Path(args.assignments).name}
        stem = f"report.{Path(args.assignments).stem}"
    report = metrics.compute_report(ts, items, encoder, threshold, provenance)
    out = args.out or _outdir(cfg) / f"{stem}.json"
    metrics.emit_report(report, out, "json")
    metrics.emit_report(report, out, "csv")
    print(f"uniformity {report.uniformity:.4f}, intra-item redundancy {report.intra_item_redundancy:.4f}, "
          f"{report.tag_count} tags, {report.tags_per_item.total} items -> {out}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    _validate(cfg, need_corpus=not args.no_corpus)
    print(dump_config(cfg))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    paths = write_synthetic_workspace(args.out, n=args.n, holdout=args.holdout, seed=args.seed)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagsmith", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter
    epilog = _keys_epilog()

    p = sub.add_parser("build", help="construct a tag system from a corpus", epilog=epilog, formatter_class=fmt)
    _common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("tag", help="assign tags to new entities", epilog=epilog, formatter_class=fmt)
    _common(p)
    p.add_argument("--mode", choices=MODES, default="generative")
    p.add_argument("--input", type=Path, help="corpus of entities to tag (default: corpus.path)")
    p.add_argument("--tag-system", type=Path, help="tag system file (default: <output_dir>/tag_system.json)")
    p.add_argument("--out", type=Path, help="assignments file (default: <output_dir>/assignments.<mode>.jsonl)")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("eval", help="compute quality metrics", epilog=epilog, formatter_class=fmt)
    _common(p)
    p.add_argument("--tag-system", type=Path)
    p.add_argument("--assignments", type=Path, help="assignments file from `tag`")
    p.add_argument("--use-ground-truth", action="store_true", help="evaluate the corpus' human hashtags")
    p.add_argument("--corpus", type=Path, help="corpus for --use-ground-truth (default: corpus.path)")
    p.add_argument("--out", type=Path, help="report JSON path; CSV histograms are written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="check a config and print every resolved key", epilog=epilog,
                       formatter_class=fmt)
    _common(p)
    p.add_argument("--no-corpus", action="store_true", help="skip corpus checks")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus, holdout and config")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--holdout", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
