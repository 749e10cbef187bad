"""`faithgen` command-line entrypoint."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .kg_data import DatasetError
from .pipeline import STAGES, MissingArtifactError, cmd_pipeline, run_all

logger = logging.getLogger("faithgen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MISSING = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="run directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faithgen", description="Faithful KG-to-text generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage)
        _common(p)
        if stage == "train":
            p.add_argument("--ablation", choices=["full", "control-only", "contrastive-only", "ce-only"])
        if stage == "generate":
            p.add_argument("--tag", help="hal_low | hal_medium | hal_high")
            p.add_argument("--decode", choices=["greedy", "beam"])
        if stage == "evaluate":
            p.add_argument("--judge", choices=["mock", "remote", "echo"])
    p = sub.add_parser("all", help="run every stage in order")
    _common(p)
    p.add_argument("--ablation", choices=["full", "control-only", "contrastive-only", "ce-only"])
    p.add_argument("--tag")
    p.add_argument("--judge", choices=["mock", "remote", "echo"])

    p = sub.add_parser("report", help="compare evaluated runs")
    p.add_argument("runs", nargs="+", type=Path, help="run directories (or eval directories)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic house-style dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, nargs=3, default=[200, 25, 25], metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "ablation", None):
        cfg.train.ablation = args.ablation
    if getattr(args, "tag", None):
        cfg.decode.tag = args.tag
    if getattr(args, "decode", None):
        cfg.decode.mode = args.decode
    if getattr(args, "judge", None):
        cfg.judge.kind = args.judge
    out = args.out or (Path(cfg.output_dir) if cfg.output_dir else None)
    if out is None:
        raise ConfigError("no run directory: pass --out or set output_dir")
    cfg.output_dir = str(out)
    cfg.validate()
    return cfg


def _report(args) -> None:
    from .evaluation.report import compare_runs

    runs = {}
    for d in args.runs:
        eval_dir = d / "eval" if (d / "eval").is_dir() else d
        if not (eval_dir / "aggregate.json").exists():
            raise MissingArtifactError("report", "evaluate")
        name = d.name
        while name in runs:
            name += "'"
        runs[name] = eval_dir
    csv_path, png = compare_runs(runs, args.out)
    print(csv_path)
    print(png)


def _synth(args) -> None:
    from .kg_data import write_dataset
    from .synthetic import make_house_corpus

    args.out.mkdir(parents=True, exist_ok=True)
    for k, (split, n) in enumerate(zip(("train", "valid", "test"), args.n)):
        samples = make_house_corpus(n, seed=args.seed + k, split=split, id_prefix=split)
        write_dataset(samples, args.out / f"{split}.jsonl")
    (args.out / "config.yaml").write_text(
        "data:\n  train: train.jsonl\n  valid: valid.jsonl\n  test: test.jsonl\n", encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            _report(args)
        elif args.command == "synth":
            _synth(args)
        elif args.command == "all":
            cfg = resolve_config(args)
            for r in run_all(cfg, cfg.output_dir):
                print(f"{r.stage}: {'up to date' if r.skipped else 'done'}")
        else:
            cfg = resolve_config(args)
            r = cmd_pipeline(cfg, args.command, cfg.output_dir)
            print(f"{r.stage}: {'up to date' if r.skipped else 'done'}")
            print(json.dumps(r.outputs, indent=1))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
