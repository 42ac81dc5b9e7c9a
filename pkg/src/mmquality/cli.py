"""Command-line entry point: ``mmquality {gen,train,eval,score}``.

Exit codes: 0 ok, 2 configuration error, 3 I/O or corpus/checkpoint error,
4 divergence (non-finite training loss), 5 degenerate metric (zero-variance
LCC).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig
from .dataset_io import CorpusError, load_corpus
from .labeling import PairingError
from .metrics import DegenerateVarianceError, format_table
from .ranker import DivergenceError
from .synthgen import generate

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_DEGENERATE = 0, 2, 3, 4, 5


def _write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _sidecar(path) -> Path:
    return Path(str(path) + ".config")


def _echo_config(cfg: RunConfig) -> None:
    sys.stderr.write("# resolved config\n" + cfg.dump())


def _load_corpus(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"corpus not found: {path}")
    return load_corpus(path)


def cmd_gen(cfg: RunConfig) -> int:
    synth = cfg.synth()
    path = cfg["paths.corpus"]
    header = generate(synth, path)
    _write_text(_sidecar(path), cfg.dump())
    print(f"wrote {header.item_count} items to {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    header, items = _load_corpus(cfg["paths.corpus"])
    splits = pipeline.make_splits(items, cfg)
    rc = cfg.ranker()
    t0 = time.perf_counter()
    model, log = pipeline.train_rank_model(header, splits.train, cfg)
    elapsed = time.perf_counter() - t0
    pipeline.save_model(cfg["paths.checkpoint"], model, cfg)
    _write_text(cfg["paths.log"], log.to_csv())
    _write_text(_sidecar(cfg["paths.log"]), cfg.dump())
    head = float(np.mean(log.loss[:100]))
    tail = float(np.mean(log.loss[-100:]))
    print(
        f"trained {rc.total_iterations} iterations ({rc.optimizer}, lr={rc.lr!r}) on "
        f"{len(splits.train)} items in {elapsed:.1f}s; mean loss first/last 100: {head:.4f} / {tail:.4f}"
    )
    print(f"checkpoint: {cfg['paths.checkpoint']}  log: {cfg['paths.log']}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, with_baseline: bool = False) -> int:
    model, _ = pipeline.load_model(cfg["paths.checkpoint"])
    header, items = _load_corpus(cfg["paths.corpus"])
    splits = pipeline.make_splits(items, cfg)
    if not splits.test:
        raise ConfigError("test split is empty")
    reports = [pipeline.evaluate_split(splits.test, model, cfg, name="rank loss")]
    if with_baseline:
        baseline, _ = pipeline.baseline_square_loss(header, splits.train, cfg)
        reports.append(pipeline.evaluate_split(splits.test, baseline, cfg, name="square loss"))
    doc = {
        "config": cfg.as_dict(),
        "fingerprint": cfg.fingerprint(),
        "protocol": {
            "split": list(cfg.split_ratios()),
            "eval_pairs": cfg["eval.n_pairs"],
            "eval_delta": cfg["eval.delta"],
            "ground_truth": "human_score" if cfg["eval.use_human_score"] else "engagement",
        },
        "reports": [r.to_dict() for r in reports],
    }
    _write_text(cfg["paths.report"], json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(format_table(reports))
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    model, _ = pipeline.load_model(cfg["paths.checkpoint"])
    src = cfg["paths.input"] or cfg["paths.corpus"]
    if not Path(src).is_file():
        raise FileNotFoundError(f"input not found: {src}")
    items = [] if Path(src).stat().st_size == 0 else load_corpus(src)[1]
    scores = model.predict_batch(items)
    lines = "".join(
        json.dumps({"id": it.id, "score": s}, separators=(",", ":")) + "\n" for it, s in zip(items, scores)
    )
    out = cfg["paths.output"]
    if out:
        _write_text(out, lines)
    else:
        sys.stdout.write(lines)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "score": cmd_score}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmquality", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--corpus", help="corpus JSONL path")
    parser.add_argument("--checkpoint", help="model checkpoint path")
    parser.add_argument("--optimizer", choices=["adam", "sgd"])
    parser.add_argument("--lr", type=float)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--with-baseline", action="store_true",
                        help="eval: also train and report the square-loss baseline")
    parser.add_argument("--log", help="training log CSV path")
    parser.add_argument("--report", help="evaluation report JSON path")
    parser.add_argument("--input", help="score: items to score (defaults to --corpus)")
    parser.add_argument("--output", help="score: output JSONL (default stdout)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    flags = {
        "seed": args.seed,
        "paths.corpus": args.corpus,
        "paths.checkpoint": args.checkpoint,
        "ranker.optimizer": args.optimizer,
        "ranker.lr": args.lr,
        "ranker.total_iterations": args.iterations,
        "paths.log": args.log,
        "paths.report": args.report,
        "paths.input": args.input,
        "paths.output": args.output,
    }
    for key, value in flags.items():
        if value is not None:
            cfg.set(key, value)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _echo_config(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.with_baseline)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DegenerateVarianceError as exc:
        print(f"degenerate metric: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, CorpusError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PairingError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
