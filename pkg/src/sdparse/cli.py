"""Command-line entry point.

Subcommands: ``train``, ``parse``, ``eval``, ``variants``, ``gradcheck``,
``validate``. Every subcommand is deterministic given ``--seed`` (the
``SDP_SEED`` environment variable is the fallback). Machine-readable results
go to stdout, diagnostics to stderr.

Exit codes: 0 success, 64 usage errors, 1 data/parse errors, 2 config or
checkpoint errors, 3 training divergence; ``gradcheck`` exits 1 when any
operation misses the tolerance. ``validate`` reports cycles without
rejecting them (exit 0 for readable input).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .data import SdpParseError, find_cycle, read_sdp, write_sdp
from .diagnostics import TOLERANCE, run_gradient_suite
from .evaluation import AlignmentError, score_graphs
from .layers import PretrainedEmbeddings
from .model import ConfigError, ModelConfig, load_model, parse_config_values
from .study import load_manifest, run_study
from .training import TrainingDiverged, train

USAGE_EXIT = 64


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("SDP_SEED", "0"))


def _load_config(args) -> ModelConfig:
    config = ModelConfig.from_file(args.config) if args.config else ModelConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if getattr(args, "use_char", False):
        overrides["use_char"] = "true"
    if getattr(args, "use_lemma", False):
        overrides["use_lemma"] = "true"
    if overrides:
        config = config.replaced(**parse_config_values(overrides))
    return config


def cmd_train(args) -> int:
    seed = _seed(args)
    config = _load_config(args)
    train_graphs = read_sdp(args.train)
    dev_graphs = read_sdp(args.dev) if args.dev else []
    pretrained = None
    if args.glove:
        import numpy as np

        pretrained = PretrainedEmbeddings.from_file(
            args.glove, np.random.default_rng(np.random.SeedSequence([seed, 0x910E]))
        )
    result = train(train_graphs, dev_graphs, config, seed=seed, out_dir=args.out, pretrained=pretrained)
    print(f"steps={result.steps}")
    print(f"stop_reason={result.stop_reason}")
    if result.best_lf1 is not None:
        print(f"best_dev_LF={result.best_lf1:.4f}")
    print(f"model_dir={args.out}")
    return 0


def cmd_parse(args) -> int:
    parser = load_model(args.model)
    graphs = read_sdp(args.input)
    predictions = [parser.parse(g) for g in graphs]
    write_sdp(predictions, args.output)
    print(f"parsed {len(predictions)} sentences -> {args.output}")
    return 0


def cmd_eval(args) -> int:
    gold = read_sdp(args.gold)
    pred = read_sdp(args.pred)
    report = score_graphs(gold, pred, include_tops=not args.no_tops)
    print(report.table(), file=sys.stderr)
    print(report.key_values())
    return 0


def cmd_variants(args) -> int:
    seed = _seed(args)
    manifest = load_manifest(args.manifest)
    config = ModelConfig().replaced(**manifest["config_overrides"])
    train_graphs = read_sdp(args.train)
    dev_graphs = read_sdp(args.dev) if args.dev else train_graphs
    seeds = manifest["seeds"]
    if seeds is None:
        seeds = [seed + i + 1 for i in range(manifest["replicas"])]
    study = run_study(
        config,
        manifest["variants"],
        manifest["replicas"],
        train_graphs,
        dev_graphs,
        seeds=seeds,
        step_budget=manifest["steps"],
        jobs=args.jobs,
        tail=manifest["tail"],
    )
    results = study.results_table()
    comparisons = study.comparison_table()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.tsv").write_text(results, encoding="utf-8")
        (out / "comparisons.tsv").write_text(comparisons, encoding="utf-8")
    print(results, end="")
    print(comparisons, end="")
    for name in study.excluded:
        print(f"warning: {name} had fewer than two successful replicas", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=_seed(args))
    failed = False
    for name, err in results:
        status = "ok" if err < TOLERANCE else "FAIL"
        failed = failed or err >= TOLERANCE
        print(f"{name}\tmax_rel_err={err:.3e}\t{status}")
    print(f"tolerance={TOLERANCE:g}")
    return 1 if failed else 0


def cmd_validate(args) -> int:
    graphs = read_sdp(args.input)
    cycles = 0
    for i, g in enumerate(graphs):
        label = g.sent_id if g.sent_id is not None else str(i)
        cycle = find_cycle(g)
        if cycle is None:
            print(f"#{label}: valid DAG")
        else:
            cycles += 1
            path = " -> ".join(str(t) for t in cycle)
            print(f"#{label}: cycle {path}")
    print(f"checked {len(graphs)} graphs, {cycles} with cycles", file=sys.stderr)
    return 0


def build_arg_parser() -> _ArgumentParser:
    top = _ArgumentParser(prog="sdparse", description="semantic dependency graph parser")
    sub = top.add_subparsers(dest="command", required=True)

    def seed_opt(p):
        p.add_argument("--seed", type=int, default=None, help="random seed (default: $SDP_SEED or 0)")

    p = sub.add_parser("train", help="train a parser")
    p.add_argument("--train", required=True, help="training corpus (.sdp)")
    p.add_argument("--dev", default=None, help="validation corpus (.sdp); omit to disable early stopping")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--glove", default=None, help="pretrained embedding text file")
    p.add_argument("--use-char", action="store_true", help="enable the character-level channel")
    p.add_argument("--use-lemma", action="store_true", help="enable the lemma channel")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    seed_opt(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse sentences with a trained model")
    p.add_argument("--model", required=True, help="model directory from train")
    p.add_argument("--input", required=True, help="input .sdp file (annotations ignored)")
    p.add_argument("--output", required=True, help="output .sdp file")
    seed_opt(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score predictions against gold graphs")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--no-tops", action="store_true", help="exclude top nodes from the edge metrics")
    seed_opt(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("variants", help="run the architecture-variation study")
    p.add_argument("--manifest", required=True, help="study manifest file")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None, help="defaults to the training corpus")
    p.add_argument("--out", default=None, help="directory for results.tsv / comparisons.tsv")
    p.add_argument("--jobs", type=int, default=1, help="parallel training workers")
    seed_opt(p)
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    seed_opt(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("validate", help="check graphs for cycles")
    p.add_argument("--input", required=True)
    seed_opt(p)
    p.set_defaults(func=cmd_validate)
    return top


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        return args.func(args)
    except SdpParseError as exc:
        print(f"sdparse: input error: {exc}", file=sys.stderr)
        return 1
    except AlignmentError as exc:
        print(f"sdparse: input error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"sdparse: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, CheckpointError) as exc:
        print(f"sdparse: config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"sdparse: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
