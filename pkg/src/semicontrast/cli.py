"""Command-line entry point: ``semicontrast <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime failure.
Failures print one line ``error: <kind>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch

from .config import ConfigError, ExperimentConfig, config_from_dict, echo_config, parse_config, resolve_output_dir

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

COMMANDS = ("gen-data", "pretrain-global", "pretrain-local", "finetune", "evaluate",
            "run-matrix", "verify-losses", "bench-complexity", "plot")

logger = logging.getLogger("semicontrast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. losses.tau=0.2 (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set experiment.seed=N")
    p.add_argument("--out", type=Path, help="output directory (default: experiment.output_dir)")
    p.add_argument("-v", "--verbose", action="store_true")


def _cell_args(p: argparse.ArgumentParser, init: bool) -> None:
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--fraction", type=float, help="label fraction (default: first configured)")
    if init:
        p.add_argument("--init", type=Path, help="checkpoint to start from (default: fresh network)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semicontrast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")

    p = sub.add_parser("gen-data", help="write the configured synthetic corpus as array directories")
    _common(p)

    p = sub.add_parser("pretrain-global", help="global contrastive pre-training for one fold")
    _common(p)
    _cell_args(p, init=False)

    p = sub.add_parser("pretrain-local", help="local contrastive pre-training for one fold")
    _common(p)
    _cell_args(p, init=True)
    p.add_argument("--strategy", choices=("full", "stride", "block", "self"), default="block")

    p = sub.add_parser("finetune", help="supervised fine-tuning on the labeled subset")
    _common(p)
    _cell_args(p, init=True)

    p = sub.add_parser("evaluate", help="test-split Dice of a checkpoint")
    _common(p)
    _cell_args(p, init=False)
    p.add_argument("checkpoint", type=Path)

    p = sub.add_parser("run-matrix", help="run or resume the variant x fraction x fold matrix")
    _common(p)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("verify-losses", help="oracle, gradient and invariance checks of the losses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=100, help="random instances for the oracle check")
    p.add_argument("--gradient-instances", type=int, default=20)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("bench-complexity", help="interaction counts and wall time per strategy")
    p.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 160])
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--block", type=int, default=16)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="also write the rows to this TSV file")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("plot", help="render figures for a finished report directory")
    p.add_argument("report_dir", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if args.config is None:
        return config_from_dict({}, overrides)
    if not args.config.exists():
        raise ConfigError("--config", f"file {args.config} not found")
    return parse_config(args.config, overrides)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out if args.out is not None else resolve_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fraction(args, cfg: ExperimentConfig) -> float:
    return args.fraction if args.fraction is not None else cfg.experiment.label_fractions[0]


def _start_network(ws, args):
    from .model import load_checkpoint
    if getattr(args, "init", None) is not None:
        return load_checkpoint(args.init, ws.net_cfg)
    return ws.fresh_network(args.fold)


def cmd_gen_data(args, cfg) -> int:
    from .data import write_corpus
    from .experiment import load_corpus
    out = _out_dir(args, cfg)
    echo_config(cfg, out)
    corpus = load_corpus(cfg)
    root = write_corpus(corpus, out / "corpus")
    print(f"wrote {len(corpus)} volumes to {root}")
    return EXIT_OK


def _stage_command(args, cfg, stage: str) -> int:
    from .experiment import Workspace, derive_seed
    from .model import save_checkpoint
    from .training import EpochLog, finetune, pretrain_global, pretrain_local, stage_config

    out = _out_dir(args, cfg)
    echo_config(cfg, out)
    ws = Workspace(cfg, out)
    fraction = _fraction(args, cfg)
    splits = ws.splits(args.fold, fraction)
    seed = derive_seed(ws.seed, stage, args.fold)
    if stage == "global":
        net = pretrain_global(ws.fresh_network(args.fold), splits, stage_config(cfg, "global"), ws.store,
                              seed, EpochLog(out / "global_log.tsv"))
        name = "global.pt"
    elif stage == "local":
        kind = "local_selfsup" if args.strategy == "self" else "local_supervised"
        net = pretrain_local(_start_network(ws, args), splits, stage_config(cfg, kind, args.strategy),
                             ws.store, seed, EpochLog(out / "local_log.tsv"))
        name = "local.pt"
    else:
        net = finetune(_start_network(ws, args), splits, stage_config(cfg, "finetune"), ws.store,
                       seed, EpochLog(out / "finetune_log.tsv"))
        name = "finetuned.pt"
    digest = save_checkpoint(net, out / name)
    print(f"{net.stage_tag}\t{out / name}\t{digest}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    from .experiment import Workspace
    from .model import load_checkpoint
    from .training import evaluate_volumes

    ws = Workspace(cfg, args.out)
    net = load_checkpoint(args.checkpoint, ws.net_cfg)
    splits = ws.splits(args.fold, _fraction(args, cfg))
    per_class, mean, _ = evaluate_volumes(net, ws.store, splits.test, cfg.experiment.eval_batch_size)
    cells = ",".join(f"{x:.6f}" for x in per_class)
    print(f"checkpoint\tfold\tmean_dice\tper_class_dice\n{args.checkpoint}\t{args.fold}\t{mean:.6f}\t{cells}")
    return EXIT_OK


def cmd_run_matrix(args, cfg) -> int:
    from .eval.report import render_table
    from .experiment import run_experiment
    out = _out_dir(args, cfg)
    report = run_experiment(cfg, out, plots=not args.no_plots)
    sys.stdout.write(render_table(report))
    failed = [c for c in report.cells.values() if c.status != "ok"]
    if failed:
        print(f"error: runtime: {len(failed)} cell(s) failed; see {out}/cells", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_verify_losses(args) -> int:
    from .losses.verify import run_battery
    results = run_battery(args.seed, args.instances, args.gradient_instances)
    for r in results:
        print(("PASS " if r.ok else "FAIL ") + r.summary())
        for label, err in r.failures[:5]:
            print(f"  failed {label}: err {err:.3g}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


def cmd_bench(args) -> int:
    from .losses.complexity import BENCH_HEADER, bench_complexity
    from .losses.verify import quiet_drops
    with quiet_drops():
        rows = bench_complexity(tuple(args.sizes), args.stride, args.block, args.channels, args.seed,
                                args.repeats)
    text = BENCH_HEADER + "\n" + "".join(r.tsv() + "\n" for r in rows)
    sys.stdout.write(text)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import emit_plots
    for path in emit_plots(args.report_dir):
        print(path)
    missing = args.report_dir / "figures" / "MISSING.txt"
    if missing.exists():
        print(f"warning: some artifacts were missing, see {missing}", file=sys.stderr)
    return EXIT_OK


def dispatch(args) -> int:
    if args.command == "verify-losses":
        return cmd_verify_losses(args)
    if args.command == "bench-complexity":
        return cmd_bench(args)
    if args.command == "plot":
        return cmd_plot(args)
    cfg = load_config(args)
    torch.set_num_threads(cfg.training.threads)
    if args.command == "gen-data":
        return cmd_gen_data(args, cfg)
    if args.command == "pretrain-global":
        return _stage_command(args, cfg, "global")
    if args.command == "pretrain-local":
        return _stage_command(args, cfg, "local")
    if args.command == "finetune":
        return _stage_command(args, cfg, "finetune")
    if args.command == "evaluate":
        return cmd_evaluate(args, cfg)
    if args.command == "run-matrix":
        return cmd_run_matrix(args, cfg)
    raise UsageError(f"unknown command {args.command!r}")


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing command; expected one of {', '.join(COMMANDS)}")
    except UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: config: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        if args.verbose:
            logger.exception("command failed")
        print(f"error: runtime: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
