"""Command-line interface.

    bosc gen-data --preset s1-analog --seed 0
    bosc train    --config exp.yaml --mode bosc --seed 7
    bosc eval     --run runs/bosc-seed7 --scores all --fpr 0.05 --robustness blur=1.0
    bosc report   runs/bosc-seed7 runs/baseline-seed7

Exit codes: 0 success, 1 usage/config error, 2 runtime error.
Outputs default to $BOSC_OUTPUT_ROOT (or ./runs).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import runner
from .config import ConfigError, load_config
from .data import PRESETS

log = logging.getLogger("bosc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="seed for this command's stage")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="bosc", description="Backdoor-based open-set classification")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthesise a fingerprint dataset")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", help="dataset root directory")

    p = sub.add_parser("train", help="train a BOSC or baseline classifier")
    _common(p)
    p.add_argument("--mode", choices=["bosc", "baseline"])
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data", help="dataset manifest (default: synthesise from config)")
    p.add_argument("--triggers", help="trigger directory (default: procedural triggers)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--no-mixup", action="store_true", help="disable mixup augmentation")
    p.add_argument("--out", help="run directory")

    p = sub.add_parser("eval", help="evaluate a trained run")
    _common(p)
    p.add_argument("--run", required=True, help="run directory from `train`")
    p.add_argument("--checkpoint", help="checkpoint path (default: <run>/checkpoint.bosc)")
    p.add_argument("--data", help="dataset manifest (default: the run's config)")
    p.add_argument("--scores", help="msp|mls|mls-m|tls-m|cls-m|all (comma-separated allowed)")
    p.add_argument("--fpr", type=float, help="target FPR for threshold calibration")
    p.add_argument("--robustness", action="append", metavar="OP=PARAM",
                   help="also evaluate on processed test images, e.g. blur=1.0 (repeatable)")

    p = sub.add_parser("report", help="merge run summaries into a comparison table")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--processing", help="report an eval_<op> variant instead of the clean eval")
    p.add_argument("--out", help="write <out>.csv and <out>.md instead of printing")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args):
    o = {"dataset": {}, "train": {}, "inference": {}, "report": {}}
    cmd = args.command
    if getattr(args, "preset", None):
        o["dataset"]["preset"] = args.preset
    if getattr(args, "data", None):
        o["dataset"]["manifest"] = args.data
    if cmd == "gen-data":
        if args.seed is not None:
            o["dataset"]["seed"] = args.seed
        if args.out:
            o["dataset"]["root"] = args.out
    if cmd == "train":
        if args.seed is not None:
            o["train"]["seed"] = args.seed
        if args.mode:
            o["train"]["mode"] = args.mode
        if args.epochs is not None:
            o["train"]["epochs"] = args.epochs
        if args.lr is not None:
            o["train"]["lr"] = args.lr
        if args.no_mixup:
            o["train"]["mixup"] = False
        if args.triggers:
            o["triggers"] = {"dir": args.triggers}
        if args.out:
            o["report"]["output_dir"] = args.out
    if cmd == "eval":
        if args.scores:
            o["inference"]["scores"] = [args.scores]
        if args.fpr is not None:
            o["inference"]["target_fpr"] = args.fpr
        if args.robustness:
            o["inference"]["robustness"] = args.robustness
    return {k: v for k, v in o.items() if v}


def cmd_gen_data(args):
    cfg = load_config(args.config, _overrides(args))
    manifest = runner.gen_data(cfg)
    print(manifest.root / "manifest.json")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args))
    art = runner.run_train(cfg)
    print(art.run_dir)
    return EXIT_OK


def cmd_eval(args):
    run_dir = Path(args.run)
    config = args.config or (run_dir / "config.yaml")
    cfg = load_config(config, _overrides(args))
    art = runner.run_eval(cfg, run_dir, args.checkpoint)
    for key, summaries in art.summaries.items():
        label = "clean" if key is None else key
        for kind, s in summaries.items():
            print(f"{label:>20s} {kind.value:6s} acc={s.accuracy:.4f} au_roc={s.au_roc:.4f} "
                  f"eer={s.eer:.4f} au_oscr={s.au_oscr:.4f} nu={s.nu:.4g} "
                  f"tpr@fpr={s.tpr_at_fpr:.4f} ccr@fpr={s.ccr_at_fpr:.4f}")
    return EXIT_OK


def cmd_report(args):
    header, rows = runner.build_report(args.runs, args.processing)
    if not rows:
        print("no completed runs found", file=sys.stderr)
        return EXIT_RUNTIME
    csv_text = runner.report_to_csv(header, rows)
    md_text = runner.report_to_markdown(header, rows)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".csv").write_text(csv_text)
        out.with_suffix(".md").write_text(md_text)
        print(out.with_suffix(".csv"))
    else:
        print(md_text, end="")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"bosc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        # schema/config problems surface as ValueError subclasses
        print(f"bosc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_RUNTIME
    except OSError as exc:
        print(f"bosc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
