"""Command-line entry point.

Subcommands:

  pretrain   run the configured schedule, write metrics + checkpoints
  eval       score a checkpoint with knn or a linear probe
  sweep      grid over (pattern, alpha, k), one table row per cell
  gradcheck  finite-difference verification of all analytic gradients

Exit codes: 0 success, 1 generic failure (including a failed gradcheck),
2 configuration error, 3 data error, 4 numeric failure (non-finite loss).

Any config key is reachable with --set section.key=value; a few common
ones have sugar flags that win over --set.  SOFTNCE_LOG_DIR overrides
the output directory, and SOFTNCE_BACKEND (or --backend) picks the
kernel backend.
"""

import argparse
import logging
import sys

from . import backend as backend_mod
from . import run as runmod
from .config import load_config, run_name, to_yaml
from .errors import (
    ConfigError,
    DataError,
    LabelOutOfRange,
    MalformedFile,
    NumericFailure,
    SoftNCEError,
)
from .gradcheck import run_gradcheck

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="YAML config file (defaults apply when omitted)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="dotted config override, e.g. train.base_lr=0.05")
    p.add_argument("--out-dir", default=None, help="output directory (default: config train.out_dir)")
    p.add_argument("--backend", choices=("auto", "numba", "numpy"), default=None,
                   help="kernel backend (default: SOFTNCE_BACKEND or auto)")
    p.add_argument("--verbose", action="store_true", help="info-level progress logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softnce",
        description="Desk-scale momentum-contrast pretraining with a smoothed "
                    "top-k-weighted contrastive loss.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run pretraining")
    _add_common(p)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, default=None, help="override train.total_epochs")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--alpha", type=float, default=None, help="override smoothing.alpha")
    p.add_argument("--loss", choices=("softnce", "infonce"), default=None,
                   help="infonce is shorthand for a static alpha of 1")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config and exit")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("knn", "linear"), default="knn")

    p = sub.add_parser("sweep", help="ablation grid over (pattern, alpha, k)")
    _add_common(p)
    p.add_argument("--alphas", default="0.8", help="comma list, e.g. 0.8,0.95")
    p.add_argument("--ks", default="20", help="comma list, e.g. 5,10,20,30")
    p.add_argument("--patterns", default="linear_decay",
                   help="comma list from {average, linear_decay}")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--backend", choices=("auto", "numba", "numpy"), default=None,
                   help="kernel backend (default: SOFTNCE_BACKEND or auto)")
    p.add_argument("--verbose", action="store_true", help="info-level progress logging")
    return parser


def _resolve_config(args):
    overrides = list(args.overrides)
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.total_epochs={args.epochs}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "alpha", None) is not None:
        overrides.append(f"smoothing.alpha={args.alpha}")
    if getattr(args, "loss", None) == "infonce":
        overrides.append("smoothing.alpha=1.0")
        overrides.append("smoothing.schedule=static")
    return load_config(args.config, overrides)


def cmd_pretrain(args) -> int:
    config = _resolve_config(args)
    if args.print_config:
        print(to_yaml(config), end="")
        return EXIT_OK
    result = runmod.pretrain(config, resume=args.resume, out_dir=args.out_dir)
    last = result.epoch_losses[-1] if result.epoch_losses else float("nan")
    print(f"run {result.run_id}: {len(result.epoch_losses)} epochs, "
          f"final mean loss {last:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    acc = runmod.evaluate(config, args.checkpoint, args.protocol, out_dir=args.out_dir)
    print(f"{args.protocol} accuracy: {acc:.4f}")
    return EXIT_OK


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    patterns = [x.strip() for x in args.patterns.split(",") if x.strip()]
    rows = runmod.sweep(config, _floats(args.alphas), _ints(args.ks), patterns,
                        out_dir=args.out_dir)
    print(runmod.sweep_table(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, trials=args.trials,
                           corrupt=args.corrupt, tolerance=args.tolerance)
    by_kind = {}
    for case in report.cases:
        by_kind.setdefault(case.kind, []).append(case.rel_error)
    for kind in ("info", "soft", "jacobian", "chain"):
        if kind in by_kind:
            errs = by_kind[kind]
            print(f"  {kind:<9} {len(errs):>4} cases   max rel err {max(errs):.3e}")
    worst = report.worst
    verdict = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {verdict}: {report.trials} trials, max rel err "
          f"{report.max_rel_error:.3e} (tolerance {report.tolerance:.0e}, "
          f"worst case {worst.kind}#{worst.index}, {report.elapsed:.1f}s)")
    return EXIT_OK if report.passed else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "pretrain": cmd_pretrain,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "gradcheck": cmd_gradcheck,
    }
    try:
        # resolve the backend up front so a typo in the flag or the
        # environment fails loudly instead of surfacing at first dispatch
        backend_mod.set_backend(getattr(args, "backend", None))
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MalformedFile, LabelOutOfRange, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SoftNCEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
