"""Command-line front end: train, eval, decompose, ablate.

Exit codes: 0 success, 1 validation failure (bad flags, bad config, bad
checkpoint contents), 2 numeric failure (non-finite values mid-run),
3 I/O failure (missing or unreadable paths).
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

from .errors import DomainError, GraphError, NumericError, ValidationError
from .metrics import format_aggregate
from .runner import (
    ABLATION_AXES,
    ABLATION_EPOCHS,
    SpiralTask,
    aggregate_seed_reports,
    ablate_run,
    decompose_run,
    eval_run,
    load_run_config,
    train_run,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; our contract reserves 2 for
    numeric failures, so route usage errors to the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train one or all seeds from a config")
    train.add_argument("--config", required=True, help="run config JSON")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--seed", type=int, default=None,
                       help="train only this seed instead of the config's list")

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True,
                    help="checkpoint file, run directory, or directory of seed_* runs")
    ev.add_argument("--config", default=None,
                    help="run config JSON; defaults to the snapshot beside the checkpoint")
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--split", default="test", choices=["train", "val", "test"])

    dec = sub.add_parser("decompose",
                         help="per-point aleatoric/epistemic split as CSV")
    dec.add_argument("--checkpoint", required=True)
    dec.add_argument("--config", default=None)
    dec.add_argument("--out", required=True)
    dec.add_argument("--split", default="test", choices=["train", "val", "test"])

    ab = sub.add_parser("ablate", help="sweep one hyperparameter axis")
    ab.add_argument("--config", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    ab.add_argument("--seed", type=int, default=None,
                    help="sweep only this seed instead of the config's list")
    ab.add_argument("--split", default="test", choices=["train", "val", "test"])
    return parser


def _resolve_checkpoints(path: str) -> list[str]:
    if os.path.isfile(path):
        return [path]
    if os.path.isdir(path):
        direct = os.path.join(path, "checkpoint.npz")
        if os.path.isfile(direct):
            return [direct]
        nested = sorted(glob.glob(os.path.join(path, "seed_*", "checkpoint.npz")))
        if nested:
            return nested
    raise FileNotFoundError(f"no checkpoint found at {path}")


def _config_for(ckpt_path: str, explicit):
    if explicit is not None:
        return load_run_config(explicit)
    snapshot = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), "config.json")
    if not os.path.isfile(snapshot):
        raise ValidationError(
            f"no --config given and no config.json beside {ckpt_path}")
    return load_run_config(snapshot)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    task = SpiralTask(cfg)
    for seed in seeds:
        run_dir = os.path.join(args.out, f"seed_{seed}")
        _, log = train_run(cfg, seed, run_dir, task=task)
        final = log[-1].total if log else float("nan")
        print(f"seed {seed}: steps={len(log)} final_total={final:.6f} "
              f"dir={run_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpts = _resolve_checkpoints(args.checkpoint)
    cfg = _config_for(ckpts[0], args.config)
    task = SpiralTask(cfg)
    results = []
    for ckpt in ckpts:
        run_name = os.path.basename(os.path.dirname(os.path.abspath(ckpt)))
        out_dir = (os.path.join(args.out, run_name) if len(ckpts) > 1
                   else args.out)
        res = eval_run(cfg, ckpt, out_dir, split=args.split, task=task)
        results.append(res)
        print(f"{run_name} [{args.split}] "
              f"mse={res.overall.mse:.6f} nll={res.overall.nll:.6f} "
              f"crps={res.overall.crps:.6f} ece={res.overall.ece:.6f} "
              f"auroc={res.overall.auroc:.6f} "
              f"mse_interp={res.mse_interp:.6f} mse_extrap={res.mse_extrap:.6f}")
    if len(results) > 1:
        agg_path = os.path.join(args.out, f"aggregate_{args.split}.json")
        agg = aggregate_seed_reports(results, agg_path)
        for name in ("overall", "interpolation", "extrapolation"):
            pairs = {k: (v["mean"], v["std"]) for k, v in agg[name].items()}
            print(f"[{name}, {len(results)} seeds]")
            print(format_aggregate(pairs))
    return 0


def cmd_decompose(args) -> int:
    ckpts = _resolve_checkpoints(args.checkpoint)
    cfg = _config_for(ckpts[0], args.config)
    task = SpiralTask(cfg)
    for ckpt in ckpts:
        run_name = os.path.basename(os.path.dirname(os.path.abspath(ckpt)))
        out_dir = (os.path.join(args.out, run_name) if len(ckpts) > 1
                   else args.out)
        path = decompose_run(cfg, ckpt, out_dir, split=args.split, task=task)
        print(path)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    path = ablate_run(cfg, args.axis, args.out, seeds=seeds,
                      epochs=ABLATION_EPOCHS, split=args.split)
    print(path)
    return 0


_COMMANDS = {"train": cmd_train, "eval": cmd_eval,
             "decompose": cmd_decompose, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericError, GraphError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
