"""Command line entry point: ``brclab {train,ablate,transfer,diag}``."""

from __future__ import annotations

import argparse
import json
import sys

from brclab.harness.checkpoint import CheckpointError
from brclab.harness.config import PROTOCOLS, ConfigError, load_config


def _cmd_train(args) -> int:
    from brclab.harness.runner import train_all

    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    results = train_all(cfg, out_dir=args.out, seeds=seeds, resume=args.resume, stop_at=args.stop_at)
    for r in results:
        print(json.dumps({k: r[k] for k in ("seed", "iteration", "mean_score", "gradient_steps", "checkpoint")}))
    return 0


def _cmd_ablate(args) -> int:
    from brclab.harness.ablation import run_ablation

    cfg = load_config(args.config)
    res = run_ablation(cfg, out_dir=args.out)
    for p, v in res["phi"].items():
        print(f"{p}: phi={float(v):.6g} share={res['shares'][p]:.4g}")
    print(f"efficiency exact: {res['efficient']}")
    return 0


def _cmd_transfer(args) -> int:
    from brclab.harness.transfer_run import run_transfer

    cfg = load_config(args.config)
    rows = run_transfer(cfg, args.source, args.protocol, out_dir=args.out)
    for r in rows:
        print(json.dumps({k: r[k] for k in ("protocol", "target", "seed", "final_score", "steps_to_threshold",
                                            "consumed_steps")}))
    return 0


def _cmd_diag(args) -> int:
    from brclab.harness.diag import run_diag

    res = run_diag(args.metrics, out_dir=args.out)
    print(f"relvar rows: {len(res['relvar'])}, conflict rows: {len(res['conflict'])}, "
          f"summary rows: {len(res['summary'])} -> {res['dir']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brclab", description="Desk-scale multi-task RL experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every seed of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--resume", help="checkpoint to continue from (single seed)")
    p.add_argument("--stop-at", type=int, dest="stop_at", help="stop at this iteration and checkpoint")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("ablate", help="train all SQ/CE/TE variants and compute Shapley values")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("transfer", help="adapt a checkpoint to held-out tasks")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True, help="source checkpoint")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_transfer)

    p = sub.add_parser("diag", help="dispersion, conflict and summary tables from a metrics stream")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
