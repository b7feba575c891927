"""Command-line front end.

Subcommands map one-to-one onto pipeline stages; every run is driven by a
JSON config (defaults ship built in) plus a few flags. Environment variables
are never consulted. Exit codes: 0 success, 1 unexpected error, 3 malformed
config, 4 missing input artifact, 5 checkpoint/architecture mismatch,
6 reproduce-claim criteria not met.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .data import DatasetError
from .model import ArchitectureMismatch
from . import experiment as exp

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BAD_CONFIG = 3
EXIT_MISSING_INPUT = 4
EXIT_BAD_CHECKPOINT = 5
EXIT_CLAIM_FAILED = 6


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lffs",
        description=(
            "Robust few-shot learning via low-frequency self-distillation: "
            "data generation, two-stage training, transductive finetuning, "
            "spectral-ensemble evaluation, and a PGD/FGSM harness."
        ),
        epilog=exp.config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", metavar="PATH", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override every seeds.* value")
    parser.add_argument("--workers", type=int, help="episode worker threads")
    parser.add_argument(
        "--precision", type=int, choices=(32, 64), help="float width"
    )
    parser.add_argument("--out", metavar="DIR", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="generate and save the synthetic datasets")
    sub.add_parser("pretrain", help="train the teacher on base classes")
    sub.add_parser("distill", help="distill the student under the radius curriculum")
    sub.add_parser("finetune", help="finetune one sampled episode and save it")
    sub.add_parser("eval", help="clean + robust episode evaluation (full pipeline)")
    atk = sub.add_parser("attack-eval", help="robust accuracy on one episode")
    atk.add_argument(
        "--dump-adv",
        action="store_true",
        help="persist adversarial queries as an FSDS file",
    )
    rep = sub.add_parser(
        "reproduce-claim",
        help="run the end-to-end directional experiment and print PASS/FAIL",
    )
    rep.add_argument(
        "--ladder",
        action="store_true",
        help="also run the four-configuration ablation ladder (slower)",
    )
    return parser


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.precision is not None:
        cfg["precision"] = args.precision
    if args.seed is not None:
        cfg["seeds"] = {k: args.seed for k in cfg["seeds"]}
    return cfg


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def _run(args: argparse.Namespace) -> int:
    cfg = exp.load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    exp.apply_precision(cfg)

    if args.command == "gen-data":
        base, novel = exp.run_gen_data(cfg)
        print(
            f"wrote {exp.paths_for(cfg).base_data} ({base.size} samples) and "
            f"{exp.paths_for(cfg).novel_data} ({novel.size} samples)"
        )
    elif args.command == "pretrain":
        seconds = exp.run_pretrain_teacher(cfg)
        print(f"teacher saved to {exp.paths_for(cfg).teacher} ({seconds:.1f}s)")
    elif args.command == "distill":
        seconds = exp.run_distill(cfg)
        print(f"student saved to {exp.paths_for(cfg).student} ({seconds:.1f}s)")
    elif args.command == "finetune":
        exp.run_finetune_once(cfg)
        print(f"episode model saved under {cfg['out_dir']}")
    elif args.command == "eval":
        report = exp.run_eval(cfg)
        print(
            f"clean {_pct(report.clean_mean)} (+-{_pct(report.clean_ci)})  "
            f"robust {_pct(report.robust_mean)} (+-{_pct(report.robust_ci)})  "
            f"over {len(report.rows)} episodes"
        )
    elif args.command == "attack-eval":
        result = exp.run_attack_eval(cfg, dump_adversarial=args.dump_adv)
        print(
            f"clean {_pct(result['clean_acc'])}  robust {_pct(result['robust_acc'])}  "
            f"(attack: {result['attack']['iters']}-step PGD, "
            f"eps={result['attack']['epsilon']:.4f})"
        )
    elif args.command == "reproduce-claim":
        payload = exp.run_claim(cfg)
        ok = True
        for name, passed in payload["criteria"].items():
            print(f"{'PASS' if passed else 'FAIL'}  {name}")
            ok = ok and passed
        print(
            f"  defended: clean {_pct(payload['defended']['clean_mean'])} "
            f"robust {_pct(payload['defended']['robust_mean'])}"
        )
        print(
            f"  vanilla:  clean {_pct(payload['vanilla']['clean_mean'])} "
            f"robust {_pct(payload['vanilla']['robust_mean'])}"
        )
        if args.ladder:
            ladder = exp.run_ladder(cfg)
            status = "PASS" if ladder["robust_nondecreasing"] else "FAIL"
            print(f"{status}  ladder_robust_nondecreasing")
            for row in ladder["rows"]:
                print(
                    f"  {row['config']:<18} clean {_pct(row['clean_mean'])} "
                    f"robust {_pct(row['robust_mean'])}"
                )
            ok = ok and ladder["robust_nondecreasing"]
        if not ok:
            return EXIT_CLAIM_FAILED
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except exp.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except exp.MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (CheckpointError, ArchitectureMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
