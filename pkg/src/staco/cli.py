"""Command-line entry point: ``staco {run,ablate-batch,ablate-gamma,oracle,eval}``.

Exit codes: 0 success, 1 runtime failure (including a failed oracle),
2 configuration or input error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, kernels
from .config import SCHEMA, load_config
from .core import ConfigError
from .data import DataError
from .metrics import roc_to_csv

log = logging.getLogger("staco")


def _values(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seeds(text: str):
    try:
        seeds = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _config_help() -> str:
    lines = ["config keys (TOML sections):"]
    for sec, keys in SCHEMA.items():
        lines.append(f"  [{sec}] " + ", ".join(keys))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="staco", description="Two-way partial AUC training and evaluation.",
                                epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="TOML experiment file")
        sp.add_argument("--out", help="output directory (default: run.out, then ./runs)")
        sp.add_argument("--seed", type=_seeds, help="comma-separated seeds overriding run.seeds")
        sp.add_argument("--quiet", action="store_true", help="only print warnings and errors")
        return sp

    common(sub.add_parser("run", help="train once per seed, write traces and summary"))
    sp = common(sub.add_parser("ablate-batch", help="iterations to target objective vs negative batch size"))
    sp.add_argument("--values", type=_values, help="comma-separated B values")
    sp.add_argument("--target", type=float, help="absolute exact-objective target")
    sp = common(sub.add_parser("ablate-gamma", help="STACO2 final objective and TPAUC vs gamma"))
    sp.add_argument("--values", type=_values, help="comma-separated gamma values")
    sp = common(sub.add_parser("oracle", help="numerical cross-checks on built-in instances"), needs_config=False)
    sp.add_argument("names", nargs="*", help="subset of oracles to run")
    sp.add_argument("--perturb-subgrad", type=float, default=0.0, help=argparse.SUPPRESS)
    sp = common(sub.add_parser("eval", help="metrics of a saved parameter snapshot"))
    sp.add_argument("--params", required=True, help="params_<seed>.json from a run")
    sp.add_argument("--split", choices=("test", "train"), default="test")
    return p


def _out_dir(args, ec) -> Path:
    if args.out:
        return Path(args.out)
    if ec is not None and ec.out:
        return ec.resolve(ec.out)
    return Path("runs")


def _dispatch(args) -> int:
    if args.cmd == "oracle":
        from .oracles import run_oracles
        try:
            results = run_oracles(args.names, perturb_subgrad=args.perturb_subgrad)
        except KeyError as e:
            raise ConfigError(str(e.args[0])) from None
        for r in results:
            print(r.line())
        return 0 if all(r.passed for r in results) else 1

    ec = load_config(args.config)
    seeds = args.seed
    out = _out_dir(args, ec)
    log.info("kernel backend: %s", kernels.BACKEND)
    if args.cmd == "run":
        summary = harness.run_experiment(ec, out, seeds=seeds)
        for k, v in sorted(summary["metrics"].items()):
            log.info("%s: %.4f (%.4f)", k, v["mean"], v["std"])
        print(out / "summary.json")
    elif args.cmd == "ablate-batch":
        vals = [int(v) for v in args.values] if args.values else None
        harness.ablate_batch(ec, out, vals, seeds=seeds, target=args.target)
        print(out / "ablate_batch.csv")
    elif args.cmd == "ablate-gamma":
        harness.ablate_gamma(ec, out, args.values, seeds=seeds)
        print(out / "ablate_gamma.csv")
    elif args.cmd == "eval":
        rep = harness.evaluate_params(ec, args.params, args.split)
        text = rep.to_json()
        if args.out:
            harness.atomic_write(Path(args.out) / "eval.json", text + "\n")
            harness.atomic_write(Path(args.out) / "roc.csv", roc_to_csv(rep.roc))
        print(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _dispatch(args)
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("run failed")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
