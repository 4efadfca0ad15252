"""Command-line entry points.

Subcommands: train, reinit-sweep, active-freq, grad-profile, bench-backward.
Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

import argparse
import sys

from lwsgd import runner
from lwsgd.config import load_config
from lwsgd.errors import ConfigError, FormatError, RunAborted


def _add_common(sub):
    sub.add_argument("config", help="path to a key = value config file")
    sub.add_argument("--out-dir", default=None, help="directory for CSV/JSON results")
    sub.add_argument("--seeds", default=None,
                     help="comma-separated seed list overriding the config")
    sub.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")


def build_parser():
    ap = argparse.ArgumentParser(prog="lwsgd",
                                 description="layer-wise sparse training experiments")
    subs = ap.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "train with the configured layer-selection policy"),
        ("reinit-sweep", "train, then sweep active/lazy re-initialization"),
        ("active-freq", "train with per-epoch full-batch gradient tracking"),
        ("grad-profile", "train and dump sorted gradient-magnitude profiles"),
        ("bench-backward", "time the policy's backward pass against full training"),
    ]:
        _add_common(subs.add_parser(name, help=help_text))
    return ap


def _parse_seeds(text):
    if text is None:
        return None
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds expects integers, got {text!r}") from exc


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.override,
                          seeds=_parse_seeds(args.seeds))
    except (ConfigError, FormatError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "train":
            records = runner.run_experiment(cfg, out_dir=args.out_dir)
            for rec in records:
                print(f"seed {rec.seed}: test_acc={rec.final_test_acc:.4f} "
                      f"backward={rec.total_backward_time_s:.2f}s")
        elif args.command == "reinit-sweep":
            rows = runner.run_reinit_experiment(cfg, out_dir=args.out_dir)
            print(f"reinit sweep: {len(rows)} rows "
                  f"({len(cfg.reinit_grid)} grid points x 2 modes x {len(cfg.seeds)} seeds)")
        elif args.command == "active-freq":
            records = runner.run_frequency_experiment(cfg, out_dir=args.out_dir)
            for rec in records:
                print(f"seed {rec.seed}: {len(rec.epochs)} epochs tracked")
        elif args.command == "grad-profile":
            if not cfg.profile_epochs:
                raise ConfigError("grad-profile needs analysis.profile_epochs")
            records = runner.run_experiment(cfg, out_dir=args.out_dir)
            total = sum(len(rec.extras.get("profiles", [])) for rec in records)
            print(f"wrote {total} gradient profiles")
        elif args.command == "bench-backward":
            result = runner.run_backward_bench(cfg, out_dir=args.out_dir)
            print(f"policy backward: {result['policy_backward_time_s']:.2f}s, "
                  f"full backward: {result['full_backward_time_s']:.2f}s, "
                  f"ratio: {result['time_ratio_vs_full']:.3f}")
    except (ConfigError, FormatError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RunAborted as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
