"""Command line entry point: ``run``, ``suite``, ``presets list`` and ``version``."""

import argparse
import json
import sys

from . import __version__
from .densities import PRESETS
from .harness import (EXIT_CONFIG, KINDS, ConfigError, DimensionError, ExperimentConfig, ManifestError,
                      apply_overrides, run, suite)

OTHER_PRESETS = {
    "map (polar)": ["identity", "rotation:deg[,h1,...]", "scaled-rotation:s,deg"],
    "potential (submartingale)": ["zero", "abs1", "quadratic:b11,b12,..."],
    "region (gauge)": ["halfspace:u1,...,ud,a", "ballc:c1,...,cd,r"],
}


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _cmd_run(args):
    raw = apply_overrides(_load_json(args.config), args.set or [])
    cfg = ExperimentConfig.from_dict(raw)
    rec = run(cfg, write=not args.dry_run)
    for name, ok in rec.verdicts.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    if rec.error:
        print(f"error: {rec.error}", file=sys.stderr)
    if rec.directory:
        print(f"report: {rec.directory}")
    return rec.exit_code


def _cmd_suite(args):
    summary = suite(_load_json(args.manifest), write=not args.dry_run, workers=args.workers)
    print(summary.table())
    return summary.exit_code


def _cmd_presets(args):
    print("densities:")
    for name, desc in PRESETS.items():
        print(f"  {name:<14} {desc}")
    for group, items in OTHER_PRESETS.items():
        print(f"{group}:")
        for it in items:
            print(f"  {it}")
    print("experiment kinds:")
    print("  " + ", ".join(KINDS))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="wiener-ot", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config (JSON)")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a field, e.g. params.eps=2")
    r.add_argument("--dry-run", action="store_true", help="do not write report files")
    r.set_defaults(func=_cmd_run)
    s = sub.add_parser("suite", help="run every config of a manifest (JSON)")
    s.add_argument("manifest")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(func=_cmd_suite)
    pr = sub.add_parser("presets", help="list presets")
    pr.add_argument("action", choices=["list"])
    pr.set_defaults(func=_cmd_presets)
    v = sub.add_parser("version")
    v.set_defaults(func=lambda a: print(__version__) or 0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
