"""Command line: ``lprlab run``, ``lprlab sweep`` and ``lprlab verify``.

Run flags mirror the fields of :class:`~lprlab.harness.RunConfig`. A JSON
file given with ``--config`` supplies base values; explicit flags win.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness, verify


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _capacity(text):
    if str(text).lower() in ("inf", "unlimited", "none"):
        return "inf"
    return int(text)


def _seeds(text):
    """``3`` -> [3]; ``0-9`` -> 0..9; ``1,4,7`` -> [1, 4, 7]."""
    out = []
    for part in str(text).split(","):
        if "-" in part.strip()[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _field_type(f):
    if f.name == "hidden":
        return _int_list
    if f.name == "capacity":
        return _capacity
    if isinstance(f.default, bool):
        return _bool
    if isinstance(f.default, int):
        return int
    if isinstance(f.default, float):
        return float
    return str


def add_config_flags(parser):
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    for f in dataclasses.fields(harness.RunConfig):
        parser.add_argument(f"--{f.name}", dest=f.name, type=_field_type(f),
                            default=argparse.SUPPRESS, help=f"default: {f.default}")


def config_from_args(args):
    data = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data.update(json.load(fh))
    names = {f.name for f in dataclasses.fields(harness.RunConfig)}
    data.update({k: v for k, v in vars(args).items() if k in names})
    return harness.RunConfig.from_dict(data)


def _parse_grid(items):
    grid = {}
    types = {f.name: _field_type(f) for f in dataclasses.fields(harness.RunConfig)}
    for item in items or []:
        key, _, values = item.partition("=")
        if key not in types or not values:
            raise harness.ConfigError(f"bad grid entry {item!r}, expected field=v1,v2")
        grid[key] = [types[key](v) for v in values.split(",")]
    return grid


def cmd_run(args):
    config = config_from_args(args)
    if not config.output:
        config = config.replace(output=harness.default_output_dir())
    result = harness.run(config)
    print(json.dumps(result.summary, sort_keys=True))
    print(f"wrote {Path(config.output) / 'log.jsonl'}", file=sys.stderr)
    return 0


def cmd_sweep(args):
    base = config_from_args(args)
    configs = harness.expand_grid(base, _parse_grid(args.grid))
    seeds = _seeds(args.seeds) if args.seeds else None
    output = base.output or harness.default_output_dir()
    rows, table = harness.sweep(configs, seeds=seeds, workers=args.workers, output=output)
    for agg in table:
        cells = " ".join(f"{m}={agg[m]:.4f}±{agg[m + '_se']:.4f}"
                         for m in harness.CELL_METRICS if m in agg)
        print(f"cell {agg['cell']} {agg['method']} omega0={agg['omega0']} eta={agg['eta']} "
              f"seeds={agg['n_seeds']} failed={agg['n_failed']} {cells}")
    print(f"wrote {Path(output) / 'summary.csv'}", file=sys.stderr)
    return 1 if any("error" in r for r in rows) else 0


def cmd_verify(args):
    return verify.main(args.only)


def build_parser():
    parser = argparse.ArgumentParser(prog="lprlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one configuration on one stream")
    add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid of configurations over seeds")
    add_config_flags(p_sweep)
    p_sweep.add_argument("--grid", action="append", metavar="FIELD=V1,V2",
                         help="sweep a field over values; repeat for a Cartesian product")
    p_sweep.add_argument("--seeds", help="e.g. 0-9 or 1,3,5")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the algebraic and statistical self-checks")
    p_verify.add_argument("--only", nargs="*", help="criterion numbers or check names")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
