"""Command-line entry point: ``ipva <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import logging
import sys

from . import config, experiments
from .errors import ConfigError, IpvaError, NumericalError

log = logging.getLogger("ipva")

# subcommand -> experiments it may run (first one is the default)
SUBCOMMANDS = {
    "simulate": ("simulate", "stationarity"),
    "optimize": ("pareto",),
    "linearize": ("sl-accuracy",),
    "mpc": ("mpc-energy", "mpc-comfort", "mpc-mixed", "timing"),
    "observe": ("observer",),
    "psd": ("psd",),
}

# flags that mirror the most used config keys
COMMON_FLAGS = ("seeds", "duration", "preset", "ce", "Rp", "r", "alpha1", "alpha2", "previews",
                "controllers")


def _add_common(sp, experiments_allowed):
    sp.add_argument("--config", help="flat key = value file")
    sp.add_argument("--out", help="artifact directory (default out/<experiment>)")
    if len(experiments_allowed) > 1:
        sp.add_argument("--experiment", choices=experiments_allowed, help="which experiment to run")
    for key in COMMON_FLAGS:
        sp.add_argument(f"--{key}", dest=f"flag_{key}", metavar="VALUE")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key; repeatable")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes for independent seeds")


def build_parser():
    ap = argparse.ArgumentParser(prog="ipva", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, allowed in SUBCOMMANDS.items():
        _add_common(sub.add_parser(name, help=f"run {' / '.join(allowed)}"), allowed)
    run = sub.add_parser("run", help="run the experiment named in a config or manifest file")
    run.add_argument("config")
    run.add_argument("--out")
    run.add_argument("--jobs", type=int, default=1)
    rep = sub.add_parser("report", help="render figures from an artifact directory")
    rep.add_argument("directory")
    rep.add_argument("--format", default="png", choices=("png", "pdf", "svg"))
    return ap


def _values(args):
    values = config.load(args.config) if getattr(args, "config", None) else {}
    for key in COMMON_FLAGS:
        v = getattr(args, f"flag_{key}", None)
        if v is not None:
            values[key] = v
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    return values


def _spec(args):
    values = _values(args)
    if args.command == "run":
        return config.resolve(values, None, args.out)
    allowed = SUBCOMMANDS[args.command]
    name = getattr(args, "experiment", None) or values.get("experiment") or allowed[0]
    if name not in allowed:
        raise ConfigError(f"{args.command} cannot run {name!r}; choose from {', '.join(allowed)}",
                          "experiment")
    values.pop("experiment", None)
    return config.resolve(values, name, args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            from .plotting import render_directory
            for path in render_directory(args.directory, args.format):
                print(path)
            return 0
        spec = _spec(args)
        log.info("running %s over %d seeds", spec.experiment, len(spec.seeds))
        out = experiments.run(spec, n_jobs=max(1, args.jobs))
        print(out)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (IpvaError, FileNotFoundError) as exc:
        # invalid inputs that are not numerical failures, e.g. a run too short for its PSD
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
