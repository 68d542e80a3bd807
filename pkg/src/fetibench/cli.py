"""
Command-line entry point ``fetibench``.

Subcommands::

    fetibench run     --problem grid3x3_layered --out runs/grid3x3
    fetibench verify  --out runs/verify
    fetibench report  runs/grid3x3 --out runs/grid3x3/plot_data.csv

``run`` and ``verify`` accept ``--config FILE`` (YAML or JSON) whose keys are the
flag names without leading dashes, e.g. ``tol-mode: rel``; flags given on the
command line override the file.
"""
import argparse
import logging
import sys
from pathlib import Path

import yaml

from .bench import (FAULTS, METHODS, PROBLEMS, RunConfig, _writable_dir, report, run_grid,
                    verify)
from .errors import ConfigError, FetiError, IoError
from .operators import SCALINGS
from .preconditioning import KINDS
from .solvers import DIRECTIONS

logger = logging.getLogger("fetibench")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _csv_list(choices):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in choices]
        if bad:
            raise argparse.ArgumentTypeError(f"invalid choice {bad}; choose from {choices}")
        return items
    return parse


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_run_flags(p):
    s = argparse.SUPPRESS
    p.add_argument("--config", default=s, help="YAML/JSON file with the same keys as the flags")
    p.add_argument("--problem", choices=PROBLEMS, default=s)
    p.add_argument("--method", type=_csv_list(METHODS), default=s,
                   help="comma separated subset of tfeti,fetidp")
    p.add_argument("--scaling", type=_csv_list(SCALINGS), default=s,
                   help="comma separated subset of multiplicity,k")
    p.add_argument("--directions", type=_csv_list(DIRECTIONS), default=s,
                   help="comma separated subset of single,fo,rrs")
    p.add_argument("--precond", choices=KINDS, default=s)
    p.add_argument("--tol", type=float, default=s)
    p.add_argument("--tol-mode", dest="tol_mode", choices=("abs", "rel"), default=s)
    p.add_argument("--pivot-tol", dest="pivot_tol", type=float, default=s,
                   help="relative rank-decision tolerance of the RRS compression")
    p.add_argument("--maxit", type=int, default=s)
    p.add_argument("--elems", type=int, default=s, help="elements per subdomain side")
    p.add_argument("--contrast", type=float, default=s, help="stiff/compliant modulus ratio")
    p.add_argument("--out", default=s, help="output directory")
    p.add_argument("--snapshot-iters", dest="snapshot_iters", type=_int_list, default=s,
                   help="SIMP iterations captured for --problem mbb_snapshot")
    p.add_argument("--seed", type=int, default=s)


def build_parser():
    parser = argparse.ArgumentParser(prog="fetibench", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a grid of solver variants")
    _add_run_flags(run)
    ver = sub.add_parser("verify", help="run the invariant suite on the academic presets")
    _add_run_flags(ver)
    ver.add_argument("--inject-fault", dest="fault", choices=FAULTS, default="none",
                     help="deliberately break a component to exercise the checks")
    rep = sub.add_parser("report", help="merge trace CSVs into long format")
    rep.add_argument("inputs", nargs="*", help="trace files or run directories")
    rep.add_argument("--out", required=True, help="output CSV path")
    return parser


def load_config_file(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def config_from_args(args, **defaults):
    """Defaults < config file < command-line flags."""
    data = dict(defaults)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "fault")}
    if "config" in flags:
        data.update(load_config_file(flags.pop("config")))
    data.update(flags)
    return RunConfig.from_mapping(data)


def _run(args):
    cfg = config_from_args(args)
    summary = run_grid(cfg)
    for row in summary.rows():
        err = row["oracle_rel_error"]
        print(f"{row['problem']:<20s} {row['variant']:<28s} {row['status']:<9s} "
              f"{row['iterations']:>5d}  eps={row['final_eps_r']:.3e}  err={err:.1e}")
    print(f"wrote {len(summary.results)} traces and summary.csv to {cfg.out}")
    return EXIT_OK


def _verify(args):
    cfg = config_from_args(args, elems=4)
    out = _writable_dir(cfg.out, create=False) if "out" in vars(args) else None
    checks = verify(cfg, args.fault)
    for c in checks:
        print(c.line())
    if out is not None:
        with open(out / "verify.txt", "w") as fh:
            fh.write("\n".join(c.line() for c in checks) + "\n")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def _report(args):
    flags = report(args.inputs, args.out)
    for label, ok in flags.items():
        print(f"{label:<48s} {'monotone' if ok else 'non-monotone'}")
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "verify": _verify, "report": _report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FetiError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
