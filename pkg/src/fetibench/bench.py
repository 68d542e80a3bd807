"""
Benchmark harness: run a grid of solver variants, verify invariants, merge traces.

A variant is ``(method, scaling, directions)`` with method in ``{tfeti, fetidp}``,
scaling in ``{multiplicity, k}`` and directions in ``{single, fo, rrs}``; its label
is ``"<method>-<scaling>-<directions>"``.

Trace files (one per problem and variant, ``<problem>__<variant>.csv``) have the
columns ``iter,eps_r,kept_dirs,F_applies,cum_local_solves``; ``summary.csv`` has
one row per problem and variant.
"""
import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError, NotConverged
from .formats import write_snapshot
from .linalg import DEFAULT_PIVOT_TOL
from .operators import SCALINGS, build_fetidp, build_tfeti
from .preconditioning import KINDS
from .problems import (PRESETS, build_subdomains, corners_for, direct_oracle, mbb_modular_snapshot,
                       relative_error)
from .solvers import BREAKDOWN, CONVERGED, DIRECTIONS, SolveOptions, solve
from . import verification

logger = logging.getLogger(__name__)

METHODS = ("tfeti", "fetidp")
PROBLEMS = tuple(PRESETS) + ("mbb_snapshot",)
TRACE_COLUMNS = ["iter", "eps_r", "kept_dirs", "F_applies", "cum_local_solves"]
SUMMARY_COLUMNS = ["problem", "variant", "method", "scaling", "directions", "status",
                   "iterations", "final_eps_r", "dual_size", "oracle_rel_error"]
ORACLE_TOL = 1e-6


def variant_label(method, scaling, directions):
    return f"{method}-{scaling}-{directions}"


def _fmt(x):
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


@dataclass
class RunConfig:
    problem: str = "grid3x3_layered"
    method: tuple = METHODS
    scaling: tuple = SCALINGS
    directions: tuple = DIRECTIONS
    precond: str = "dirichlet"
    tol: float = 1e-8
    tol_mode: str = "rel"
    pivot_tol: float = DEFAULT_PIVOT_TOL
    maxit: int = 500
    elems: int = 8
    contrast: float = 1e4
    out: str = "fetibench_out"
    snapshot_iters: tuple = (30,)
    seed: int = 0

    def __post_init__(self):
        for name, allowed in (("method", METHODS), ("scaling", SCALINGS),
                              ("directions", DIRECTIONS)):
            value = getattr(self, name)
            value = (value,) if isinstance(value, str) else tuple(value)
            if not value:
                raise ConfigError(f"no {name} selected")
            bad = [v for v in value if v not in allowed]
            if bad:
                raise ConfigError(f"unknown {name} {bad}; choose from {allowed}")
            setattr(self, name, value)
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.precond not in KINDS:
            raise ConfigError(f"unknown preconditioner {self.precond!r}; choose from {KINDS}")
        if isinstance(self.snapshot_iters, (int, np.integer)):
            self.snapshot_iters = (int(self.snapshot_iters),)
        self.snapshot_iters = tuple(int(i) for i in self.snapshot_iters)
        try:
            self.options()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if int(self.elems) < 1:
            raise ConfigError("elems must be positive")
        if not float(self.contrast) >= 1.0:
            raise ConfigError("contrast must be >= 1")

    @classmethod
    def from_mapping(cls, data):
        """Build from a dict whose keys are flag names (``tol-mode`` or ``tol_mode``)."""
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = key.lstrip("-").replace("-", "_")
            if name in known:
                kwargs[name] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def options(self, directions="single"):
        return SolveOptions(tol=float(self.tol), tol_mode=self.tol_mode,
                            max_iterations=int(self.maxit), directions=directions,
                            pivot_tol=float(self.pivot_tol))

    def variants(self):
        return [(m, s, d) for m, s, d in itertools.product(self.method, self.scaling, self.directions)]


@dataclass
class VariantResult:
    problem: str
    method: str
    scaling: str
    directions: str
    status: str
    iterations: int
    final_eps_r: float
    dual_size: int
    oracle_rel_error: float
    trace: object = None
    message: str = ""

    @property
    def variant(self):
        return variant_label(self.method, self.scaling, self.directions)

    def row(self):
        return {"problem": self.problem, "variant": self.variant, "method": self.method,
                "scaling": self.scaling, "directions": self.directions, "status": self.status,
                "iterations": self.iterations, "final_eps_r": self.final_eps_r,
                "dual_size": self.dual_size, "oracle_rel_error": self.oracle_rel_error}


@dataclass
class RunSummary:
    results: list = field(default_factory=list)

    def rows(self):
        return [r.row() for r in self.results]

    def get(self, problem, method, scaling, directions):
        for r in self.results:
            if (r.problem, r.method, r.scaling, r.directions) == (problem, method, scaling, directions):
                return r
        raise KeyError((problem, method, scaling, directions))


def build_system(method, problem, partition, subdomains, cache=True):
    if method == "tfeti":
        return build_tfeti(subdomains, partition, problem.dirichlet, cache=cache)
    return build_fetidp(subdomains, partition, corners_for(problem, partition), problem.dirichlet,
                        cache=cache)


def build_problems(config, snapshot_dir=None):
    """Problem instances selected by ``config``; MBB snapshots are optionally written out."""
    if config.problem == "mbb_snapshot":
        iters = config.snapshot_iters
        snaps = mbb_modular_snapshot(iters, elems=int(config.elems))
        if snapshot_dir is not None:
            for it, prob in zip(sorted(set(iters)), snaps):
                write_snapshot(snapshot_dir, it, prob)
        return snaps
    return [PRESETS[config.problem](elems=int(config.elems), contrast=float(config.contrast))]


def run_variant(system, problem, partition, scaling, directions, config, u_ref=None,
                precond=None):
    """Solve one variant on an existing system and check the recovered field."""
    opts = config.options(directions)
    pre = precond if precond is not None else system.preconditioner(config.precond, scaling)
    system.reset_counters()
    lam, trace = solve(system, pre, opts)
    status, err, message = trace.status, float("nan"), trace.message
    if status == CONVERGED:
        try:
            rec = system.recover(lam, guard_tol=opts.tol)
        except NotConverged as exc:
            status, message = BREAKDOWN, f"primal recovery rejected: {exc}"
        else:
            if u_ref is not None:
                err = relative_error(partition, rec.displacements, u_ref)
    return VariantResult(problem.name, system.method, scaling, directions, status,
                         trace.iterations, float(trace.final_eps), system.n_dual, err, trace,
                         message)


def run_problem(problem, config):
    partition, subdomains = build_subdomains(problem)
    u_ref = direct_oracle(problem, partition, subdomains)
    out = []
    for method in config.method:
        system = build_system(method, problem, partition, subdomains)
        for scaling in config.scaling:
            for directions in config.directions:
                res = run_variant(system, problem, partition, scaling, directions, config, u_ref)
                logger.info("%s %s: %s after %d iterations", problem.name, res.variant,
                            res.status, res.iterations)
                out.append(res)
    return out


def _writable_dir(path, create):
    path = Path(path)
    if create:
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create output directory {path}: {exc}") from exc
    if not path.is_dir():
        raise IoError(f"output directory {path} does not exist")
    return path


def write_trace(path, trace):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for rec in trace.records:
                w.writerow([rec.iteration, _fmt(float(rec.eps_r)), rec.kept_dirs, rec.f_applies,
                            rec.local_solves])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_summary(path, summary):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in summary.rows():
                w.writerow({k: _fmt(v) for k, v in row.items()})
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def run_grid(config, write=True):
    """
    Run every selected variant on every selected problem instance.

    Returns
    -------
    RunSummary
        Non-convergence is recorded in the status column; only internal faults raise.
    """
    out = _writable_dir(config.out, create=True) if write else None
    summary = RunSummary()
    for problem in build_problems(config, snapshot_dir=out):
        summary.results.extend(run_problem(problem, config))
    if write:
        for res in summary.results:
            write_trace(out / f"{res.problem}__{res.variant}.csv", res.trace)
        write_summary(out / "summary.csv", summary)
    return summary


# ---------------------------------------------------------------------------
# invariant suite


@dataclass
class Check:
    problem: str
    name: str
    value: float
    limit: float
    message: str = ""

    @property
    def passed(self):
        return bool(self.value <= self.limit) and not self.message

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.message})" if self.message else ""
        return f"{flag} {self.problem:<20s} {self.name:<28s} {self.value:.3e} <= {self.limit:.0e}{extra}"


class _NegatedPreconditioner:
    """Fault injection: flips the sign of the preconditioner so that ``r^T z < 0``."""

    def __init__(self, inner):
        self.inner = inner
        self.n_dual = inner.n_dual

    @property
    def local_solves(self):
        return self.inner.local_solves

    def apply(self, r):
        return -self.inner.apply(r)

    def apply_columns(self, r):
        return -self.inner.apply_columns(r)


FAULTS = ("none", "negative-precond")


def verify(config, fault="none"):
    """
    Invariant suite on every academic preset at ``config.elems`` elements per subdomain.

    Checks the scaling admissibility identity, projector idempotency, the implicit
    operators against dense references and the oracle match of one converged run
    per method. Returns a list of :class:`Check`.
    """
    if fault not in FAULTS:
        raise ConfigError(f"unknown fault {fault!r}; choose from {FAULTS}")
    checks = []
    for name, preset in PRESETS.items():
        problem = preset(elems=int(config.elems), contrast=float(config.contrast))
        partition, subdomains = build_subdomains(problem)
        u_ref = direct_oracle(problem, partition, subdomains)
        for method in METHODS:
            system = build_system(method, problem, partition, subdomains)
            for kind in SCALINGS:
                checks.append(Check(name, f"{method} admissibility[{kind}]",
                                    verification.scaling_admissibility(system, kind), 1e-12))
            if method == "tfeti":
                idem, gp = verification.projector_errors(system)
                checks.append(Check(name, "tfeti P^2 = P", idem, 1e-12))
                checks.append(Check(name, "tfeti G P = 0", gp, 1e-12))
            checks.append(Check(name, f"{method} operator vs dense",
                                verification.operator_mismatch(system), 1e-9))
            pre = system.preconditioner(config.precond, "k")
            if fault == "negative-precond":
                pre = _NegatedPreconditioner(pre)
            res = run_variant(system, problem, partition, "k", "rrs", config, u_ref, precond=pre)
            if res.status == CONVERGED:
                checks.append(Check(name, f"{method} oracle match", res.oracle_rel_error, ORACLE_TOL))
            else:
                checks.append(Check(name, f"{method} oracle match", float("inf"), ORACLE_TOL,
                                    f"{res.status}: {res.message}"))
    return checks


# ---------------------------------------------------------------------------
# report


def read_trace(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(f"cannot read trace {path}: {exc}") from exc
    return [(int(r["iter"]), float(r["eps_r"]) if r["eps_r"] else float("nan")) for r in rows]


def trace_files(inputs):
    """Expand directories into their trace CSVs (``summary.csv`` and report outputs excluded)."""
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(f for f in p.glob("*__*.csv"))
        elif p.is_file():
            files.append(p)
        else:
            raise IoError(f"no such trace file or directory: {p}")
    return files


def report(inputs, out_path):
    """
    Merge traces into the long format ``variant,iter,eps_r``.

    A companion file ``<out>.monotone.csv`` lists for each variant whether its
    ``eps_r`` sequence is nonincreasing. Returns ``{variant: monotone}``.
    """
    out_path = Path(out_path)
    flags = {}
    try:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "iter", "eps_r"])
            for f in trace_files(inputs):
                label = f.stem
                rows = read_trace(f)
                eps = np.array([e for _, e in rows])
                flags[label] = bool(np.all(np.diff(eps) <= 0.0)) if len(eps) > 1 else True
                for it, e in rows:
                    w.writerow([label, it, _fmt(e)])
        mono = out_path.with_name(out_path.stem + ".monotone.csv")
        with open(mono, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "monotone"])
            for label, ok in flags.items():
                w.writerow([label, int(ok)])
    except OSError as exc:
        raise IoError(f"cannot write report {out_path}: {exc}") from exc
    return flags


__all__ = ["RunConfig", "RunSummary", "VariantResult", "Check", "run_grid", "run_problem",
           "run_variant", "verify", "report", "build_system", "build_problems"]
