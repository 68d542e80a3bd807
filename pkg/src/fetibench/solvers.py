"""
Projected preconditioned conjugate gradients on the dual interface problem.

Three direction strategies are available:

``single``
    classical PCPG, each direction conjugated against the previous one only;
``fo``
    full orthogonalization -- each direction is F-orthogonalized against all
    stored directions (classical Gram-Schmidt, ``reorth_passes`` sweeps);
``rrs``
    simultaneous directions, one per subdomain, compressed by a rank-revealing
    Cholesky factorization of ``W^T F W`` and F-orthonormalized.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import IndefiniteInput, NegativeInnerProduct
from .linalg import DEFAULT_PIVOT_TOL, rank_revealing_cholesky

logger = logging.getLogger(__name__)

DIRECTIONS = ("single", "fo", "rrs")
CONVERGED, MAX_ITER, BREAKDOWN = "converged", "max_iter", "breakdown"


@dataclass
class SolveOptions:
    tol: float = 1e-8
    tol_mode: str = "rel"
    max_iterations: int = 500
    directions: str = "single"
    pivot_tol: float = DEFAULT_PIVOT_TOL
    reorth_passes: int = 2
    debug: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tol_mode not in ("abs", "rel"):
            raise ValueError(f"tol_mode must be 'abs' or 'rel', got {self.tol_mode!r}")
        if self.directions not in DIRECTIONS:
            raise ValueError(f"directions must be one of {DIRECTIONS}")
        if not 0.0 < self.pivot_tol < 1.0:
            raise ValueError("pivot_tol must lie in (0, 1)")
        if self.reorth_passes < 1:
            raise ValueError("reorth_passes must be >= 1")

    @property
    def full_orthogonalization(self):
        return self.directions in ("fo", "rrs")


@dataclass
class IterationRecord:
    iteration: int
    eps_r: float
    kept_dirs: int
    f_applies: int
    local_solves: int


@dataclass
class ConvergenceTrace:
    records: list = field(default_factory=list)
    status: str = MAX_ITER
    message: str = ""
    diagnostics: list = field(default_factory=list)

    @property
    def iterations(self):
        return self.records[-1].iteration if self.records else 0

    @property
    def final_eps(self):
        return self.records[-1].eps_r if self.records else float("nan")

    @property
    def eps(self):
        return np.array([r.eps_r for r in self.records])


def residual_metric(r, z, tol=1e-14):
    """``sqrt(r^T z)``; raises if ``r^T z`` is negative beyond rounding."""
    rz = float(np.dot(r, z))
    if rz < -tol * float(np.linalg.norm(r)) * float(np.linalg.norm(z)):
        raise NegativeInnerProduct(f"r^T z = {rz:.3e} < 0")
    return math.sqrt(max(rz, 0.0))


class _Run:
    """Bookkeeping shared by both engines."""

    def __init__(self, system, precond, opts, callback):
        self.system, self.precond, self.opts, self.callback = system, precond, opts, callback
        self.trace = ConvergenceTrace()
        self.f0 = system.f_applies
        self.s0 = system.local_solves + precond.local_solves
        self.threshold = None

    def record(self, it, eps, kept):
        s = self.system
        self.trace.records.append(IterationRecord(
            it, eps, kept, s.f_applies - self.f0,
            s.local_solves + self.precond.local_solves - self.s0))

    def converged(self, eps):
        if self.threshold is None:
            self.threshold = self.opts.tol * eps if self.opts.tol_mode == "rel" else self.opts.tol
        return eps <= self.threshold

    def diagnose(self, it, lam, **extra):
        if self.opts.debug:
            d = {"iteration": it, "coarse_residual": self.system.coarse_residual(lam)}
            d.update(extra)
            self.trace.diagnostics.append(d)
        if self.callback is not None:
            self.callback(it, lam)

    def finish(self, status, message=""):
        self.trace.status = status
        self.trace.message = message
        logger.debug("%s after %d iterations: %s", status, self.trace.iterations, message)
        return self.trace


def pcg(system, precond, opts=None, callback=None):
    """
    Projected PCG with single directions (optionally fully orthogonalized).

    Returns
    -------
    lam : ndarray
    trace : ConvergenceTrace
    """
    opts = opts or SolveOptions()
    run = _Run(system, precond, opts, callback)
    lam = system.lambda0()
    n = system.n_dual
    if n == 0:
        run.record(0, 0.0, 0)
        return lam, run.finish(CONVERGED, "empty dual space")
    r = system.project(system.residual(lam))
    full = opts.directions == "fo"
    store = min(opts.max_iterations, n) + 1 if full else 1
    ps = np.zeros((n, store))
    qs = np.zeros((n, store))
    pq = np.zeros(store)
    k = 0
    for it in range(opts.max_iterations + 1):
        z = precond.apply(r)
        try:
            eps = residual_metric(r, z)
        except NegativeInnerProduct as exc:
            run.record(it, float("nan"), 0)
            return lam, run.finish(BREAKDOWN, f"NegativeInnerProduct: {exc}")
        w = system.project(z)
        run.diagnose(it, lam)
        if not np.isfinite(eps):
            run.record(it, eps, 0)
            return lam, run.finish(BREAKDOWN, "non-finite residual")
        if run.converged(eps):
            run.record(it, eps, 0)
            return lam, run.finish(CONVERGED)
        if it == opts.max_iterations:
            run.record(it, eps, 0)
            break
        run.record(it, eps, 1)
        p = w
        if k:
            if full:
                for _ in range(opts.reorth_passes):
                    p = p - ps[:, :k] @ ((qs[:, :k].T @ p) / pq[:k])
            else:
                p = p + (eps * eps / rz_prev) * ps[:, 0]
        q = system.apply(p)
        pfp = float(p @ q)
        if not pfp > 0.0:
            return lam, run.finish(BREAKDOWN, f"w^T F w = {pfp:.3e} at iteration {it}")
        rz_prev = eps * eps
        alpha = float(p @ r) / pfp if full else rz_prev / pfp
        lam = lam + alpha * p
        r = r - alpha * system.project(q)
        slot = k if full else 0
        if full and k >= store:
            ps = np.hstack([ps, np.zeros_like(ps)])
            qs = np.hstack([qs, np.zeros_like(qs)])
            pq = np.concatenate([pq, np.zeros_like(pq)])
        ps[:, slot], qs[:, slot], pq[slot] = p, q, pfp
        k += 1
    return lam, run.finish(MAX_ITER, f"no convergence in {opts.max_iterations} iterations")


def simultaneous_pcg(system, precond, opts=None, callback=None):
    """
    Rank-revealing simultaneous projected PCG: one search direction per subdomain.

    The loop body follows the block algorithm step by step: F-images of the
    directions, the Gram matrix ``Delta = Q^T W``, its pivoted Cholesky
    factorization, compression to an F-orthonormal basis, the block update of
    ``lambda`` and ``r`` and block re-orthogonalization of the next directions
    against every stored block.
    """
    opts = opts or SolveOptions(directions="rrs")
    run = _Run(system, precond, opts, callback)
    lam = system.lambda0()
    n = system.n_dual
    if n == 0:
        run.record(0, 0.0, 0)
        return lam, run.finish(CONVERGED, "empty dual space")
    r = system.project(system.residual(lam))
    zc = precond.apply_columns(r)
    w = system.project(zc)
    ws, qs = [], []
    for it in range(opts.max_iterations + 1):
        z = zc.sum(axis=1)
        try:
            eps = residual_metric(r, z)
        except NegativeInnerProduct as exc:
            run.record(it, float("nan"), 0)
            return lam, run.finish(BREAKDOWN, f"NegativeInnerProduct: {exc}")
        if not np.isfinite(eps):
            run.record(it, eps, 0)
            return lam, run.finish(BREAKDOWN, "non-finite residual")
        if run.converged(eps):
            run.diagnose(it, lam)
            run.record(it, eps, 0)
            return lam, run.finish(CONVERGED)
        if it == opts.max_iterations:
            run.diagnose(it, lam)
            run.record(it, eps, 0)
            break
        q = system.apply(w)
        delta = q.T @ w
        delta = 0.5 * (delta + delta.T)
        try:
            fact = rank_revealing_cholesky(delta, opts.pivot_tol)
        except IndefiniteInput as exc:
            run.record(it, eps, 0)
            return lam, run.finish(BREAKDOWN, f"Delta indefinite at iteration {it}: {exc}")
        rank = fact.rank
        run.record(it, eps, rank)
        if rank == 0:
            return lam, run.finish(BREAKDOWN, f"search space collapsed at iteration {it}")
        keep = fact.permutation[:rank]
        lt = fact.leading_block
        w = sla.solve_triangular(lt, w[:, keep].T, lower=True).T
        q = sla.solve_triangular(lt, q[:, keep].T, lower=True).T
        if opts.debug:
            orth = float(np.max(np.abs(w.T @ system.apply(w) - np.eye(rank))))
            run.diagnose(it, lam, orthonormality=orth, rank=rank)
        else:
            run.diagnose(it, lam)
        gamma = w.T @ r
        lam = lam + w @ gamma
        r = r - system.project(q @ gamma)
        ws.append(w)
        qs.append(q)
        zc = precond.apply_columns(r)
        w = system.project(zc)
        for _ in range(opts.reorth_passes):
            for wj, qj in zip(ws, qs):
                w = w - wj @ (qj.T @ w)
    return lam, run.finish(MAX_ITER, f"no convergence in {opts.max_iterations} iterations")


def solve(system, precond, opts=None, callback=None):
    """Dispatch on ``opts.directions``."""
    opts = opts or SolveOptions()
    if opts.directions == "rrs":
        return simultaneous_pcg(system, precond, opts, callback)
    return pcg(system, precond, opts, callback)
