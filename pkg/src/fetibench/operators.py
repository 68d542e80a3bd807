"""
Dual interface problems.

:class:`TfetiSystem` implements ``F = B K^+ B^T`` with the natural coarse space and
projector, :class:`FetidpSystem` the FETI-DP operator with the corner unknowns
condensed out through an exact coarse solve. Both expose the same small surface
used by the iterative engine: ``apply``, ``project``, ``residual``, ``lambda0``,
``preconditioner`` and ``recover``.
"""
import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .decomposition import (build_coarse_space, build_constraints, k_scaling,
                            multiplicity_scaling, parse_dirichlet, rigid_body_modes)
from .errors import (NotConverged, NotPositiveDefinite, SingularCoarse, SingularRemainder)
from .linalg import cholesky, pseudo_factorize, pseudo_solve
from .preconditioning import InterfacePreconditioner, LocalPreconditioner

SCALINGS = ("multiplicity", "k")


def _matrix_key(*arrays):
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class PrimalRecovery:
    displacements: list
    alpha: np.ndarray = None
    jump: float = 0.0

    def relative_jump(self):
        norm = np.sqrt(sum(float(u @ u) for u in self.displacements))
        return self.jump / norm if norm > 0 else self.jump


class DualSystem:
    """Shared plumbing: operation counters, dense views and preconditioner assembly."""

    method = None

    def __init__(self):
        self.f_applies = 0
        self.local_solves = 0
        self._precond_cache = {}

    @property
    def n_dual(self):
        return self.constraints.n_rows

    @property
    def n_subdomains(self):
        return len(self.subdomains)

    def reset_counters(self):
        self.f_applies = 0
        self.local_solves = 0

    def _count(self, x, solves_per_column):
        k = 1 if x.ndim == 1 else x.shape[1]
        self.f_applies += k
        self.local_solves += solves_per_column * k * self.n_subdomains

    def dense_operator(self):
        """``F`` column by column (small problems only)."""
        return self.apply(np.eye(self.n_dual))

    def scaling(self, kind):
        if kind == "multiplicity":
            return multiplicity_scaling(self.constraints)
        if kind == "k":
            diags = [sd.stiffness.diagonal() for sd in self.subdomains]
            return k_scaling(self.constraints, diags, self.partition)
        raise ValueError(f"unknown scaling {kind!r}")

    def preconditioner(self, kind="dirichlet", scaling="multiplicity"):
        """Assemble the scaled sum-of-local-inverses preconditioner."""
        weights = scaling if not isinstance(scaling, str) else self.scaling(scaling)
        values = weights.scaled_signs(self.constraints)
        blocks = []
        for s in range(self.n_subdomains):
            idx = self.constraints.entries_of(s)
            rows, row_pos = np.unique(self.constraints.entry_row[idx], return_inverse=True)
            local_idx = self._local_index(s, self.constraints.entry_dof[idx])
            boundary, b_pos = np.unique(local_idx, return_inverse=True)
            jump = np.zeros((len(rows), len(boundary)))
            jump[row_pos, b_pos] = values[idx]
            mat, mkey = self._local_matrix(s)
            key = (kind, mkey, boundary.tobytes())
            loc = self._precond_cache.get(key)
            if loc is None:
                loc = LocalPreconditioner(kind, mat, boundary)
                if self.cache:
                    self._precond_cache[key] = loc
            blocks.append((rows, jump, loc))
        return InterfacePreconditioner(self.n_dual, blocks)


class TfetiSystem(DualSystem):
    """
    Total FETI: supports enforced by multipliers, all subdomains floating.

    Parameters
    ----------
    subdomains : list of SubdomainSystem
    partition : Partition
    constraints : ConstraintSet
        Interface and Dirichlet rows (``dirichlet_rows=True``).
    coarse : CoarseSpace, optional
        Built from ``constraints`` and ``subdomains`` when omitted.
    cache : bool
        Reuse one factorization per distinct module stiffness.
    """

    method = "tfeti"

    def __init__(self, subdomains, partition, constraints, coarse=None, cache=True):
        super().__init__()
        self.subdomains = list(subdomains)
        self.partition = partition
        self.constraints = constraints
        self.coarse = coarse if coarse is not None else build_coarse_space(constraints, subdomains)
        self.cache = cache
        self._dense_k = {}
        factors = {}
        self.factors, self.blocks, self.keys = [], [], []
        for s, sd in enumerate(self.subdomains):
            kd = sd.dense_stiffness()
            key = (sd.module_type, _matrix_key(kd)) if cache else s
            if key not in factors:
                factors[key] = pseudo_factorize(kd, rigid_body_modes(sd.mesh))
                self._dense_k[key] = kd
            self.factors.append(factors[key])
            self.keys.append(key)
            rows, m = constraints.block(s)
            self.blocks.append((rows, m, m.T.tocsr()))
        self.n_factorizations = len(factors)
        self.d = self._rhs()
        self.reset_counters()

    def _local_index(self, s, dofs):
        return dofs

    def _local_matrix(self, s):
        return self._dense_k[self.keys[s]], self.keys[s]

    def _rhs(self):
        y = np.zeros(self.n_dual)
        for s, (rows, m, mt) in enumerate(self.blocks):
            y[rows] += m @ pseudo_solve(self.factors[s], self.subdomains[s].load, check=False)
        return y - self.constraints.gap

    def apply(self, x, check=False):
        """``F x``; with ``check`` every local right-hand side must be compatible."""
        x = np.asarray(x, dtype=float)
        self._count(x, 1)
        y = np.zeros_like(x)
        for s, (rows, m, mt) in enumerate(self.blocks):
            u = mt @ x[rows]
            y[rows] += m @ pseudo_solve(self.factors[s], u, check=check)
        return y

    def residual(self, lam, check=True):
        """``d - F lam`` evaluated as ``B K^+ (f - B^T lam) - c``."""
        lam = np.asarray(lam, dtype=float)
        self._count(lam, 1)
        y = np.zeros(self.n_dual)
        for s, (rows, m, mt) in enumerate(self.blocks):
            u = self.subdomains[s].load - mt @ lam[rows]
            y[rows] += m @ pseudo_solve(self.factors[s], u, check=check)
        return y - self.constraints.gap

    def project(self, x):
        return self.coarse.project(x)

    def lambda0(self):
        return self.coarse.initial_multipliers()

    def coarse_residual(self, lam):
        """``|G lam - e|`` on the independent rows of G."""
        c = self.coarse
        if len(c.kept) == 0:
            return 0.0
        return float(np.linalg.norm(c.G_filtered @ lam - c.e_filtered))

    def recover(self, lam, guard_tol=None):
        """
        Subdomain displacements ``u = K^+ (f - B^T lam) + R alpha`` with ``alpha``
        minimizing ``|B u - c|``.
        """
        lam = np.asarray(lam, dtype=float)
        res = self.residual(lam, check=False)
        c = self.coarse
        alpha = np.zeros(c.G.shape[0])
        if len(c.kept):
            alpha[c.kept] = c.solve(c.G_filtered @ res)
        us = []
        for s, (rows, m, mt) in enumerate(self.blocks):
            u = pseudo_solve(self.factors[s], self.subdomains[s].load - mt @ lam[rows], check=False)
            us.append(u + c.R[s] @ alpha[3 * s:3 * s + 3])
        jump = float(np.linalg.norm(self.constraints.apply(us) - self.constraints.gap))
        rec = PrimalRecovery(us, alpha, jump)
        if guard_tol is not None and rec.relative_jump() > 1e3 * guard_tol:
            raise NotConverged(f"interface jump {rec.relative_jump():.3e} exceeds guard")
        return rec


class FetidpSystem(DualSystem):
    """
    FETI-DP with corner DOFs as primal unknowns and supports eliminated locally.

    Parameters
    ----------
    subdomains : list of SubdomainSystem
    partition : Partition
    corners : array_like of int
        Global primal nodes (both DOFs); prescribed DOFs among them are eliminated.
    dirichlet_spec : iterable of (node, direction, value)
    cache : bool
        Reuse factorizations of identical remainder blocks.
    """

    method = "fetidp"

    def __init__(self, subdomains, partition, corners, dirichlet_spec=(), cache=True):
        super().__init__()
        self.subdomains = list(subdomains)
        self.partition = partition
        self.cache = cache
        self.prescribed = parse_dirichlet(partition, dirichlet_spec)
        corner_set = {int(c) for c in corners}
        self.constraints = build_constraints(partition, dirichlet_spec, primal_nodes=corner_set,
                                             dirichlet_rows=False)
        primal_index = {}
        for node in sorted(corner_set):
            for d in (0, 1):
                if (node, d) not in self.prescribed:
                    primal_index[(node, d)] = len(primal_index)
        self.n_primal = len(primal_index)
        self.local = []
        factors = {}
        self._dense_k = {}
        kcc_bar = np.zeros((self.n_primal, self.n_primal))
        fc_bar = np.zeros(self.n_primal)
        for s, sd in enumerate(self.subdomains):
            g = partition.local_to_global[s]
            n = sd.n_dofs
            kind = np.empty(n, dtype=np.int64)  # 0 remainder, 1 primal, 2 prescribed
            cidx, uD = [], np.zeros(n)
            for l, node in enumerate(g):
                for d in (0, 1):
                    dof = 2 * l + d
                    if (int(node), d) in self.prescribed:
                        kind[dof] = 2
                        uD[dof] = self.prescribed[(int(node), d)]
                    elif int(node) in corner_set:
                        kind[dof] = 1
                        cidx.append(primal_index[(int(node), d)])
                    else:
                        kind[dof] = 0
            r_dofs = np.flatnonzero(kind == 0)
            c_dofs = np.flatnonzero(kind == 1)
            d_dofs = np.flatnonzero(kind == 2)
            kd = sd.dense_stiffness()
            krr = kd[np.ix_(r_dofs, r_dofs)]
            krc = kd[np.ix_(r_dofs, c_dofs)]
            kcc = kd[np.ix_(c_dofs, c_dofs)]
            key = (sd.module_type, _matrix_key(kd, r_dofs)) if cache else s
            if key not in factors:
                try:
                    factors[key] = cholesky(krr)
                except NotPositiveDefinite as exc:
                    raise SingularRemainder(f"subdomain {s}: {exc}") from exc
                self._dense_k[key] = krr
            fact = factors[key]
            f = sd.load - kd @ uD
            fr, fc = f[r_dofs], f[c_dofs]
            pos = np.full(n, -1, dtype=np.int64)
            pos[r_dofs] = np.arange(len(r_dofs))
            rows, m = self.constraints.block(s)
            mr = m[:, r_dofs].tocsr()
            cidx = np.array(cidx, dtype=np.int64)
            sol = fact.solve(np.column_stack([krc, fr])) if len(r_dofs) else np.zeros((0, len(c_dofs) + 1))
            kinv_krc, kinv_fr = sol[:, :-1], sol[:, -1]
            kcc_bar[np.ix_(cidx, cidx)] += kcc - krc.T @ kinv_krc
            fc_bar[cidx] += fc - krc.T @ kinv_fr
            self.local.append(dict(r=r_dofs, c=c_dofs, d=d_dofs, uD=uD, pos=pos, fact=fact,
                                   key=key, krc=krc, fr=fr, cidx=cidx, rows=rows, m=mr,
                                   mt=mr.T.tocsr(), kinv_fr=kinv_fr))
        self.n_factorizations = len(factors)
        self.kcc_bar = kcc_bar
        self.fc_bar = fc_bar
        try:
            self.coarse_factor = cholesky(kcc_bar) if self.n_primal else None
        except NotPositiveDefinite as exc:
            raise SingularCoarse(str(exc)) from exc
        self.d = self._rhs()
        self.reset_counters()

    def _local_index(self, s, dofs):
        return self.local[s]["pos"][dofs]

    def _local_matrix(self, s):
        key = self.local[s]["key"]
        return self._dense_k[key], key

    def _coarse_solve(self, b):
        if self.coarse_factor is None:
            return np.zeros_like(b)
        return self.coarse_factor.solve(b)

    def _rhs(self):
        d = np.zeros(self.n_dual)
        for loc in self.local:
            d[loc["rows"]] += loc["m"] @ loc["kinv_fr"]
        return d - self._frc(self._coarse_solve(self.fc_bar))

    def _frc(self, uc):
        """``F_rc uc = B_r K_rr^{-1} K_rc uc``."""
        y = np.zeros((self.n_dual,) + uc.shape[1:])
        for loc in self.local:
            if len(loc["cidx"]) == 0:
                continue
            t = loc["krc"] @ uc[loc["cidx"]]
            y[loc["rows"]] += loc["m"] @ loc["fact"].solve(t)
        return y

    def apply(self, x, check=False):
        """``(F_rr + F_rc Kcc_bar^{-1} F_rc^T) x``."""
        x = np.asarray(x, dtype=float)
        self._count(x, 2)
        y = np.zeros_like(x)
        yc = np.zeros((self.n_primal,) + x.shape[1:])
        for loc in self.local:
            v = loc["fact"].solve(loc["mt"] @ x[loc["rows"]])
            y[loc["rows"]] += loc["m"] @ v
            yc[loc["cidx"]] += loc["krc"].T @ v
        return y + self._frc(self._coarse_solve(yc))

    def residual(self, lam, check=True):
        return self.d - self.apply(lam)

    def project(self, x):
        return np.array(x, dtype=float, copy=True)

    def lambda0(self):
        return np.zeros(self.n_dual)

    def coarse_residual(self, lam):
        return 0.0

    def recover(self, lam, guard_tol=None):
        lam = np.asarray(lam, dtype=float)
        yc = np.zeros(self.n_primal)
        vs = []
        for loc in self.local:
            v = loc["fact"].solve(loc["mt"] @ lam[loc["rows"]])
            vs.append(v)
            yc[loc["cidx"]] += loc["krc"].T @ v
        uc = self._coarse_solve(yc + self.fc_bar)
        us = []
        for loc, sd in zip(self.local, self.subdomains):
            uc_s = uc[loc["cidx"]]
            ur = loc["fact"].solve(loc["fr"] - loc["mt"] @ lam[loc["rows"]] - loc["krc"] @ uc_s)
            u = loc["uD"].copy()
            u[loc["r"]] = ur
            u[loc["c"]] = uc_s
            us.append(u)
        jump = float(np.linalg.norm(self.constraints.apply(us)))
        rec = PrimalRecovery(us, None, jump)
        rec.primal = uc
        if guard_tol is not None and rec.relative_jump() > 1e3 * guard_tol:
            raise NotConverged(f"interface jump {rec.relative_jump():.3e} exceeds guard")
        return rec


def build_tfeti(subdomains, partition, dirichlet_spec=(), cache=True):
    constraints = build_constraints(partition, dirichlet_spec)
    return TfetiSystem(subdomains, partition, constraints, cache=cache)


def build_fetidp(subdomains, partition, corners, dirichlet_spec=(), cache=True):
    return FetidpSystem(subdomains, partition, corners, dirichlet_spec, cache=cache)


def recover_primal(system, lam, guard_tol=None):
    return system.recover(lam, guard_tol)
