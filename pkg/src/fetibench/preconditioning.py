"""
Interface preconditioners built as a sum of scaled local inverses,

    z = sum_s  B~^s  S~^s  (B~^s)^T r,

with ``S~^s`` the Dirichlet Schur complement, the boundary block ``K_bb``
(lumped) or its diagonal (super-lumped).
"""
import numpy as np
import scipy.linalg as sla

from .errors import NotPositiveDefinite, SingularInterior
from .linalg import as_dense, cholesky

KINDS = ("dirichlet", "lumped", "superlumped")


class LocalPreconditioner:
    """
    Action of ``S~`` on boundary vectors of one subdomain.

    Parameters
    ----------
    kind : str
        One of ``"dirichlet"``, ``"lumped"``, ``"superlumped"``.
    stiffness : (n, n) array_like
        Local matrix that is split into boundary and interior blocks.
    boundary : array_like of int
        Indices of the boundary DOFs in ``stiffness``.
    """

    def __init__(self, kind, stiffness, boundary):
        if kind not in KINDS:
            raise ValueError(f"unknown preconditioner kind {kind!r}")
        k = as_dense(stiffness)
        self.kind = kind
        self.boundary = np.asarray(boundary, dtype=np.int64)
        self.interior = np.setdiff1d(np.arange(k.shape[0]), self.boundary)
        self.local_solves = 0
        b, i = self.boundary, self.interior
        self.k_bb = k[np.ix_(b, b)]
        if kind == "superlumped":
            self.diag = np.diag(self.k_bb).copy()
        elif kind == "dirichlet" and len(i):
            self.k_bi = k[np.ix_(b, i)]
            try:
                self.interior_factor = cholesky(k[np.ix_(i, i)])
            except NotPositiveDefinite as exc:
                raise SingularInterior(str(exc)) from exc
        else:
            self.interior_factor = None

    @property
    def n_boundary(self):
        return len(self.boundary)

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "superlumped":
            return self.diag[:, None] * v if v.ndim == 2 else self.diag * v
        out = self.k_bb @ v
        if self.kind == "dirichlet" and self.interior_factor is not None:
            self.local_solves += 1 if v.ndim == 1 else v.shape[1]
            t = sla.cho_solve((self.interior_factor.lower_factor, True), self.k_bi.T @ v,
                              check_finite=False)
            out -= self.k_bi @ t
        return out

    def dense(self):
        """Explicit ``S~`` (boundary x boundary); for verification."""
        return self.apply(np.eye(self.n_boundary))


def dirichlet_schur(stiffness, boundary):
    return LocalPreconditioner("dirichlet", stiffness, boundary)


def lumped(stiffness, boundary):
    return LocalPreconditioner("lumped", stiffness, boundary)


def super_lumped(stiffness, boundary):
    return LocalPreconditioner("superlumped", stiffness, boundary)


class InterfacePreconditioner:
    """
    Sum-of-local-inverses preconditioner on the dual space.

    Parameters
    ----------
    n_dual : int
        Number of Lagrange multipliers.
    blocks : list of (rows, jump, local)
        Per subdomain: touched multiplier rows, the dense scaled jump block
        ``B~^s`` restricted to those rows and the boundary DOFs, and the
        :class:`LocalPreconditioner`.
    """

    def __init__(self, n_dual, blocks):
        self.n_dual = n_dual
        self.blocks = blocks

    @property
    def n_subdomains(self):
        return len(self.blocks)

    @property
    def local_solves(self):
        return sum(loc.local_solves for loc in {id(b[2]): b[2] for b in self.blocks}.values())

    def _local(self, s, r):
        rows, jump, loc = self.blocks[s]
        return rows, jump @ loc.apply(jump.T @ r[rows])

    def apply(self, r):
        """``z = F_bar^{-1} r``, reduced in fixed subdomain order."""
        z = np.zeros(self.n_dual)
        for s in range(self.n_subdomains):
            rows, y = self._local(s, r)
            z[rows] += y
        return z

    def apply_columns(self, r):
        """Per-subdomain contributions as the columns of ``Z``; ``Z @ 1 == apply(r)``."""
        z = np.zeros((self.n_dual, self.n_subdomains))
        for s in range(self.n_subdomains):
            rows, y = self._local(s, r)
            z[rows, s] = y
        return z

    def dense(self):
        return np.column_stack([self.apply(e) for e in np.eye(self.n_dual)]) if self.n_dual else \
            np.zeros((0, 0))


def apply_coarse_preconditioner(residual, precond):
    """Return ``(z, Z)`` for a residual; see :class:`InterfacePreconditioner`."""
    zc = precond.apply_columns(residual)
    z = np.zeros(precond.n_dual)
    for s in range(zc.shape[1]):
        z += zc[:, s]
    return z, zc
