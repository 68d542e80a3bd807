"""
Symmetric factorization kernels.

Three building blocks are provided:

* :func:`cholesky` -- plain Cholesky of an SPD block (K_rr, K_ii, coarse matrices),
* :func:`rank_revealing_cholesky` -- diagonally pivoted Cholesky that stops at the
  numerical rank; used to compress simultaneous search directions and to filter
  dependent rows of the natural coarse space,
* :func:`pseudo_factorize` / :func:`pseudo_solve` -- a generalized inverse of a
  floating subdomain stiffness matrix obtained by fixing three DOFs.

Factorizations are immutable once built and may be shared between threads.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import IncompatibleRhs, IndefiniteInput, NotPositiveDefinite

DEFAULT_PIVOT_TOL = 1e-12
DEFINITE_PIVOT_TOL = 1e-13


@dataclass(frozen=True)
class SymFactorization:
    """
    Result of a symmetric factorization.

    Attributes
    ----------
    kind : str
        ``"definite"`` or ``"semidefinite"``.
    permutation : ndarray
        Row/column ordering ``p`` such that ``A[p][:, p]`` is the factorized matrix.
    lower_factor : ndarray
        Lower-triangular factor. For a semidefinite matrix factorized by
        :func:`rank_revealing_cholesky` this holds the first ``rank`` columns of L,
        i.e. ``[L~; X]`` with ``L~ = lower_factor[:rank, :rank]``. For a
        :func:`pseudo_factorize` result it is the factor of the regularized block.
    rank : int
    fixed_dofs : ndarray
        DOFs pinned to zero by :func:`pseudo_factorize` (empty otherwise).
    nullspace : ndarray or None
        Basis of the kernel used for the compatibility check in :func:`pseudo_solve`.
    """
    kind: str
    permutation: np.ndarray
    lower_factor: np.ndarray
    rank: int
    fixed_dofs: np.ndarray
    dimension: int
    nullspace: np.ndarray = None

    @property
    def leading_block(self):
        return self.lower_factor[:self.rank, :self.rank]

    def solve(self, b):
        """Solve ``A x = b`` for a definite factorization; ``b`` may have several columns."""
        if self.kind != "definite":
            raise ValueError("solve() needs a definite factorization; use pseudo_solve()")
        b = np.asarray(b, dtype=float)
        p = self.permutation
        y = sla.cho_solve((self.lower_factor, True), b[p], check_finite=False)
        x = np.empty_like(y)
        x[p] = y
        return x


def as_dense(matrix):
    if sp.issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=float)


def sym_sparse(matrix):
    """Return a CSR matrix that is bit-exactly symmetric: (A + A^T) / 2."""
    a = sp.csr_matrix(matrix, dtype=float)
    s = (a + a.T) * 0.5
    s = sp.csr_matrix(s)
    s.sort_indices()
    return s


def cholesky(matrix, pivot_tol=DEFINITE_PIVOT_TOL):
    """
    Cholesky factorization of a symmetric positive definite matrix.

    Backed by LAPACK ``potrf`` on the dense matrix; subdomain blocks in this
    package are a few hundred to a few thousand rows.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is nonpositive or below ``pivot_tol`` times the largest
        diagonal entry (a singular matrix usually leaves a round-off sized
        positive pivot rather than a negative one).
    """
    a = as_dense(matrix)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix expected")
    if n == 0:
        return SymFactorization("definite", np.arange(0), np.zeros((0, 0)), 0,
                                np.arange(0), 0)
    low, info = sla.lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        raise NotPositiveDefinite(f"nonpositive pivot at position {info - 1} of {n}")
    piv = np.diag(low) ** 2
    k = int(np.argmin(piv))
    if piv[k] <= pivot_tol * np.max(np.diag(a)):
        raise NotPositiveDefinite(f"pivot {piv[k]:.3e} at position {k} of {n} is numerically zero")
    return SymFactorization("definite", np.arange(n), low, n, np.arange(0), n)


def rank_revealing_cholesky(matrix, pivot_tol=DEFAULT_PIVOT_TOL):
    """
    Diagonally pivoted Cholesky ``A[p][:, p] = L L^T`` truncated at the numerical rank.

    At each step the largest remaining diagonal entry is chosen as pivot. The
    factorization stops when that entry drops below ``pivot_tol`` times the largest
    diagonal entry of the input.

    Parameters
    ----------
    matrix : (n, n) array_like
        Symmetric positive semidefinite matrix.
    pivot_tol : float
        Relative rank-decision threshold.

    Returns
    -------
    SymFactorization
        ``lower_factor`` is ``n x rank``; its leading ``rank x rank`` block is
        nonsingular lower triangular.

    Raises
    ------
    IndefiniteInput
        If the largest remaining pivot is below ``-pivot_tol * scale``.
    """
    a = np.array(as_dense(matrix), dtype=float)
    n = a.shape[0]
    perm = np.arange(n)
    low = np.zeros((n, n))
    if n == 0:
        return SymFactorization("semidefinite", perm, low, 0, np.arange(0), 0)
    scale = float(np.max(np.diag(a)))
    if not scale > 0.0:
        if scale < 0.0:
            raise IndefiniteInput(f"largest diagonal entry {scale:.3e} is negative")
        return SymFactorization("semidefinite", perm, low[:, :0], 0, np.arange(0), n)
    threshold = pivot_tol * scale
    rank = n
    for k in range(n):
        d = np.diag(a)[k:]
        j = k + int(np.argmax(d))
        piv = a[j, j]
        if piv < -threshold:
            raise IndefiniteInput(f"pivot {piv:.3e} at step {k} below -{threshold:.3e}")
        if piv <= threshold:
            rank = k
            break
        if j != k:
            a[[k, j], :] = a[[j, k], :]
            a[:, [k, j]] = a[:, [j, k]]
            low[[k, j], :k] = low[[j, k], :k]
            perm[[k, j]] = perm[[j, k]]
        lkk = np.sqrt(piv)
        low[k, k] = lkk
        col = a[k + 1:, k] / lkk
        low[k + 1:, k] = col
        a[k + 1:, k + 1:] -= np.outer(col, col)
    return SymFactorization("semidefinite", perm, low[:, :rank].copy(), rank,
                            np.arange(0), n)


def select_fixing_dofs(nullspace, weights=None):
    """
    Pick ``k`` rows of the ``n x k`` nullspace basis whose square block is well
    conditioned, by a greedy volume-maximizing scan (QR with column pivoting on R^T).

    ``weights`` (e.g. the stiffness diagonal) scale the rows before the scan so
    that DOFs in stiff material are preferred; with near-void regions this keeps
    the particular solution free of huge near-rigid components.
    """
    r = np.asarray(nullspace, dtype=float)
    k = r.shape[1]
    scan = r
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        scan = r * (w / w.max())[:, None]
    _, _, piv = sla.qr(scan.T, mode="economic", pivoting=True)
    fixed = np.sort(piv[:k])
    block = r[fixed, :]
    if abs(np.linalg.det(block)) <= 1e-12 * max(1.0, np.linalg.norm(block) ** k):
        raise ValueError("nullspace basis does not admit a nonsingular fixing block")
    return fixed


def pseudo_factorize(matrix, nullspace):
    """
    Generalized inverse of a singular SPSD matrix with a known nullspace.

    Fixes ``nullspace.shape[1]`` DOFs (see :func:`select_fixing_dofs`, weighted
    by the diagonal), factorizes the remaining SPD block and returns a
    ``"semidefinite"`` factorization whose solutions vanish at the fixed DOFs.
    """
    a = as_dense(matrix)
    n = a.shape[0]
    r = np.asarray(nullspace, dtype=float)
    fixed = select_fixing_dofs(r, np.diag(a))
    free = np.setdiff1d(np.arange(n), fixed)
    reduced = cholesky(a[np.ix_(free, free)])
    perm = np.concatenate([free, fixed])
    return SymFactorization("semidefinite", perm, reduced.lower_factor, n - len(fixed),
                            fixed, n, nullspace=r)


def check_compatible(nullspace, rhs, tol=1e-8):
    """Raise :class:`IncompatibleRhs` unless ``|R^T rhs| <= tol |rhs| |R_k|`` column-wise."""
    rhs = np.asarray(rhs, dtype=float)
    r = np.asarray(nullspace, dtype=float)
    b = rhs.reshape(rhs.shape[0], -1)
    proj = np.abs(r.T @ b)
    bound = tol * np.linalg.norm(r, axis=0)[:, None] * np.linalg.norm(b, axis=0)[None, :]
    bad = proj > bound
    if np.any(bad):
        worst = float(np.max(proj - bound))
        raise IncompatibleRhs(f"right-hand side not orthogonal to the nullspace (excess {worst:.3e})")


def pseudo_solve(factorization, rhs, check=True):
    """
    Apply the generalized inverse built by :func:`pseudo_factorize`.

    Returns the particular solution with zeros at the fixed DOFs. With ``check``
    the right-hand side must be orthogonal to the stored nullspace.
    """
    rhs = np.asarray(rhs, dtype=float)
    if factorization.kind == "definite":
        return factorization.solve(rhs)
    if check and factorization.nullspace is not None:
        check_compatible(factorization.nullspace, rhs)
    n_free = factorization.rank
    free = factorization.permutation[:n_free]
    x = np.zeros_like(rhs)
    x[free] = sla.cho_solve((factorization.lower_factor, True), rhs[free], check_finite=False)
    return x
