"""
Dense reference constructions used to cross-check the implicit operators.

Everything here forms explicit matrices and is meant for desk-scale problems.
"""
import numpy as np

from .decomposition import admissibility_error


def dense_projector(system):
    """Explicit ``P`` of a dual system (identity for FETI-DP)."""
    return system.project(np.eye(system.n_dual))


def tfeti_reference_operator(system):
    """
    ``P B K^+ B^T P`` with ``K^+`` the Moore-Penrose inverse of every subdomain.

    Any generalized inverse gives the same matrix after projection, so the result
    is directly comparable with ``P F P`` of the implicit operator.
    """
    b = system.constraints.dense()
    offsets = np.cumsum([0] + system.constraints.subdomain_dofs)
    f = np.zeros((system.n_dual, system.n_dual))
    for s, sd in enumerate(system.subdomains):
        sl = slice(offsets[s], offsets[s + 1])
        bs = b[:, sl]
        f += bs @ np.linalg.pinv(sd.dense_stiffness(), rcond=1e-10, hermitian=True) @ bs.T
    p = dense_projector(system)
    return p @ f @ p.T


def fetidp_reference_operator(system):
    """
    Dual Schur complement of the assembled remainder/corner block system.

    The matrix ``[[K_rr, K_rc], [K_cr, K_cc]]`` is assembled over all subdomains
    with the corner unknowns shared, inverted densely and sandwiched between the
    remainder jump operators, without the condensation used by the operator.
    """
    n_r = sum(len(loc["r"]) for loc in system.local)
    n = n_r + system.n_primal
    k = np.zeros((n, n))
    br = np.zeros((system.n_dual, n))
    off = 0
    for loc, sd in zip(system.local, system.subdomains):
        kd = sd.dense_stiffness()
        r, c = loc["r"], loc["c"]
        ri = off + np.arange(len(r))
        ci = n_r + loc["cidx"]
        k[np.ix_(ri, ri)] += kd[np.ix_(r, r)]
        k[np.ix_(ri, ci)] += kd[np.ix_(r, c)]
        k[np.ix_(ci, ri)] += kd[np.ix_(c, r)]
        k[np.ix_(ci, ci)] += kd[np.ix_(c, c)]
        br[np.ix_(loc["rows"], ri)] += loc["m"].toarray()
        off += len(r)
    return br @ np.linalg.solve(k, br.T)


def operator_mismatch(system):
    """Relative max-norm difference between the implicit operator and its dense reference."""
    f = system.dense_operator()
    if system.method == "tfeti":
        p = dense_projector(system)
        f = p @ f @ p.T
        ref = tfeti_reference_operator(system)
    else:
        ref = fetidp_reference_operator(system)
    scale = max(float(np.max(np.abs(ref))), 1e-300) if ref.size else 1.0
    return float(np.max(np.abs(f - ref))) / scale if ref.size else 0.0


def projector_errors(system):
    """``(|P P - P|, |G P|)`` in the max norm."""
    p = dense_projector(system)
    idem = float(np.max(np.abs(p @ p - p))) if p.size else 0.0
    coarse = system.coarse
    gp = float(np.max(np.abs(coarse.G @ p))) if coarse.G.shape[0] and p.size else 0.0
    return idem, gp


def scaling_admissibility(system, kind):
    return admissibility_error(system.constraints, system.scaling(kind))
