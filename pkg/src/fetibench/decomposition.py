"""
Regular partitions, signed Boolean constraints, rigid-body modes, the natural
coarse space, FETI-DP corner sets and interface scaling weights.

Subdomains are numbered ``s = j * sx + i`` for the subdomain in column ``i`` and
row ``j``; global nodes are numbered row-major on the global grid.
"""
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .errors import (CoarseSingular, DimensionMismatch, InsufficientCorners, NodeNotFound,
                     NotPositiveDefinite, ZeroStiffnessDiagonal)
from .fem import StructuredMesh
from .linalg import cholesky, rank_revealing_cholesky

INTERFACE = 0
DIRICHLET = 1


@dataclass(frozen=True)
class Partition:
    sx: int
    sy: int
    ex: int
    ey: int
    hx: float
    hy: float
    module_types: np.ndarray
    meshes: list
    local_to_global: list
    owners: list = field(repr=False)

    @property
    def n_subdomains(self):
        return self.sx * self.sy

    @property
    def global_nx(self):
        return self.sx * self.ex

    @property
    def global_ny(self):
        return self.sy * self.ey

    @property
    def n_global_nodes(self):
        return (self.global_nx + 1) * (self.global_ny + 1)

    @property
    def n_global_dofs(self):
        return 2 * self.n_global_nodes

    @property
    def total_subdomain_dofs(self):
        return sum(m.n_dofs for m in self.meshes)

    def global_node(self, gi, gj):
        return gj * (self.global_nx + 1) + gi

    def subdomain(self, i, j):
        return j * self.sx + i

    def position(self, s):
        return s % self.sx, s // self.sx

    def global_coordinates(self):
        gi = np.tile(np.arange(self.global_nx + 1), self.global_ny + 1)
        gj = np.repeat(np.arange(self.global_ny + 1), self.global_nx + 1)
        return np.column_stack([gi * self.hx, gj * self.hy])

    def interface_nodes(self):
        return np.array([n for n, own in enumerate(self.owners) if len(own) > 1], dtype=np.int64)

    def multiplicity(self, node):
        return len(self.owners[node])

    def global_dofs(self, s):
        g = self.local_to_global[s]
        out = np.empty(2 * len(g), dtype=np.int64)
        out[0::2] = 2 * g
        out[1::2] = 2 * g + 1
        return out


def build_partition(sx, sy, elems_per_subdomain, module_assignment=None, size=1.0):
    """
    Conforming regular partition of a rectangle into ``sx x sy`` square modules.

    Parameters
    ----------
    sx, sy : int
        Subdomain counts along x and y.
    elems_per_subdomain : int or (int, int)
        Elements per subdomain along x and y.
    module_assignment : array_like of shape (sx, sy), optional
        Integer module-type label of the subdomain in column ``i``, row ``j``.
    size : float
        Side length of one subdomain.
    """
    if np.ndim(elems_per_subdomain) == 0:
        ex = ey = int(elems_per_subdomain)
    else:
        ex, ey = (int(v) for v in elems_per_subdomain)
    if min(sx, sy, ex, ey) < 1:
        raise DimensionMismatch("subdomain and element counts must be positive")
    if module_assignment is None:
        types = np.zeros(sx * sy, dtype=np.int64)
    else:
        grid = np.asarray(module_assignment)
        if grid.shape != (sx, sy):
            raise DimensionMismatch(f"module assignment has shape {grid.shape}, expected {(sx, sy)}")
        types = np.array([grid[s % sx, s // sx] for s in range(sx * sy)], dtype=np.int64)
    hx, hy = size / ex, size / ey
    gnx = sx * ex
    li = np.tile(np.arange(ex + 1), ey + 1)
    lj = np.repeat(np.arange(ey + 1), ex + 1)
    meshes, l2g = [], []
    owners = [[] for _ in range((gnx + 1) * (sy * ey + 1))]
    for s in range(sx * sy):
        i, j = s % sx, s // sx
        meshes.append(StructuredMesh(ex, ey, hx, hy, (i * size, j * size)))
        g = (j * ey + lj) * (gnx + 1) + (i * ex + li)
        l2g.append(g)
        for local, node in enumerate(g):
            owners[node].append((s, local))
    return Partition(sx, sy, ex, ey, hx, hy, types, meshes, l2g, owners)


@dataclass
class ConstraintSet:
    """
    Signed Boolean constraints ``sum_s B^s u^s = c``.

    Each nonzero of B is an *entry* ``(row, subdomain, local dof, sign)``; rows are
    either pairwise interface rows (one +1, one -1) or Dirichlet rows (one +1).
    """
    n_rows: int
    entry_row: np.ndarray
    entry_sub: np.ndarray
    entry_dof: np.ndarray
    entry_sign: np.ndarray
    gap: np.ndarray
    row_kind: np.ndarray
    row_node: np.ndarray
    row_dir: np.ndarray
    row_multiplicity: np.ndarray
    subdomain_dofs: list
    prescribed: frozenset = frozenset()

    @property
    def n_subdomains(self):
        return len(self.subdomain_dofs)

    def entries_of(self, s):
        return np.flatnonzero(self.entry_sub == s)

    def block(self, s, values=None):
        """
        Compact block of subdomain ``s``: ``(rows, M)`` with ``M`` a CSR matrix of
        shape ``(len(rows), n_dofs_s)`` such that ``B^s = E_rows M``.
        ``values`` overrides the entry signs (used for scaled blocks).
        """
        idx = self.entries_of(s)
        rows, inv = np.unique(self.entry_row[idx], return_inverse=True)
        vals = self.entry_sign[idx] if values is None else np.asarray(values)[idx]
        m = sp.csr_matrix((vals.astype(float), (inv, self.entry_dof[idx])),
                          shape=(len(rows), self.subdomain_dofs[s]))
        return rows, m

    def matrix(self, s, values=None):
        """Full-height sparse ``B^s`` of shape ``(n_rows, n_dofs_s)``."""
        idx = self.entries_of(s)
        vals = self.entry_sign[idx] if values is None else np.asarray(values)[idx]
        return sp.csr_matrix((vals.astype(float), (self.entry_row[idx], self.entry_dof[idx])),
                             shape=(self.n_rows, self.subdomain_dofs[s]))

    def dense(self, values=None):
        """Dense ``B = [B^1 ... B^N]``; for verification on small problems."""
        return sp.hstack([self.matrix(s, values) for s in range(self.n_subdomains)]).toarray()

    def apply(self, us):
        """``B u`` for a list of subdomain vectors."""
        out = np.zeros(self.n_rows)
        np.add.at(out, self.entry_row,
                  self.entry_sign * np.array([us[s][d] for s, d in zip(self.entry_sub, self.entry_dof)]))
        return out


def parse_dirichlet(partition, dirichlet_spec):
    """Validate ``(global node, direction, value)`` triples into a dict keyed by (node, dir)."""
    out = {}
    for node, direction, value in dirichlet_spec:
        node, direction = int(node), int(direction)
        if not 0 <= node < partition.n_global_nodes:
            raise NodeNotFound(f"global node {node} not in partition")
        if direction not in (0, 1):
            raise ValueError(f"direction must be 0 or 1, got {direction}")
        out[(node, direction)] = float(value)
    return out


def build_constraints(partition, dirichlet_spec=(), primal_nodes=None, dirichlet_rows=True):
    """
    Pairwise interface rows for every shared DOF plus Dirichlet rows.

    A DOF shared by ``m`` subdomains yields all ``m(m-1)/2`` pairs. With
    ``dirichlet_rows`` every owner of a prescribed DOF gets its own Dirichlet row
    (gap = prescribed value). Otherwise prescribed DOFs are skipped entirely, as
    are DOFs of ``primal_nodes`` (FETI-DP remainder constraints).
    """
    prescribed = parse_dirichlet(partition, dirichlet_spec)
    primal = set() if primal_nodes is None else {int(n) for n in primal_nodes}
    e_row, e_sub, e_dof, e_sign = [], [], [], []
    gap, kind, rnode, rdir, rmult = [], [], [], [], []

    def add_row(entries, g, k, node, d, m):
        r = len(gap)
        for s, dof, sign in entries:
            e_row.append(r)
            e_sub.append(s)
            e_dof.append(dof)
            e_sign.append(sign)
        gap.append(g)
        kind.append(k)
        rnode.append(node)
        rdir.append(d)
        rmult.append(m)

    for node, own in enumerate(partition.owners):
        if len(own) < 2 or node in primal:
            continue
        for d in (0, 1):
            if not dirichlet_rows and (node, d) in prescribed:
                continue
            for (p, lp), (q, lq) in combinations(sorted(own), 2):
                add_row([(p, 2 * lp + d, 1.0), (q, 2 * lq + d, -1.0)], 0.0, INTERFACE, node, d, len(own))
    if dirichlet_rows:
        for (node, d), value in prescribed.items():
            own = partition.owners[node]
            for s, local in sorted(own):
                add_row([(s, 2 * local + d, 1.0)], value, DIRICHLET, node, d, len(own))
    return ConstraintSet(
        n_rows=len(gap),
        entry_row=np.array(e_row, dtype=np.int64),
        entry_sub=np.array(e_sub, dtype=np.int64),
        entry_dof=np.array(e_dof, dtype=np.int64),
        entry_sign=np.array(e_sign, dtype=float),
        gap=np.array(gap, dtype=float),
        row_kind=np.array(kind, dtype=np.int64),
        row_node=np.array(rnode, dtype=np.int64),
        row_dir=np.array(rdir, dtype=np.int64),
        row_multiplicity=np.array(rmult, dtype=np.int64),
        subdomain_dofs=[m.n_dofs for m in partition.meshes],
        prescribed=frozenset(prescribed) if dirichlet_rows else frozenset(),
    )


def rigid_body_modes(mesh):
    """x-translation, y-translation and in-plane rotation about the mesh centroid."""
    xy = mesh.coordinates()
    centroid = xy.mean(axis=0)
    n = len(xy)
    r = np.zeros((2 * n, 3))
    r[0::2, 0] = 1.0
    r[1::2, 1] = 1.0
    r[0::2, 2] = -(xy[:, 1] - centroid[1])
    r[1::2, 2] = xy[:, 0] - centroid[0]
    return r


@dataclass
class CoarseSpace:
    """Natural coarse space ``G = -R^T B^T``, ``e = -R^T f`` with dependent rows removed."""
    R: list
    G: sp.csr_matrix
    e: np.ndarray
    kept: np.ndarray
    factor: object

    @property
    def G_filtered(self):
        return self.G[self.kept]

    @property
    def e_filtered(self):
        return self.e[self.kept]

    def solve(self, b):
        """``(G G^T)^{-1} b`` on the filtered rows."""
        return self.factor.solve(b)

    def project(self, x):
        """``P x = x - G^T (G G^T)^{-1} G x``; columns of ``x`` are projected independently."""
        if len(self.kept) == 0:
            return np.array(x, dtype=float, copy=True)
        g = self.G_filtered
        return x - g.T @ self.factor.solve(g @ x)

    def initial_multipliers(self):
        """Minimum-norm ``lambda_0`` with ``G lambda_0 = e``."""
        if len(self.kept) == 0:
            return np.zeros(self.G.shape[1])
        return self.G_filtered.T @ self.factor.solve(self.e_filtered)


def build_coarse_space(constraints, subdomains, filter_tol=1e-10):
    n_sub = len(subdomains)
    rs = [rigid_body_modes(sd.mesh) for sd in subdomains]
    blocks, e = [], []
    for s, sd in enumerate(subdomains):
        bs = constraints.matrix(s)
        blocks.append(sp.csr_matrix(-(bs @ rs[s]).T))
        e.append(-rs[s].T @ sd.load)
    if n_sub:
        g = sp.vstack(blocks).tocsr()
        e = np.concatenate(e)
    else:
        g = sp.csr_matrix((0, constraints.n_rows))
        e = np.zeros(0)
    ggt = (g @ g.T).toarray()
    if g.shape[1] == 0 or not np.any(ggt):
        kept = np.arange(0)
    else:
        rrc = rank_revealing_cholesky(ggt, filter_tol)
        kept = np.sort(rrc.permutation[:rrc.rank])
    try:
        factor = cholesky(ggt[np.ix_(kept, kept)])
    except NotPositiveDefinite as exc:
        raise CoarseSingular(str(exc)) from exc
    return CoarseSpace(rs, g, e, kept, factor)


def select_corners(partition):
    """Global nodes at the vertices of the subdomain grid (FETI-DP primal nodes)."""
    nodes = [partition.global_node(i * partition.ex, j * partition.ey)
             for j in range(partition.sy + 1) for i in range(partition.sx + 1)]
    nodes = np.array(sorted(nodes), dtype=np.int64)
    corner_set = set(nodes.tolist())
    for s, g in enumerate(partition.local_to_global):
        if len(corner_set.intersection(g.tolist())) < 2:
            raise InsufficientCorners(f"subdomain {s} keeps a singular remainder block")
    return nodes


@dataclass(frozen=True)
class ScalingWeights:
    """One weight per nonzero entry of B, aligned with ``ConstraintSet.entry_*``."""
    kind: str
    values: np.ndarray

    def scaled_signs(self, constraints):
        return constraints.entry_sign * self.values


def _dirichlet_touched(constraints):
    if not constraints.prescribed:
        return np.zeros(constraints.n_rows, dtype=bool)
    keys = constraints.prescribed
    return np.array([constraints.row_kind[r] == INTERFACE and
                     (int(constraints.row_node[r]), int(constraints.row_dir[r])) in keys
                     for r in range(constraints.n_rows)], dtype=bool)


def multiplicity_scaling(constraints):
    """
    Weight ``1/m`` on both sides of a row at a DOF shared by ``m`` subdomains.

    Dirichlet rows get weight 1; interface rows at a supported DOF get weight 0,
    which is what stiffness scaling yields for an infinitely stiff support and keeps
    the weights admissible.
    """
    rows = constraints.entry_row
    w = 1.0 / constraints.row_multiplicity[rows].astype(float)
    w[constraints.row_kind[rows] == DIRICHLET] = 1.0
    w[_dirichlet_touched(constraints)[rows]] = 0.0
    return ScalingWeights("multiplicity", w)


def k_scaling(constraints, diagonals, partition):
    """
    Stiffness (k-) scaling: the side of subdomain ``p`` in a row pairing ``p`` and
    ``q`` gets ``K_q / sum_o K_o`` with the sum over every owner ``o`` of the DOF.

    Parameters
    ----------
    diagonals : list of ndarray
        ``diag(K^s)`` for each subdomain.
    """
    rows = constraints.entry_row
    w = np.empty(len(rows))
    touched = _dirichlet_touched(constraints)
    partner = {}
    for k, r in enumerate(rows):
        partner.setdefault(r, []).append(k)
    for r, ks in partner.items():
        if constraints.row_kind[r] == DIRICHLET:
            w[ks] = 1.0
            continue
        if touched[r]:
            w[ks] = 0.0
            continue
        node, d = int(constraints.row_node[r]), int(constraints.row_dir[r])
        owner_diag = [diagonals[s][2 * local + d] for s, local in partition.owners[node]]
        if min(owner_diag) <= 0.0:
            raise ZeroStiffnessDiagonal(f"nonpositive stiffness diagonal at node {node}, dir {d}")
        denom = math.fsum(owner_diag)
        a, b = ks
        ka = diagonals[constraints.entry_sub[a]][constraints.entry_dof[a]]
        kb = diagonals[constraints.entry_sub[b]][constraints.entry_dof[b]]
        w[a] = kb / denom
        w[b] = ka / denom
    return ScalingWeights("k", w)


def admissibility_error(constraints, weights):
    """``max |sum_s B^s (W^s B^s)^T B^j - B^j|`` over all ``j`` (dense; small problems only)."""
    b = constraints.dense()
    bt = constraints.dense(weights.scaled_signs(constraints))
    offsets = np.cumsum([0] + constraints.subdomain_dofs)
    m = np.zeros((constraints.n_rows, constraints.n_rows))
    for s in range(constraints.n_subdomains):
        sl = slice(offsets[s], offsets[s + 1])
        m += b[:, sl] @ bt[:, sl].T
    return float(np.max(np.abs(m @ b - b))) if b.size else 0.0
