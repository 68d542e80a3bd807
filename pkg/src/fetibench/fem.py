"""
Bilinear quadrilateral (Q4) plane-stress elasticity on structured grids.

Node numbering inside a grid is row-major with x running fastest,
``node = j * (nx + 1) + i``, and every node carries the DOFs ``2*node`` (x) and
``2*node + 1`` (y).
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, EdgeNotOnBoundary

# local nodes counter-clockwise from the lower-left corner, in reference coordinates
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True)
class Material:
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    p: float = 3.0
    thickness: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.Emin < self.E0:
            raise DomainError(f"need 0 < Emin < E0, got Emin={self.Emin}, E0={self.E0}")
        if not 0.0 <= self.nu < 0.5:
            raise DomainError(f"Poisson ratio {self.nu} outside [0, 0.5)")
        if self.p < 1.0:
            raise DomainError(f"penalization exponent {self.p} < 1")
        if self.thickness <= 0.0:
            raise DomainError("thickness must be positive")

    def to_dict(self):
        return {"E0": self.E0, "Emin": self.Emin, "nu": self.nu, "p": self.p,
                "thickness": self.thickness}


@dataclass(frozen=True)
class StructuredMesh:
    nx: int
    ny: int
    hx: float
    hy: float
    origin: tuple = (0.0, 0.0)

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    @property
    def n_elements(self):
        return self.nx * self.ny

    def node(self, i, j):
        return j * (self.nx + 1) + i

    def coordinates(self):
        """(n_nodes, 2) array of node coordinates."""
        i = np.tile(np.arange(self.nx + 1), self.ny + 1)
        j = np.repeat(np.arange(self.ny + 1), self.nx + 1)
        return np.column_stack([self.origin[0] + i * self.hx, self.origin[1] + j * self.hy])

    def element_dofs(self):
        """(n_elements, 8) DOF connectivity, elements ordered row-major."""
        ei = np.tile(np.arange(self.nx), self.ny)
        ej = np.repeat(np.arange(self.ny), self.nx)
        n0 = ej * (self.nx + 1) + ei
        nodes = np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])
        dofs = np.empty((len(n0), 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        return dofs

    def edge_nodes(self, edge):
        """Nodes along ``"left" | "right" | "bottom" | "top"`` in increasing coordinate order."""
        if edge == "left":
            return np.array([self.node(0, j) for j in range(self.ny + 1)])
        if edge == "right":
            return np.array([self.node(self.nx, j) for j in range(self.ny + 1)])
        if edge == "bottom":
            return np.array([self.node(i, 0) for i in range(self.nx + 1)])
        if edge == "top":
            return np.array([self.node(i, self.ny) for i in range(self.nx + 1)])
        raise EdgeNotOnBoundary(f"unknown boundary edge {edge!r}")


@dataclass(frozen=True)
class SubdomainSystem:
    """Stiffness and load of one subdomain; immutable after assembly."""
    mesh: StructuredMesh
    stiffness: sp.csr_matrix
    load: np.ndarray
    moduli: np.ndarray
    module_type: int = 0

    @property
    def n_dofs(self):
        return self.mesh.n_dofs

    def dense_stiffness(self):
        return self.stiffness.toarray()

    def with_load(self, load):
        return SubdomainSystem(self.mesh, self.stiffness, np.asarray(load, dtype=float),
                               self.moduli, self.module_type)


def simp_modulus(rho, mat):
    """Young's modulus ``Emin + rho**p * (E0 - Emin)``; accepts scalars or arrays."""
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0) or np.any(np.isnan(r)):
        raise DomainError("relative density outside [0, 1]")
    out = mat.Emin + r ** mat.p * (mat.E0 - mat.Emin)
    return float(out) if out.ndim == 0 else out


def _constitutive(mat):
    c = mat.thickness / (1.0 - mat.nu ** 2)
    return c, c * mat.nu, c * 0.5 * (1.0 - mat.nu)


def unit_element_stiffness(mat, hx, hy):
    """
    Q4 plane-stress stiffness for unit Young's modulus.

    The bilinear shape-function derivative products integrate in closed form over
    a rectangle, so every entry is an explicit expression; this keeps all diagonal
    entries of one direction bit-identical, which the scaling logic relies on.
    """
    d11, d12, d33 = _constitutive(mat)
    xx = np.outer(_XI, _XI) * (1.0 + np.outer(_ETA, _ETA) / 3.0) * (hy / hx) / 4.0
    yy = np.outer(_ETA, _ETA) * (1.0 + np.outer(_XI, _XI) / 3.0) * (hx / hy) / 4.0
    xy = np.outer(_XI, _ETA) / 4.0  # integral of dNa/dx * dNb/dy
    yx = xy.T
    ke = np.empty((8, 8))
    ke[0::2, 0::2] = d11 * xx + d33 * yy
    ke[0::2, 1::2] = d12 * xy + d33 * yx
    ke[1::2, 0::2] = d12 * yx + d33 * xy
    ke[1::2, 1::2] = d11 * yy + d33 * xx
    return (ke + ke.T) * 0.5


def q4_element_stiffness(mat, modulus, hx, hy):
    if modulus <= 0.0 or hx <= 0.0 or hy <= 0.0:
        raise DomainError("modulus and element sizes must be positive")
    return modulus * unit_element_stiffness(mat, hx, hy)


def assemble_stiffness(mesh, moduli, mat):
    """Sparse stiffness for per-element moduli (row-major element order)."""
    moduli = np.asarray(moduli, dtype=float).ravel()
    if moduli.size != mesh.n_elements:
        raise DomainError(f"expected {mesh.n_elements} element moduli, got {moduli.size}")
    ke = unit_element_stiffness(mat, mesh.hx, mesh.hy)
    edofs = mesh.element_dofs()
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    vals = (moduli[:, None] * ke.ravel()[None, :]).ravel()
    n = mesh.n_dofs
    k = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # duplicate sums differ in order between (i, j) and (j, i); a + b == b + a restores exact symmetry
    k = ((k + k.T) * 0.5).tocsr()
    k.sum_duplicates()
    k.sort_indices()
    return k


def assemble_subdomain(mesh, density, mat, module_type=0):
    """
    Assemble a floating subdomain (no supports) from its density field.

    ``density`` is indexed like the elements (row-major, shape ``(ny, nx)`` or flat).
    """
    rho = np.asarray(density, dtype=float).ravel()
    if rho.size != mesh.n_elements:
        raise DomainError(f"density has {rho.size} entries, mesh has {mesh.n_elements} elements")
    moduli = simp_modulus(rho, mat)
    moduli = np.atleast_1d(moduli)
    k = assemble_stiffness(mesh, moduli, mat)
    return SubdomainSystem(mesh, k, np.zeros(mesh.n_dofs), moduli, module_type)


def traction_load(mesh, edge, traction):
    """Consistent nodal forces of a constant traction (per unit length) on one edge."""
    t = np.asarray(traction, dtype=float)
    nodes = mesh.edge_nodes(edge)
    h = mesh.hy if edge in ("left", "right") else mesh.hx
    weights = np.full(len(nodes), h)
    weights[0] = weights[-1] = 0.5 * h
    f = np.zeros(mesh.n_dofs)
    f[2 * nodes] += weights * t[0]
    f[2 * nodes + 1] += weights * t[1]
    return f


def apply_traction(subdomain, edge, traction):
    """Return a copy of ``subdomain`` with a constant edge traction added to its load."""
    return subdomain.with_load(subdomain.load + traction_load(subdomain.mesh, edge, traction))
