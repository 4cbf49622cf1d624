"""Assembly of the P1 operators used by the time stepper.

All matrices share one CSR sparsity pattern per mesh (the node adjacency
graph including the diagonal), so assembly is a single ``bincount`` over the
element contributions.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateCoefficientError, MeshError

__all__ = [
    "SparsityPattern",
    "assemble_stiffness",
    "assemble_lumped_mass",
    "assemble_convection",
    "apply_dirichlet",
    "discrete_upwind",
    "element_average",
]


class SparsityPattern:
    """CSR structure of the P1 adjacency graph of a mesh.

    ``scatter`` maps each of the 9 local entries of every triangle to its
    slot in the CSR data array; ``transpose`` maps slot (i, j) to (j, i).
    """

    def __init__(self, mesh):
        n = mesh.n_nodes
        tri = mesh.triangles
        rows = np.broadcast_to(tri[:, :, None], (len(tri), 3, 3))
        cols = np.broadcast_to(tri[:, None, :], (len(tri), 3, 3))
        keys = (rows * n + cols).ravel()
        uniq, inv = np.unique(keys, return_inverse=True)
        self.n = n
        self.row = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(self.row, minlength=n))]).astype(np.int32)
        self.scatter = inv.reshape(len(tri), 3, 3)
        self.transpose = np.searchsorted(uniq, self.indices.astype(np.int64) * n + self.row)
        self.diag = np.searchsorted(uniq, np.arange(n, dtype=np.int64) * (n + 1))
        self.nnz = len(uniq)

    def build(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.scatter.ravel(), weights=local.ravel(), minlength=self.nnz)
        return self.from_data(data)

    def from_data(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def _check_positive(coeff, what):
    coeff = np.asarray(coeff, dtype=float)
    bad = np.flatnonzero(~(coeff > 0) | ~np.isfinite(coeff))
    if bad.size:
        raise DegenerateCoefficientError(
            f"{what} coefficient not positive at node {bad[0]} (value {coeff[bad[0]]!r})")
    return coeff


def element_average(mesh, nodal) -> np.ndarray:
    """Vertex average of a nodal field on every triangle."""
    return np.asarray(nodal, dtype=float)[mesh.triangles].mean(axis=1)


def assemble_stiffness(mesh, coeff) -> sp.csr_matrix:
    """``K_ij = sum_T c_T int_T grad phi_j . grad phi_i`` with ``c_T`` the vertex mean."""
    coeff = _check_positive(coeff, "stiffness")
    if coeff.shape != (mesh.n_nodes,):
        raise ValueError("coefficient must have one value per node")
    g = mesh.gradients
    cT = element_average(mesh, coeff) * mesh.areas
    local = cT[:, None, None] * np.einsum("tik,tjk->tij", g, g)
    return mesh.pattern.build(local)


def assemble_lumped_mass(mesh, weight=1.0) -> np.ndarray:
    """Diagonal of the row-lumped mass matrix, ``weight_i * |supp phi_i| / 3``."""
    return np.asarray(weight, dtype=float) * mesh.node_areas


def assemble_convection(mesh, a_coeff, u, upwind: bool = False) -> sp.csr_matrix:
    """Convection matrix with the gradient on the test side.

    ``C_ij = sum_T a_T (grad u_h . grad phi_i) |T|/3`` for every vertex j of T,
    so that ``(C w)_i = int w_h a grad u_h . grad phi_i`` under one-point
    quadrature of ``w_h``.
    """
    a_coeff = _check_positive(a_coeff, "convection")
    u = np.asarray(u, dtype=float)
    g = mesh.gradients
    grad_u = np.einsum("tk,tkd->td", u[mesh.triangles], g)
    flux = (element_average(mesh, a_coeff) * mesh.areas / 3.0)[:, None] * np.einsum("td,tid->ti", grad_u, g)
    local = np.broadcast_to(flux[:, :, None], (mesh.n_triangles, 3, 3))
    C = mesh.pattern.build(local)
    return discrete_upwind(C, mesh.pattern) if upwind else C


def discrete_upwind(A: sp.csr_matrix, pattern: SparsityPattern) -> sp.csr_matrix:
    """Add the minimal symmetric zero-row-sum diffusion that makes off-diagonals nonpositive.

    ``d_ij = max(A_ij, A_ji, 0)`` for ``i != j``.  Row sums and column sums
    of ``A`` are preserved.
    """
    data = np.asarray(A.data, dtype=float)
    if len(data) != pattern.nnz:
        raise ValueError("matrix does not use the mesh sparsity pattern")
    d = np.maximum(np.maximum(data, data[pattern.transpose]), 0.0)
    d[pattern.diag] = 0.0
    out = data - d
    out[pattern.diag] += np.bincount(pattern.row, weights=d, minlength=pattern.n)
    return pattern.from_data(out)


def apply_dirichlet(matrix, rhs, nodes, values, mesh=None):
    """Symmetric elimination of Dirichlet unknowns.

    Constrained rows and columns are zeroed, their diagonal set to one and
    the known column contributions moved to the right-hand side.  ``values``
    is a scalar or an array aligned with ``nodes``.  When ``mesh`` is given,
    every node must be a Dirichlet node of it.
    """
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    A = sp.csr_matrix(matrix, copy=True)
    rhs = np.array(rhs, dtype=float, copy=True)
    if nodes.size == 0:
        return A, rhs
    if mesh is not None:
        allowed = np.zeros(mesh.n_nodes, dtype=bool)
        allowed[mesh.dirichlet_nodes] = True
        bad = nodes[~allowed[nodes]]
        if bad.size:
            raise MeshError(f"node {bad[0]} is not marked Dirichlet")
    n = A.shape[0]
    values = np.broadcast_to(np.asarray(values, dtype=float), nodes.shape)
    fixed = np.zeros(n, dtype=bool)
    fixed[nodes] = True
    xd = np.zeros(n)
    xd[nodes] = values
    rhs -= A @ xd
    rhs[nodes] = values

    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    cols = A.indices
    A.data[fixed[rows] | fixed[cols]] = 0.0
    on_diag = fixed[rows] & (rows == cols)
    A.data[on_diag] = 1.0
    if np.count_nonzero(on_diag) < np.count_nonzero(fixed):
        missing = fixed.copy()
        missing[rows[on_diag]] = False
        A = (A + sp.diags(missing.astype(float))).tocsr()
    return A, rhs
