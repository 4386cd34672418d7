"""Bilinear (Q1) finite element machinery on structured fine grids.

Coefficients are piecewise constant per fine cell, so every stiffness
integral is exact: the element matrix is the coefficient value times the
reference rectangle stiffness.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def element_stiffness(hx, hy):
    """Exact Q1 stiffness for a hx x hy rectangle with unit coefficient.

    Node order (0,0),(1,0),(1,1),(0,1).
    """
    sx = np.array([[2, -2, -1, 1],
                   [-2, 2, 1, -1],
                   [-1, 1, 2, -2],
                   [1, -1, -2, 2]], dtype=float)
    sy = np.array([[2, 1, -1, -2],
                   [1, 2, -2, -1],
                   [-1, -2, 2, 1],
                   [-2, -1, 1, 2]], dtype=float)
    return (hy / hx) * sx / 6.0 + (hx / hy) * sy / 6.0


def solve_spd(matrix, rhs):
    """Solve an SPD system by Cholesky factorization."""
    try:
        c = sla.cho_factor(matrix, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"matrix is not SPD: {exc}") from exc
    return sla.cho_solve(c, rhs, check_finite=False)


class LocalAssembler:
    """Per-coarse-cell Q1 assembly helper.

    All coarse cells share the same local geometry, so the sparse map from
    the r^2 local coefficient values to the dense local stiffness matrix is
    built once per mesh.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        r = mesh.r
        self.n_loc = (r + 1) ** 2
        self.ke = element_stiffness(mesh.hx, mesh.hy)

        # local element connectivity into the (r+1)^2 local node block
        ix = np.arange(r)
        xx, yy = np.meshgrid(ix, ix, indexing="xy")
        n0 = yy.ravel() * (r + 1) + xx.ravel()
        self.conn = np.column_stack([n0, n0 + 1, n0 + r + 2, n0 + r + 1])

        # sparse operator: local coefficient vector -> flattened full matrix
        rows = (self.conn[:, :, None] * self.n_loc + self.conn[:, None, :]).ravel()
        cols = np.repeat(np.arange(r * r), 16)
        vals = np.tile(self.ke.ravel(), r * r)
        self._scatter = sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_loc ** 2, r * r))

        self.interior = mesh.local_interior_mask
        self.interior_idx = np.flatnonzero(self.interior)
        self.n_interior = mesh.n_interior

        # bilinear coarse-vertex hats on the local nodes, vertex order
        # (0,0),(1,0),(1,1),(0,1)
        s = np.tile(np.arange(r + 1) / r, r + 1)
        t = np.repeat(np.arange(r + 1) / r, r + 1)
        self.hats = np.column_stack(
            [(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])

    def full_matrix(self, kappa_local):
        """Dense (n_loc, n_loc) stiffness for the local coefficient values."""
        return (self._scatter @ np.asarray(kappa_local, float)).reshape(
            self.n_loc, self.n_loc)

    def quadratic_form(self, kappa_local, values):
        """Exact energy (k grad v, grad v) over the coarse cell."""
        ve = values[self.conn]
        return float(np.einsum("e,ei,ij,ej->", kappa_local, ve, self.ke, ve))

    def load_vector(self, f_local):
        """Consistent Q1 load for a cellwise-constant source."""
        contrib = np.asarray(f_local, float) * (self.mesh.hx * self.mesh.hy / 4.0)
        out = np.zeros(self.n_loc)
        np.add.at(out, self.conn.ravel(), np.repeat(contrib, 4))
        return out


@dataclass
class LocalOperators:
    """Interior-node stiffness matrices and vertex vectors on one coarse cell.

    v0 and v1 are (n_interior, 4) with one column per coarse vertex.
    """

    cell: int
    assembler: LocalAssembler
    M0: np.ndarray
    M1: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    A0_full: np.ndarray
    A1_full: np.ndarray
    _chol_M0: tuple = field(default=None, repr=False)

    @property
    def M(self):
        return self.M0 + self.M1

    @property
    def v(self):
        return self.v0 + self.v1

    def solve_M0(self, rhs):
        """Apply the cached discrete Green's operator of the k0 part."""
        if self._chol_M0 is None:
            self._chol_M0 = sla.cho_factor(self.M0, lower=True,
                                           check_finite=False)
        return sla.cho_solve(self._chol_M0, rhs, check_finite=False)


def assemble_local_operators(mesh, cell, splitting, assembler=None):
    """Assemble M0, M1 and the per-vertex vectors v0, v1 on a coarse cell."""
    if assembler is None:
        assembler = LocalAssembler(mesh)
    cells = mesh.cell_fine_cells(cell)
    k0 = splitting.k0[cells]
    k1 = splitting.k1[cells]
    if np.any(k0 <= 0.0):
        raise ValueError("k0 must be strictly positive on every fine cell")
    a0 = assembler.full_matrix(k0)
    a1 = assembler.full_matrix(k1)
    idx = assembler.interior_idx
    return LocalOperators(
        cell=cell,
        assembler=assembler,
        M0=a0[np.ix_(idx, idx)],
        M1=a1[np.ix_(idx, idx)],
        v0=(a0 @ assembler.hats)[idx],
        v1=(a1 @ assembler.hats)[idx],
        A0_full=a0,
        A1_full=a1,
    )


# ---- global fine-grid machinery -------------------------------------------


def fine_stiffness(mesh, k):
    """Sparse global Q1 stiffness over all fine nodes."""
    k = np.asarray(k, float)
    conn = mesh.fine_element_connectivity()
    ke = element_stiffness(mesh.hx, mesh.hy)
    vals = (k[:, None, None] * ke).ravel()
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(mesh.n_fine_nodes, mesh.n_fine_nodes))


def fine_load(mesh, f):
    """Global load vector for a cellwise-constant source."""
    f = np.asarray(f, float)
    conn = mesh.fine_element_connectivity()
    contrib = f * (mesh.hx * mesh.hy / 4.0)
    out = np.zeros(mesh.n_fine_nodes)
    np.add.at(out, conn.ravel(), np.repeat(contrib, 4))
    return out


def fine_reference_solve(mesh, k, f=None):
    """Galerkin solution of -div(k grad u) = f with zero Dirichlet data."""
    k = np.asarray(k, float)
    if np.any(k <= 0.0):
        raise ValueError("coefficient must be strictly positive")
    if f is None:
        f = np.ones(mesh.n_fine_cells)
    A = fine_stiffness(mesh, k)
    F = fine_load(mesh, f)
    free = ~mesh.boundary_node_mask()
    u = np.zeros(mesh.n_fine_nodes)
    Aff = A[free][:, free].tocsc()
    u[free] = spla.spsolve(Aff, F[free])
    return u


def energy_norm(mesh, k, v, region=None):
    """Energy norm sqrt((k grad v, grad v)) on the whole domain or one cell.

    For a whole-domain norm, v holds all fine-node values; for a cell
    region it may alternatively hold the (r+1)^2 local values.
    """
    k = np.asarray(k, float)
    v = np.asarray(v, float)
    ke = element_stiffness(mesh.hx, mesh.hy)
    if region is None:
        conn = mesh.fine_element_connectivity()
        kcells = k
    else:
        cells = mesh.cell_fine_cells(region)
        kcells = k[cells] if k.size == mesh.n_fine_cells else k
        if v.size == mesh.n_fine_nodes:
            conn = mesh.fine_element_connectivity()[cells]
        else:
            r = mesh.r
            ix = np.arange(r)
            xx, yy = np.meshgrid(ix, ix, indexing="xy")
            n0 = yy.ravel() * (r + 1) + xx.ravel()
            conn = np.column_stack([n0, n0 + 1, n0 + r + 2, n0 + r + 1])
    ve = v[conn]
    val = np.einsum("e,ei,ij,ej->", kcells, ve, ke, ve)
    return float(np.sqrt(max(val, 0.0)))
