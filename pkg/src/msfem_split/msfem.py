"""Coarse-scale Galerkin assembly, downscaling and solution-level bounds."""

from dataclasses import dataclass

import numpy as np

from . import basis as basis_mod
from . import fem


@dataclass
class CoarseSystem:
    """SPD coarse stiffness over interior coarse vertices plus its registry."""

    mesh: object
    A: np.ndarray
    F: np.ndarray
    free_vertices: np.ndarray
    registry: dict


@dataclass
class SolutionReport:
    """Energy norms and pairwise errors of reference/MsFEM solutions."""

    norm_ref: float
    norm_h: float
    norm_Jh: float
    err_ref_h: float
    err_ref_Jh: float
    err_h_Jh: float
    rel_err_h_Jh: float
    rel_err_ref_Jh: float


def build_basis_registry(mesh, splitting, kind="standard", J=0,
                         operators=None):
    """One BasisFunction per (cell, vertex) for the whole mesh."""
    registries = build_iterative_registries(mesh, splitting, [J], operators) \
        if kind == "iterative" else None
    if kind == "iterative":
        return registries[J]
    if kind != "standard":
        raise ValueError(f"unknown basis kind {kind!r}")
    if operators is None:
        asm = fem.LocalAssembler(mesh)
        operators = [fem.assemble_local_operators(mesh, c, splitting, asm)
                     for c in range(mesh.n_coarse_cells)]
    registry = {}
    for cell, ops in enumerate(operators):
        for v in range(4):
            registry[(cell, v)] = basis_mod.standard_basis(ops, v)
    return registry


def build_iterative_registries(mesh, splitting, J_list, operators=None):
    """Iterative-basis registries for several J sharing the factorizations."""
    if operators is None:
        asm = fem.LocalAssembler(mesh)
        operators = [fem.assemble_local_operators(mesh, c, splitting, asm)
                     for c in range(mesh.n_coarse_cells)]
    J_max = max(J_list)
    registries = {J: {} for J in J_list}
    for cell, ops in enumerate(operators):
        for v in range(4):
            seq = basis_mod.iterative_basis_sequence(ops, v, J_max)
            for J in J_list:
                registries[J][(cell, v)] = seq[J]
    return registries


def assemble_coarse_system(mesh, bases, k, f=None):
    """Galerkin coarse system A_ij = sum_K (k grad phi_i, grad phi_j)_K."""
    k = np.asarray(k, float)
    if f is None:
        f = np.ones(mesh.n_fine_cells)
    f = np.asarray(f, float)
    asm = fem.LocalAssembler(mesh)
    nv = mesh.n_coarse_vertices
    A = np.zeros((nv, nv))
    F = np.zeros(nv)
    for cell in range(mesh.n_coarse_cells):
        verts = mesh.cell_vertices(cell)
        try:
            local = np.column_stack(
                [bases[(cell, v)].values for v in range(4)])
        except KeyError as exc:
            raise ValueError(f"basis registry missing entry {exc}") from exc
        cells = mesh.cell_fine_cells(cell)
        a_full = asm.full_matrix(k[cells])
        load = asm.load_vector(f[cells])
        A[np.ix_(verts, verts)] += local.T @ a_full @ local
        F[verts] += local.T @ load
    return CoarseSystem(mesh=mesh, A=A, F=F,
                        free_vertices=mesh.interior_coarse_vertices(),
                        registry=bases)


def solve_msfem(system):
    """Solve the coarse system and downscale onto the global fine grid."""
    mesh = system.mesh
    free = system.free_vertices
    coeffs = np.zeros(mesh.n_coarse_vertices)
    if free.size:
        coeffs[free] = fem.solve_spd(system.A[np.ix_(free, free)],
                                     system.F[free])
    u = np.zeros(mesh.n_fine_nodes)
    for cell in range(mesh.n_coarse_cells):
        verts = mesh.cell_vertices(cell)
        local = sum(coeffs[verts[v]] * system.registry[(cell, v)].values
                    for v in range(4))
        u[mesh.cell_fine_nodes(cell)] = local
    return u


def c_tilde(splitting):
    """sqrt(2) max_K ||sqrt(k0/k)||_inf entering the solution-level bounds."""
    return float(np.sqrt(2.0) * np.sqrt((splitting.k0 / splitting.k).max()))


def solution_error_bound(J, eta, c_tilde_value, u_energy, uh_error=0.0):
    """Solution-level bounds driven by eta^(J+1).

    Returns (bound on |||u_h - u_Jh|||, bound on |||u - u_Jh|||); the
    second needs the standard-MsFEM error |||u - u_h||| as uh_error.
    """
    if not eta < 1.0:
        raise ValueError("bound requires eta < 1")
    t = eta ** (J + 1)
    paren = t + t / (1.0 - t)
    b1 = np.sqrt(c_tilde_value) * np.sqrt(paren) * u_energy
    b2 = np.sqrt(2.0) * c_tilde_value * paren * u_energy + 2.0 * uh_error
    return float(b1), float(b2)


def error_report(mesh, u_ref, u_h, u_Jh, k):
    """All pairwise energy errors between reference and MsFEM solutions."""
    for v in (u_ref, u_h, u_Jh):
        if np.asarray(v).shape != (mesh.n_fine_nodes,):
            raise ValueError("solutions must live on the same fine grid")
    norm_ref = fem.energy_norm(mesh, k, u_ref)
    norm_h = fem.energy_norm(mesh, k, u_h)
    norm_Jh = fem.energy_norm(mesh, k, u_Jh)
    err_ref_h = fem.energy_norm(mesh, k, u_ref - u_h)
    err_ref_Jh = fem.energy_norm(mesh, k, u_ref - u_Jh)
    err_h_Jh = fem.energy_norm(mesh, k, u_h - u_Jh)
    return SolutionReport(
        norm_ref=norm_ref, norm_h=norm_h, norm_Jh=norm_Jh,
        err_ref_h=err_ref_h, err_ref_Jh=err_ref_Jh, err_h_Jh=err_h_Jh,
        rel_err_h_Jh=err_h_Jh / norm_h if norm_h else 0.0,
        rel_err_ref_Jh=err_ref_Jh / norm_h if norm_h else 0.0)
