import numpy as np
import pytest

from msfem_split import build_mesh, fine_reference_solve
from msfem_split import fem
from msfem_split import msfem
from msfem_split.field import make_splitting
from msfem_split.msfem import (assemble_coarse_system, error_report,
                               solution_error_bound, solve_msfem)


def _random_splitting(mesh, rng, amp=0.8):
    k0 = np.exp(rng.uniform(-1, 1, mesh.n_fine_cells))
    k1 = amp * k0 * rng.uniform(-1, 1, mesh.n_fine_cells)
    return make_splitting(mesh, k0, k1)


def test_constant_k_reduces_to_coarse_q1():
    mesh = build_mesh(4, 4, 3)
    k = np.full(mesh.n_fine_cells, 2.0)
    split = make_splitting(mesh, k, np.zeros_like(k))
    bases = msfem.build_basis_registry(mesh, split, "standard")
    system = assemble_coarse_system(mesh, bases, k)
    coarse = build_mesh(2, 2, 2)  # same 4x4 lattice viewed as fine cells
    A_q1 = fem.fine_stiffness(coarse, np.full(16, 2.0)).toarray()
    assert np.abs(system.A - A_q1).max() <= 1e-12


def test_coarse_system_symmetric():
    mesh = build_mesh(3, 3, 4)
    rng = np.random.default_rng(12)
    split = _random_splitting(mesh, rng)
    bases = msfem.build_basis_registry(mesh, split, "iterative", J=1)
    system = assemble_coarse_system(mesh, bases, split.k)
    assert np.abs(system.A - system.A.T).max() <= 1e-12


def test_single_cell_mesh_solution_is_zero():
    mesh = build_mesh(1, 1, 4)
    split = make_splitting(mesh, np.ones(16), np.zeros(16))
    bases = msfem.build_basis_registry(mesh, split, "standard")
    system = assemble_coarse_system(mesh, bases, split.k)
    assert system.free_vertices.size == 0
    assert np.allclose(solve_msfem(system), 0.0)


def test_zero_source_zero_solution():
    mesh = build_mesh(3, 3, 3)
    rng = np.random.default_rng(14)
    split = _random_splitting(mesh, rng)
    bases = msfem.build_basis_registry(mesh, split, "standard")
    system = assemble_coarse_system(mesh, bases, split.k,
                                    f=np.zeros(mesh.n_fine_cells))
    assert np.allclose(solve_msfem(system), 0.0)


def test_constant_k_solution_is_bilinear_prolongation():
    mesh = build_mesh(4, 4, 4)
    k = np.ones(mesh.n_fine_cells)
    split = make_splitting(mesh, k, np.zeros_like(k))
    bases = msfem.build_basis_registry(mesh, split, "standard")
    u = solve_msfem(assemble_coarse_system(mesh, bases, k))
    # coarse Q1 solve with consistent coarse load of f = 1
    uc = fine_reference_solve(build_mesh(2, 2, 2), np.ones(16))
    grid = u.reshape(mesh.nyf + 1, mesh.nxf + 1)
    cgrid = uc.reshape(5, 5)
    assert np.allclose(grid[::4, ::4], cgrid, atol=1e-12)
    # bilinear in between: midpoint of a coarse edge is the average
    assert np.isclose(grid[4, 2], (cgrid[1, 0] + cgrid[1, 1]) / 2.0)


def test_missing_basis_entry_rejected():
    mesh = build_mesh(2, 2, 3)
    rng = np.random.default_rng(15)
    split = _random_splitting(mesh, rng)
    bases = msfem.build_basis_registry(mesh, split, "standard")
    del bases[(1, 2)]
    with pytest.raises(ValueError):
        assemble_coarse_system(mesh, bases, split.k)
    with pytest.raises(ValueError):
        msfem.build_basis_registry(mesh, split, "spectral")


def test_solution_boundary_zero():
    mesh = build_mesh(3, 3, 5)
    rng = np.random.default_rng(16)
    split = _random_splitting(mesh, rng)
    bases = msfem.build_basis_registry(mesh, split, "iterative", J=0)
    u = solve_msfem(assemble_coarse_system(mesh, bases, split.k))
    assert np.allclose(u[mesh.boundary_node_mask()], 0.0)


def test_galerkin_optimality_spot_check():
    mesh = build_mesh(3, 3, 4)
    rng = np.random.default_rng(18)
    split = _random_splitting(mesh, rng)
    bases = msfem.build_basis_registry(mesh, split, "standard")
    system = assemble_coarse_system(mesh, bases, split.k)
    u_ref = fine_reference_solve(mesh, split.k)
    u_h = solve_msfem(system)
    best = fem.energy_norm(mesh, split.k, u_ref - u_h)
    free = system.free_vertices
    coeffs = np.zeros(mesh.n_coarse_vertices)
    coeffs[free] = fem.solve_spd(system.A[np.ix_(free, free)],
                                 system.F[free])
    for _ in range(5):
        pert = coeffs.copy()
        pert[free] += 0.05 * rng.standard_normal(free.size)
        u = np.zeros(mesh.n_fine_nodes)
        for cell in range(mesh.n_coarse_cells):
            verts = mesh.cell_vertices(cell)
            local = sum(pert[verts[v]] * bases[(cell, v)].values
                        for v in range(4))
            u[mesh.cell_fine_nodes(cell)] = local
        assert fem.energy_norm(mesh, split.k, u_ref - u) >= best


def test_solution_error_bound_properties():
    bounds = [solution_error_bound(J, 0.5, 2.0, 1.0)[0] for J in range(6)]
    assert all(b > 0 for b in bounds)
    assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))
    tiny = solution_error_bound(0, 1e-9, 2.0, 1.0)[0]
    assert tiny < 1e-4
    with pytest.raises(ValueError):
        solution_error_bound(0, 1.0, 2.0, 1.0)


def test_c_tilde():
    mesh = build_mesh(1, 1, 2)
    split = make_splitting(mesh, np.full(4, 2.0), np.full(4, 2.0))
    # k0/k = 1/2 so c_tilde = sqrt(2) * sqrt(1/2) = 1
    assert np.isclose(msfem.c_tilde(split), 1.0)


def test_error_report():
    mesh = build_mesh(3, 3, 3)
    rng = np.random.default_rng(19)
    split = _random_splitting(mesh, rng)
    u_ref = fine_reference_solve(mesh, split.k)
    std = msfem.build_basis_registry(mesh, split, "standard")
    it0 = msfem.build_basis_registry(mesh, split, "iterative", J=0)
    u_h = solve_msfem(assemble_coarse_system(mesh, std, split.k))
    u_J = solve_msfem(assemble_coarse_system(mesh, it0, split.k))
    rep = error_report(mesh, u_ref, u_h, u_J, split.k)
    same = error_report(mesh, u_ref, u_ref, u_ref, split.k)
    assert same.err_ref_h == same.err_h_Jh == same.err_ref_Jh == 0.0
    assert rep.err_ref_Jh <= rep.err_ref_h + rep.err_h_Jh + 1e-12
    assert rep.rel_err_h_Jh >= 0.0
    with pytest.raises(ValueError):
        error_report(mesh, u_ref[:-1], u_h, u_J, split.k)
