"""Uncertainty propagation: Monte Carlo, Smolyak collocation, cost ratios.

The parameter-reduction collocation interpolates the per-cell interior
Green's inverses over the leading m random dimensions on a nested
Clenshaw-Curtis Smolyak grid, while the remaining dimensions enter every
sample exactly through the k1 operators.
"""

import itertools
from dataclasses import dataclass, field as dc_field
from math import comb, gcd

import numpy as np

from . import basis as basis_mod
from . import fem
from . import field as field_mod
from . import msfem


def sample_theta(master_seed, index, n):
    """Reproducible i.i.d. uniform [-1,1] draw for one sample index."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([int(master_seed), int(index)])
    return rng.uniform(-1.0, 1.0, n)


# ---- Clenshaw-Curtis Smolyak sparse grid -----------------------------------


def _cc_points(level):
    """Nested 1D Clenshaw-Curtis nodes on [-1,1], with canonical keys."""
    if level == 0:
        return np.array([0.0]), [(1, 2)]
    s = 2 ** level
    pts = -np.cos(np.pi * np.arange(s + 1) / s)
    pts[0], pts[-1] = -1.0, 1.0
    pts[s // 2] = 0.0
    keys = []
    for j in range(s + 1):
        g = gcd(j, s) if j else s
        keys.append((j // g, s // g))
    return pts, keys


def _bary_weights(xs):
    w = np.ones(len(xs))
    for j, xj in enumerate(xs):
        diff = xj - np.delete(xs, j)
        w[j] = 1.0 / np.prod(diff)
    return w


def _lagrange_values(xs, bw, x):
    """All 1D Lagrange basis values at x (barycentric, exact at nodes)."""
    d = x - xs
    hit = np.isclose(d, 0.0, atol=1e-14)
    if hit.any():
        out = np.zeros(len(xs))
        out[np.argmax(hit)] = 1.0
        return out
    t = bw / d
    return t / t.sum()


class SparseGrid:
    """Smolyak combination grid in m dimensions at level L."""

    def __init__(self, m, L, max_nodes=10 ** 6):
        if m < 1 or L < 0:
            raise ValueError("need m >= 1 and L >= 0")
        if smolyak_node_count(m, L) > max_nodes:
            raise MemoryError(
                f"sparse grid would hold more than {max_nodes} nodes")
        self.m = m
        self.L = L
        self._points = {}
        self._keys = {}
        self._bary = {}
        for lev in range(L + 1):
            pts, keys = _cc_points(lev)
            self._points[lev] = pts
            self._keys[lev] = keys
            self._bary[lev] = _bary_weights(pts)

        node_index = {}
        nodes = []
        self._grids = []  # (dims, levels, coeff, flat node indices)
        for dims, levels in _active_level_sets(m, L):
            t = sum(levels)
            coeff = (-1) ** (L - t) * comb(m - 1, L - t)
            if coeff == 0:
                continue
            axes_keys = [self._keys[lev] for lev in levels]
            axes_pts = [self._points[lev] for lev in levels]
            idx = np.empty([len(a) for a in axes_keys] or [1], dtype=int)
            for pos in itertools.product(*[range(len(a)) for a in axes_keys]):
                key = [(1, 2)] * m
                for ai, (d, p) in enumerate(zip(dims, pos)):
                    key[d] = axes_keys[ai][p]
                key = tuple(key)
                gi = node_index.get(key)
                if gi is None:
                    gi = len(nodes)
                    node_index[key] = gi
                    pt = np.zeros(m)
                    for ai, (d, p) in enumerate(zip(dims, pos)):
                        pt[d] = axes_pts[ai][p]
                    nodes.append(pt)
                idx[pos if pos else (0,)] = gi
            self._grids.append((dims, levels, coeff, idx.ravel(),
                                [idx.shape[i] for i in range(idx.ndim)]))
        self.nodes = np.array(nodes) if nodes else np.zeros((1, m))

    @property
    def n_nodes(self):
        return len(self.nodes)

    def interpolation_weights(self, theta):
        """Per-node combination weights so that I_m f = sum_i w_i f(node_i)."""
        theta = np.asarray(theta, float)
        if theta.shape != (self.m,):
            raise ValueError(f"theta must have length {self.m}")
        w = np.zeros(self.n_nodes)
        for dims, levels, coeff, flat_idx, shape in self._grids:
            vals = None
            for ai, d in enumerate(dims):
                lev = levels[ai]
                lv = _lagrange_values(self._points[lev], self._bary[lev],
                                      theta[d])
                vals = lv if vals is None else np.multiply.outer(vals, lv)
            if vals is None:
                vals = np.ones(1)
            np.add.at(w, flat_idx, coeff * vals.ravel())
        return w

    def weights_matrix(self, thetas):
        return np.array([self.interpolation_weights(t) for t in thetas])


def _active_level_sets(m, L):
    """Multi-indices |levels| <= L given as (active dims, their levels >= 1)."""
    yield (), ()
    for total in range(1, L + 1):
        for k in range(1, total + 1):
            for dims in itertools.combinations(range(m), k):
                for cuts in itertools.combinations(range(1, total), k - 1):
                    parts = [b - a for a, b in
                             zip((0,) + cuts, cuts + (total,))]
                    yield dims, tuple(parts)


def smolyak_node_count(m, L):
    """Exact number of distinct nested CC Smolyak nodes."""

    def new_points(level):
        if level == 0:
            return 1
        if level == 1:
            return 2
        return 2 ** (level - 1)

    total = 0
    for dims, levels in _active_level_sets(m, L):
        prod = 1
        for lev in levels:
            prod *= new_points(lev)
        total += prod
    return total


def build_sparse_grid(m, L):
    return SparseGrid(m, L)


def cost_ratios(n, m, q, L):
    """Collocation-point ratios of reduced vs full parameter dimension."""
    if m > n:
        raise ValueError("need m <= n")
    alpha_ftc = float(q + 1) ** (m - n)
    alpha_sgc = smolyak_node_count(m, L) / smolyak_node_count(n, L)
    return alpha_ftc, alpha_sgc


# ---- precomputed Green's inverses ------------------------------------------


@dataclass
class GreenStore:
    """Per (sparse-grid node, coarse cell) interior inverses of M0."""

    mesh: object
    model: object
    grid: SparseGrid
    m: int
    matrices: np.ndarray  # (n_nodes, n_cells, n_K, n_K)


def _interior_scatter(assembler):
    """Sparse map from local coefficients to the flattened interior matrix."""
    idx = assembler.interior_idx
    n_loc = assembler.n_loc
    rows = (idx[:, None] * n_loc + idx[None, :]).ravel()
    return assembler._scatter[rows]


def precompute_green_inverses(mesh, model, grid, m, max_bytes=2 * 1024 ** 3):
    """Assemble and invert M0(node) for every cell and sparse-grid node."""
    if grid.m != m:
        raise ValueError("grid dimension must equal m")
    if m > model.n:
        raise ValueError("m must not exceed the KLE truncation")
    n_k = mesh.n_interior
    n_cells = mesh.n_coarse_cells
    need = grid.n_nodes * n_cells * n_k * n_k * 8
    if need > max_bytes:
        raise MemoryError(
            f"GreenStore needs {need} bytes > limit {max_bytes}; "
            "reduce r or the interpolation level")
    asm = fem.LocalAssembler(mesh)
    scat = _interior_scatter(asm)
    cell_ids = np.array([mesh.cell_fine_cells(c) for c in range(n_cells)])
    out = np.empty((grid.n_nodes, n_cells, n_k, n_k))
    for i, node in enumerate(grid.nodes):
        theta = np.zeros(model.n)
        theta[:m] = node
        k0 = np.exp(field_mod.log_field_partial(model, theta, m))
        mats = (scat @ k0[cell_ids].T).T.reshape(n_cells, n_k, n_k)
        out[i] = np.linalg.inv(mats)
    return GreenStore(mesh=mesh, model=model, grid=grid, m=m, matrices=out)


def _interpolated_green(store, theta0, weights=None):
    """I_m M0^-1 for every cell at one parameter point: (n_cells, nK, nK)."""
    if weights is None:
        weights = store.grid.interpolation_weights(theta0)
    flat = store.matrices.reshape(store.grid.n_nodes, -1)
    shape = store.matrices.shape[1:]
    return (weights @ flat).reshape(shape)


def interpolated_basis(store, grid, theta, cell, vertex, J,
                       green=None, operators=None):
    """Collocated basis phi_J built from the interpolated Green's inverse."""
    mesh = store.mesh
    model = store.model
    theta = np.asarray(theta, float)
    if theta.shape != (model.n,):
        raise ValueError(f"theta must have length {model.n}")
    if grid is not store.grid and grid.n_nodes != store.grid.n_nodes:
        raise ValueError("grid does not match the GreenStore")
    if green is None:
        green = _interpolated_green(store, theta[:store.m])
    if operators is None:
        split = _reduced_splitting(model, theta, store.m)
        asm = fem.LocalAssembler(mesh)
        operators = fem.assemble_local_operators(mesh, cell, split, asm)
    ops = operators
    G = green[cell]
    pi_l = G @ ops.v0[:, vertex]
    xi = G @ (ops.M1 @ pi_l - ops.v1[:, vertex])
    acc = -pi_l + xi
    for _ in range(J):
        xi = -G @ (ops.M1 @ xi)
        acc = acc + xi
    values = ops.assembler.hats[:, vertex].copy()
    values[ops.assembler.interior_idx] += acc
    return basis_mod.BasisFunction(cell, vertex, values,
                                   tag=f"collocated({J},{grid.L})")


def _reduced_splitting(model, theta, m):
    return field_mod.split_kle(model, theta, m)


def interpolated_registry(store, theta, J, green=None, operators=None):
    """Collocated bases for every (cell, vertex) at one realization."""
    mesh = store.mesh
    if green is None:
        green = _interpolated_green(store, theta[:store.m])
    if operators is None:
        split = _reduced_splitting(store.model, theta, store.m)
        asm = fem.LocalAssembler(mesh)
        operators = [fem.assemble_local_operators(mesh, c, split, asm)
                     for c in range(mesh.n_coarse_cells)]
    registry = {}
    for cell in range(mesh.n_coarse_cells):
        for v in range(4):
            registry[(cell, v)] = interpolated_basis(
                store, store.grid, theta, cell, v, J,
                green=green, operators=operators[cell])
    return registry


# ---- sampling drivers ------------------------------------------------------


@dataclass
class StochasticConfig:
    """Shared configuration of the Monte Carlo and collocation drivers."""

    mesh: object
    model: object
    m: int
    J_list: tuple
    seed: int
    f: np.ndarray = None


@dataclass
class SampleStatistics:
    """Accumulated per-run statistics of the sampling drivers."""

    N: int
    J_list: tuple
    mean_error: dict
    var_error: dict
    mean_uh: np.ndarray
    var_uh: np.ndarray
    mean_uJh: np.ndarray
    var_uJh: np.ndarray
    eta_max: float
    c_tilde_max: float
    u_energy_mean: float
    bounds: dict
    extra: dict = dc_field(default_factory=dict)


def _finalize_var(sum_, sumsq, N):
    var = sumsq / N - (sum_ / N) ** 2
    return np.clip(var, 0.0, None)


def monte_carlo_run(config, N):
    """Plain Monte Carlo over the full parameter space.

    Per sample: realize k, split at m, solve standard and iterative MsFEM
    plus the fine reference, and accumulate means/variances and the
    empirical solution-level bound.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    mesh = config.mesh
    model = config.model
    J_list = tuple(config.J_list)
    J_max = max(J_list)
    f = config.f if config.f is not None else np.ones(mesh.n_fine_cells)
    asm = fem.LocalAssembler(mesh)

    err_sum = {J: 0.0 for J in J_list}
    err_sq = {J: 0.0 for J in J_list}
    sum_uh = np.zeros(mesh.n_fine_nodes)
    sq_uh = np.zeros(mesh.n_fine_nodes)
    sum_uJ = np.zeros(mesh.n_fine_nodes)
    sq_uJ = np.zeros(mesh.n_fine_nodes)
    eta_max = 0.0
    ct_max = 0.0
    u_energy_sum = 0.0
    relerr_sum = {J: 0.0 for J in J_list}

    for s in range(N):
        try:
            theta = sample_theta(config.seed, s, model.n)
            split = field_mod.split_kle(model, theta, config.m)
            operators = [fem.assemble_local_operators(mesh, c, split, asm)
                         for c in range(mesh.n_coarse_cells)]
            std_reg = msfem.build_basis_registry(mesh, split, "standard",
                                                 operators=operators)
            it_regs = msfem.build_iterative_registries(mesh, split, J_list,
                                                       operators)
            u_h = msfem.solve_msfem(
                msfem.assemble_coarse_system(mesh, std_reg, split.k, f))
            norm_uh = fem.energy_norm(mesh, split.k, u_h)
            u_ref = fem.fine_reference_solve(mesh, split.k, f)
            u_energy_sum += fem.energy_norm(mesh, split.k, u_ref)
            eta_max = max(eta_max, split.eta_global)
            ct_max = max(ct_max, msfem.c_tilde(split))
            for J in J_list:
                u_J = msfem.solve_msfem(msfem.assemble_coarse_system(
                    mesh, it_regs[J], split.k, f))
                e = fem.energy_norm(mesh, split.k, u_h - u_J)
                err_sum[J] += e
                err_sq[J] += e * e
                relerr_sum[J] += e / norm_uh if norm_uh else 0.0
                if J == J_max:
                    sum_uJ += u_J
                    sq_uJ += u_J ** 2
            sum_uh += u_h
            sq_uh += u_h ** 2
        except Exception as exc:
            raise RuntimeError(f"sample {s} failed: {exc}") from exc

    u_energy_mean = u_energy_sum / N
    bounds = {}
    for J in J_list:
        if eta_max < 1.0:
            bounds[J] = msfem.solution_error_bound(
                J, eta_max, ct_max, u_energy_mean)[0]
        else:
            bounds[J] = np.inf
    return SampleStatistics(
        N=N, J_list=J_list,
        mean_error={J: err_sum[J] / N for J in J_list},
        var_error={J: _finalize_var(err_sum[J], err_sq[J], N)
                   for J in J_list},
        mean_uh=sum_uh / N, var_uh=_finalize_var(sum_uh, sq_uh, N),
        mean_uJh=sum_uJ / N, var_uJh=_finalize_var(sum_uJ, sq_uJ, N),
        eta_max=eta_max, c_tilde_max=ct_max,
        u_energy_mean=u_energy_mean, bounds=bounds,
        extra={"mean_rel_error": {J: relerr_sum[J] / N for J in J_list}})


def collocation_run(config, N, store, J=None):
    """Parameter-reduction collocation against Monte Carlo references.

    Per sample reports the relative total error e, splitting error e_spl
    and collocation error e_col, all normalized by |||u_h|||.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    mesh = config.mesh
    model = config.model
    if J is None:
        J = max(config.J_list)
    f = config.f if config.f is not None else np.ones(mesh.n_fine_cells)
    asm = fem.LocalAssembler(mesh)

    thetas = np.array([sample_theta(config.seed, s, model.n)
                       for s in range(N)])
    W = store.grid.weights_matrix(thetas[:, :store.m])
    flat = store.matrices.reshape(store.grid.n_nodes, -1)
    greens = (W @ flat).reshape((N,) + store.matrices.shape[1:])

    e_tot = np.empty(N)
    e_spl = np.empty(N)
    e_col = np.empty(N)
    sum_uh = np.zeros(mesh.n_fine_nodes)
    sq_uh = np.zeros(mesh.n_fine_nodes)
    sum_ut = np.zeros(mesh.n_fine_nodes)
    sq_ut = np.zeros(mesh.n_fine_nodes)
    eta_max = 0.0

    for s in range(N):
        try:
            theta = thetas[s]
            split = field_mod.split_kle(model, theta, config.m)
            eta_max = max(eta_max, split.eta_global)
            operators = [fem.assemble_local_operators(mesh, c, split, asm)
                         for c in range(mesh.n_coarse_cells)]
            std_reg = msfem.build_basis_registry(mesh, split, "standard",
                                                 operators=operators)
            it_reg = msfem.build_iterative_registries(mesh, split, [J],
                                                      operators)[J]
            col_reg = interpolated_registry(store, theta, J,
                                            green=greens[s],
                                            operators=operators)
            u_h = msfem.solve_msfem(
                msfem.assemble_coarse_system(mesh, std_reg, split.k, f))
            u_J = msfem.solve_msfem(
                msfem.assemble_coarse_system(mesh, it_reg, split.k, f))
            u_t = msfem.solve_msfem(
                msfem.assemble_coarse_system(mesh, col_reg, split.k, f))
            norm_uh = fem.energy_norm(mesh, split.k, u_h)
            e_tot[s] = fem.energy_norm(mesh, split.k, u_h - u_t) / norm_uh
            e_spl[s] = fem.energy_norm(mesh, split.k, u_h - u_J) / norm_uh
            e_col[s] = fem.energy_norm(mesh, split.k, u_J - u_t) / norm_uh
            sum_uh += u_h
            sq_uh += u_h ** 2
            sum_ut += u_t
            sq_ut += u_t ** 2
        except Exception as exc:
            raise RuntimeError(f"sample {s} failed: {exc}") from exc

    return SampleStatistics(
        N=N, J_list=(J,),
        mean_error={J: float(e_tot.mean())},
        var_error={J: float(e_tot.var())},
        mean_uh=sum_uh / N, var_uh=_finalize_var(sum_uh, sq_uh, N),
        mean_uJh=sum_ut / N, var_uJh=_finalize_var(sum_ut, sq_ut, N),
        eta_max=eta_max, c_tilde_max=0.0, u_energy_mean=0.0, bounds={},
        extra={"e": e_tot, "e_spl": e_spl, "e_col": e_col,
               "mean_e": float(e_tot.mean()),
               "mean_e_spl": float(e_spl.mean()),
               "mean_e_col": float(e_col.mean())})
