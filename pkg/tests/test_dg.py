"""Interior-penalty assembly, penalties, reduced eigensolve, densities."""

import numpy as np
import pytest

from gcalb.basis import DGBasis, LocalBasis, build_opt_basis
from gcalb.dg import (
    assemble_dg,
    estimate_penalties,
    estimate_penalty,
    reconstruct_density,
    relative_eigenvalue_error,
    solve_dg_eig,
)
from gcalb.eig import dense_reference_eig
from gcalb.errors import UnsupportedFeatureError
from gcalb.grids import Partition, UniformGrid, interpolate_to_elements
from gcalb.hamiltonian import (
    GaussianWellSpec,
    Hamiltonian,
    NonlocalExchange,
    build_gaussian_potential,
)


@pytest.fixture(scope="module")
def well_problem():
    grid = UniformGrid(lengths=2 * np.pi, points=64)
    wells = GaussianWellSpec.regular([[1.2], [3.0], [5.1]], -8.0, 0.4)
    ham = Hamiltonian(grid, 1.0, build_gaussian_potential(grid, wells))
    ref = dense_reference_eig(ham.apply, 64, 64)
    return grid, ham, ref


def _orthonormal_local(part, e, samples):
    """Project samples on an element to an LGL-orthonormal LocalBasis."""
    w = part.tensor_weights()
    sqw = np.sqrt(w)[:, None]
    u, s, _ = np.linalg.svd(sqw * samples, full_matrices=False)
    keep = s > 1e-12 * s[0]
    return LocalBasis(element_index=e, count=int(keep.sum()),
                      values=u[:, keep] / sqw, singular_values=s[keep])


def _basis_from_states(part, states):
    locs = []
    states_el = interpolate_to_elements(part, states)
    for e in range(part.n_elements):
        locs.append(_orthonormal_local(part, e, states_el[e]))
    return DGBasis(partition=part, local_bases=locs)


# ---------------------------------------------------------------------------
# penalties


def test_penalty_constant_basis_hand_assembled():
    """For a single constant basis function the generalized eigenproblem is
    1x1: face mass over element H1 mass, times the safety factor."""
    grid = UniformGrid(lengths=2 * np.pi, points=30)
    part = Partition(grid, (3,), (8,))
    c = 1.0 / np.sqrt(part.widths[0])  # L2-normalized constant
    lb = LocalBasis(element_index=0, count=1,
                    values=np.full((8, 1), c),
                    singular_values=np.ones(1))
    got = estimate_penalty(part, lb, kinetic_coeff=1.0, safety=2.0)
    # traces: phi^2 at both endpoints = 2 c^2; H1 form = L2 mass = 1
    expect = 2.0 * (2.0 * c * c) / 1.0
    assert abs(got - expect) < 1e-12


def test_penalty_matches_dense_two_basis_oracle():
    grid = UniformGrid(lengths=2 * np.pi, points=30)
    part = Partition(grid, (3,), (10,))
    rule_w = part.tensor_weights()
    x = part.lgl_axis(0, 0)
    raw = np.stack([np.ones_like(x), x - x.mean()], axis=1)
    lb = _orthonormal_local(part, 0, raw)

    got = estimate_penalty(part, lb, kinetic_coeff=1.0, safety=2.0)

    # dense generalized eigenproblem over the same 2-dim span
    phi = lb.values
    dphi = part.apply_gradient(phi, 0)
    T = np.zeros((2, 2))
    for side in (0, 1):
        tp = part.face_restrict(phi, 0, side)[0]
        tdp = part.face_restrict(dphi, 0, side)[0]
        T += np.outer(tp, tp) + np.outer(tdp, tdp)
    M = phi.T @ (rule_w[:, None] * phi) + dphi.T @ (rule_w[:, None] * dphi)
    lam = np.linalg.eigvalsh(np.linalg.solve(M, T))
    assert abs(got - 2.0 * lam.max()) < 1e-9 * max(1.0, lam.max())


def test_penalty_positive_and_grows_with_refinement(well_problem):
    grid, ham, ref = well_problem
    psi = ref.vectors[:, :4] / np.sqrt(grid.cell_volume)
    gammas = []
    for m in (2, 4):
        part = Partition(grid, (m,), (12,))
        basis = build_opt_basis(psi, part, 3)
        pen = estimate_penalties(basis, 1.0)
        assert np.all(pen.values > 0)
        gammas.append(np.max(pen.values))
    assert gammas[1] > gammas[0]  # halving elements at least doubles traces


# ---------------------------------------------------------------------------
# assembly


def test_assembled_matrix_is_symmetric(well_problem):
    grid, ham, ref = well_problem
    psi = ref.vectors[:, :5] / np.sqrt(grid.cell_volume)
    part = Partition(grid, (4,), (12,))
    basis = build_opt_basis(psi, part, 4)
    A = assemble_dg(ham, basis, estimate_penalties(basis, 1.0)).matrix
    np.testing.assert_allclose(A, A.T, atol=1e-10)


def test_single_element_planewave_block():
    """A continuous basis on one element has no jumps: the assembled
    matrix reduces to the volume form with eigenvalues c_k |k|^2."""
    grid = UniformGrid(lengths=2 * np.pi, points=32)
    part = Partition(grid, (1,), (40,))
    x = grid.axis(0)
    states = np.stack([
        np.ones_like(x) / np.sqrt(2 * np.pi),
        np.cos(x) / np.sqrt(np.pi),
        np.sin(x) / np.sqrt(np.pi),
    ], axis=1)
    basis = _basis_from_states(part, states)
    ham = Hamiltonian(grid, 0.5, np.zeros(32))
    A = assemble_dg(ham, basis, estimate_penalties(basis, 0.5)).matrix
    vals = np.sort(np.linalg.eigvalsh(A))
    np.testing.assert_allclose(vals, [0.0, 0.5, 0.5], atol=1e-10)


def test_free_particle_spectrum_via_opt_basis():
    """Opt basis from exact planewave eigenfunctions reproduces the
    analytic {0,1,1,4,4,...} spectrum."""
    grid = UniformGrid(lengths=2 * np.pi, points=48)
    ham = Hamiltonian(grid, 1.0, np.zeros(48))
    n = 5
    ref = dense_reference_eig(ham.apply, 48, n)
    psi = ref.vectors[:, :n] / np.sqrt(grid.cell_volume)
    part = Partition(grid, (4,), (16,))
    basis = build_opt_basis(psi, part, n)
    vals = solve_dg_eig(
        assemble_dg(ham, basis, estimate_penalties(basis, 1.0)), n).values
    np.testing.assert_allclose(vals, [0.0, 1.0, 1.0, 4.0, 4.0], atol=1e-9)


def test_dg_consistency_reference_basis(well_problem):
    """Reference eigenfunctions as a single-element basis reproduce the
    reference eigenvalues."""
    grid, ham, ref = well_problem
    n = 6
    psi = ref.vectors[:, :n] / np.sqrt(grid.cell_volume)
    part = Partition(grid, (1,), (64,))
    basis = _basis_from_states(part, psi)
    vals = solve_dg_eig(
        assemble_dg(ham, basis, estimate_penalties(basis, 1.0)), n).values
    assert relative_eigenvalue_error(vals, ref.values[:n]) < 1e-9


def test_local_potential_block_sparsity(well_problem):
    """Blocks between non-adjacent elements vanish for local potentials."""
    grid, ham, ref = well_problem
    psi = ref.vectors[:, :6] / np.sqrt(grid.cell_volume)
    part = Partition(grid, (4,), (12,))
    basis = build_opt_basis(psi, part, 5)
    A = assemble_dg(ham, basis, estimate_penalties(basis, 1.0)).matrix
    scale = np.abs(A).max()
    for e in range(4):
        e2 = (e + 2) % 4  # the element across the box: not face-sharing
        blk = A[basis.block(e), basis.block(e2)]
        assert np.abs(blk).max() < 1e-12 * scale


def test_variational_monotonicity_nested_opt(well_problem):
    grid, ham, ref = well_problem
    psi = ref.vectors[:, :8] / np.sqrt(grid.cell_volume)
    part = Partition(grid, (4,), (14,))
    n = 4
    sums = []
    for nb in (4, 5, 6, 7):
        basis = build_opt_basis(psi, part, nb)
        vals = solve_dg_eig(
            assemble_dg(ham, basis, estimate_penalties(basis, 1.0)), n).values
        sums.append(np.sum(vals))
    for a, b in zip(sums, sums[1:]):
        assert b <= a + 1e-10


def test_nonlocal_assembly_rejected_in_2d():
    grid = UniformGrid(lengths=(2.0, 2.0), points=(8, 8))
    part = Partition(grid, (2, 2), (4, 4))
    rng = np.random.default_rng(0)
    kernel = np.abs(rng.standard_normal((64, 64)))
    kernel = 0.5 * (kernel + kernel.T)
    orb = np.linalg.qr(rng.standard_normal((64, 2)))[0]
    nlx = NonlocalExchange(kernel, orb, 0.1, grid.cell_volume)
    ham = Hamiltonian(grid, 1.0, np.zeros(64), nonlocal_exchange=nlx)
    states = rng.standard_normal((64, 6))
    basis = _basis_from_states(part, states)
    with pytest.raises(UnsupportedFeatureError):
        assemble_dg(ham, basis, estimate_penalties(basis, 1.0))


# ---------------------------------------------------------------------------
# reduced solve and reconstruction


def test_solve_dg_eig_tiny_diagonal():
    part = Partition(UniformGrid(lengths=1.0, points=6), (3,), (3,))
    locs = [LocalBasis(element_index=e, count=1,
                       values=np.ones((3, 1)), singular_values=np.ones(1))
            for e in range(3)]
    basis = DGBasis(partition=part, local_bases=locs)
    from gcalb.dg import DGMatrix

    A = DGMatrix(matrix=np.diag([3.0, 1.0, 2.0]), basis=basis,
                 kinetic_coeff=1.0)
    sol = solve_dg_eig(A, 2)
    np.testing.assert_allclose(sol.values, [1.0, 2.0])
    np.testing.assert_allclose(np.abs(sol.coefficients),
                               [[0, 0], [1, 0], [0, 1]], atol=1e-14)


def test_solve_dg_eig_matches_charpoly_roots():
    rng = np.random.default_rng(21)
    M = rng.standard_normal((8, 8))
    M = 0.5 * (M + M.T)
    part = Partition(UniformGrid(lengths=1.0, points=8), (1,), (8,))
    locs = [LocalBasis(element_index=0, count=8,
                       values=np.eye(8), singular_values=np.ones(8))]
    basis = DGBasis(partition=part, local_bases=locs)
    from gcalb.dg import DGMatrix

    sol = solve_dg_eig(DGMatrix(matrix=M, basis=basis, kinetic_coeff=1.0), 8)
    roots = np.sort(np.real(np.roots(np.poly(M))))
    np.testing.assert_allclose(sol.values, roots, atol=1e-10)


def test_solve_dg_eig_size_guard():
    part = Partition(UniformGrid(lengths=1.0, points=4), (1,), (4,))
    locs = [LocalBasis(element_index=0, count=2,
                       values=np.ones((4, 2)), singular_values=np.ones(2))]
    basis = DGBasis(partition=part, local_bases=locs)
    from gcalb.dg import DGMatrix

    with pytest.raises(ValueError):
        solve_dg_eig(DGMatrix(matrix=np.eye(2), basis=basis,
                              kinetic_coeff=1.0), 3)


def test_density_integrates_to_occupation(well_problem):
    grid, ham, ref = well_problem
    n = 5
    psi = ref.vectors[:, :n] / np.sqrt(grid.cell_volume)
    part = Partition(grid, (4,), (16,))
    basis = build_opt_basis(psi, part, n)
    sol = solve_dg_eig(
        assemble_dg(ham, basis, estimate_penalties(basis, 1.0)), n)
    rho = reconstruct_density(basis, sol, n)
    assert abs(grid.cell_volume * np.sum(rho) - n) < 1e-6
    assert rho.shape == (grid.n_total,)

    rho1 = reconstruct_density(basis, sol, 1)
    assert abs(grid.cell_volume * np.sum(rho1) - 1.0) < 1e-8


def test_relative_eigenvalue_error_metric():
    assert relative_eigenvalue_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    got = relative_eigenvalue_error([1.1, 2.0], [1.0, 2.0])
    assert abs(got - 0.1 / 3.0) < 1e-15
    with pytest.raises(ValueError):
        relative_eigenvalue_error([1.0], [0.0] + [])
    with pytest.raises(ValueError):
        relative_eigenvalue_error([1.0, 2.0], [1.0])
