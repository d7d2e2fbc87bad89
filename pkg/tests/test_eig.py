"""Reference eigensolvers: LOBPCG and the dense oracle."""

import numpy as np
import pytest

from gcalb.eig import dense_reference_eig, lobpcg, pseudospectral_lowest
from gcalb.grids import UniformGrid
from gcalb.hamiltonian import (
    GaussianWellSpec,
    Hamiltonian,
    build_gaussian_potential,
)


def _well_ham(points, centers, depth=-10.0, sigma=0.2, length=2 * np.pi):
    grid = UniformGrid(lengths=length, points=points)
    wells = GaussianWellSpec.regular(centers, depth, sigma)
    return grid, Hamiltonian(grid, 1.0, build_gaussian_potential(grid, wells))


def test_dense_reference_free_particle():
    grid = UniformGrid(lengths=2 * np.pi, points=8)
    ham = Hamiltonian(grid, 1.0, np.zeros(8))
    res = dense_reference_eig(ham.apply, 8, 8)
    np.testing.assert_allclose(res.values, [0, 1, 1, 4, 4, 9, 9, 16],
                               atol=1e-11)


def test_dense_reference_sorts_ascending():
    # potential dominating the kinetic term on a tiny grid
    grid = UniformGrid(lengths=2 * np.pi, points=4)
    v = np.array([30.0, 10.0, 20.0, 40.0])
    ham = Hamiltonian(grid, 1.0, v)
    res = dense_reference_eig(ham.apply, 4, 4)
    assert np.all(np.diff(res.values) >= 0)


def test_dense_reference_materialization_is_hermitian():
    grid, ham = _well_ham(32, [[2.0], [5.0]])
    H = ham.apply(np.eye(32))
    np.testing.assert_allclose(H, H.conj().T, atol=1e-12)


def test_dense_reference_size_guard():
    with pytest.raises(ValueError):
        dense_reference_eig(lambda x: x, 5000, 3)


def test_lobpcg_laplacian_spectrum():
    grid = UniformGrid(lengths=2 * np.pi, points=32)
    ham = Hamiltonian(grid, 1.0, np.zeros(32))
    res = pseudospectral_lowest(ham, 3, tol=1e-11)
    np.testing.assert_allclose(res.values, [0.0, 1.0, 1.0], atol=1e-10)


def test_lobpcg_matches_dense_oracle():
    grid, ham = _well_ham(64, [[1.5], [4.0]])
    res = pseudospectral_lowest(ham, 4, tol=1e-12)
    oracle = dense_reference_eig(ham.apply, 64, 4)
    np.testing.assert_allclose(res.values, oracle.values, atol=1e-10)
    # eigenvectors come back Euclidean-orthonormal
    gram = res.vectors.T @ res.vectors
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-10)


def test_lobpcg_residuals_below_tolerance():
    grid, ham = _well_ham(64, [[2.0]])
    res = pseudospectral_lowest(ham, 5, tol=1e-10)
    assert res.converged
    assert np.all(res.residual_norms[:5] <= 1e-10 * np.maximum(
        1.0, np.abs(res.values[:5])))


def test_lobpcg_seed_invariance():
    grid, ham = _well_ham(48, [[1.0], [3.5]])
    v1 = pseudospectral_lowest(ham, 4, tol=1e-11, seed=0).values
    v2 = pseudospectral_lowest(ham, 4, tol=1e-11, seed=12345).values
    np.testing.assert_allclose(v1, v2, atol=1e-9)


def test_lobpcg_small_grid_falls_back_to_dense():
    grid = UniformGrid(lengths=2 * np.pi, points=8)
    ham = Hamiltonian(grid, 1.0, np.zeros(8))
    res = pseudospectral_lowest(ham, 4)
    np.testing.assert_allclose(res.values, [0, 1, 1, 4], atol=1e-11)
    assert res.iterations == 0  # dense path


def test_nonpositive_potential_lowers_eigenvalues():
    """Interlacing sanity: adding V <= 0 to the free operator does not
    raise any eigenvalue."""
    grid = UniformGrid(lengths=2 * np.pi, points=24)
    free = dense_reference_eig(
        Hamiltonian(grid, 1.0, np.zeros(24)).apply, 24, 24)
    _, ham = _well_ham(24, [[3.0]], depth=-4.0, sigma=0.6)
    welled = dense_reference_eig(ham.apply, 24, 24)
    assert np.all(welled.values <= free.values + 1e-10)


def test_lobpcg_rejects_oversized_block():
    grid = UniformGrid(lengths=2 * np.pi, points=16)
    ham = Hamiltonian(grid, 1.0, np.zeros(16))
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        lobpcg(ham.apply, rng.standard_normal((16, 8)))
