"""Interior-penalty DG discretization over element-local orthonormal bases.

The reduced operator is dense Hermitian of size N_K = sum of per-element
basis counts.  Volume terms use each element's LGL rule; face terms couple
the two traces of every (periodically wrapped) face with the symmetric
interior-penalty combination; the penalty weight per element comes from a
local generalized eigenvalue problem so that no hand-tuned constant is
needed for non-polynomial bases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import DGBasis, LocalBasis
from .errors import ConstructionError, UnsupportedFeatureError
from .grids import Partition, interpolate_to_elements
from .hamiltonian import Hamiltonian

__all__ = [
    "PenaltyParams",
    "estimate_penalty",
    "estimate_penalties",
    "DGMatrix",
    "assemble_dg",
    "DGEigenSolution",
    "solve_dg_eig",
    "ProjectorDG",
    "reconstruct_orbitals",
    "reconstruct_density",
    "projector_kernel",
    "relative_eigenvalue_error",
]

DEFAULT_PENALTY_SAFETY = 2.0


@dataclass(frozen=True)
class PenaltyParams:
    """Per-element jump penalties gamma_kappa > 0."""

    values: np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.values) > 0.0)):
            raise ValueError("penalties must be positive")


def _face_forms(partition: Partition, basis: LocalBasis):
    """Surface and H1 quadratic forms of the local basis on its element."""
    phi = basis.values
    w = partition.tensor_weights()
    grads = [partition.apply_gradient(phi, d) for d in range(partition.dim)]
    G = phi.T @ (w[:, None] * phi)
    for gd in grads:
        G += gd.T @ (w[:, None] * gd)
    F = np.zeros_like(G)
    for d in range(partition.dim):
        wf = partition.face_weights(d)
        for side in (0, 1):
            tv = partition.face_restrict(phi, d, side)
            tg = partition.face_restrict(grads[d], d, side)
            F += tv.T @ (wf[:, None] * tv) + tg.T @ (wf[:, None] * tg)
    return F, G


def estimate_penalty(partition: Partition, basis: LocalBasis,
                     kinetic_coeff: float,
                     safety: float = DEFAULT_PENALTY_SAFETY) -> float:
    """Penalty for one element: safety * c_k * lambda_max of the face-trace
    form against the element H1 form over the local basis span."""
    F, G = _face_forms(partition, basis)
    try:
        lam = scipy.linalg.eigh(
            0.5 * (F + F.T), 0.5 * (G + G.T), eigvals_only=True
        )
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ConstructionError(
            f"penalty estimation failed on element {basis.element_index}: "
            f"degenerate H1 Gram ({exc})"
        ) from exc
    return float(safety * kinetic_coeff * lam[-1])


def estimate_penalties(basis: DGBasis, kinetic_coeff: float,
                       safety: float = DEFAULT_PENALTY_SAFETY) -> PenaltyParams:
    vals = np.array(
        [
            estimate_penalty(basis.partition, lb, kinetic_coeff, safety)
            for lb in basis.local_bases
        ]
    )
    return PenaltyParams(values=vals)


@dataclass
class DGMatrix:
    """Dense Hermitian reduced operator with the element block map."""

    matrix: np.ndarray
    basis: DGBasis
    kinetic_coeff: float

    @property
    def n_total(self) -> int:
        return self.matrix.shape[0]


def assemble_dg(ham: Hamiltonian, basis: DGBasis,
                penalties: PenaltyParams) -> DGMatrix:
    """Assemble the interior-penalty bilinear form over the basis.

    Volume: c_k (grad w, grad v) + (V w, v) per element.  Faces (each
    visited once, from its low-side element): the symmetric consistency
    terms -c_k(<dw/dn>, [v]) - c_k([w], <dv/dn>) plus the mean-penalty jump
    term.  The optional nonlocal exchange term is integrated on the global
    uniform grid (1D only) and is dense across elements.
    """
    partition = basis.partition
    if partition.grid is not ham.grid and partition.grid.points != ham.grid.points:
        raise ValueError("basis partition and Hamiltonian grid disagree")
    ck = ham.kinetic_coeff
    gamma = penalties.values
    if gamma.shape[0] != partition.n_elements:
        raise ValueError("penalty count does not match element count")
    N = basis.n_total
    A = np.zeros((N, N))
    V_el = interpolate_to_elements(partition, ham.local_potential)
    w = partition.tensor_weights()

    grads_cache = []
    for e, lb in enumerate(basis.local_bases):
        phi = lb.values
        grads = [partition.apply_gradient(phi, d) for d in range(partition.dim)]
        grads_cache.append(grads)
        blk = basis.block(e)
        vol = phi.T @ ((w * V_el[e])[:, None] * phi)
        for gd in grads:
            vol += ck * (gd.T @ (w[:, None] * gd))
        A[blk, blk] += vol

    for e in range(partition.n_elements):
        blk = basis.block(e)
        phi = basis.local_bases[e].values
        for d in range(partition.dim):
            en = partition.neighbor(e, d, +1)
            blkn = basis.block(en)
            phin = basis.local_bases[en].values
            wf = partition.face_weights(d)
            v = partition.face_restrict(phi, d, 1)
            g = partition.face_restrict(grads_cache[e][d], d, 1)
            vp = partition.face_restrict(phin, d, 0)
            gp = partition.face_restrict(grads_cache[en][d], d, 0)
            gbar = 0.5 * (gamma[e] + gamma[en])
            wv = wf[:, None] * v
            wvp = wf[:, None] * vp
            A[blk, blk] += -0.5 * ck * (g.T @ wv + wv.T @ g) + gbar * (v.T @ wv)
            K_cross = (
                0.5 * ck * (g.T @ wvp)
                - 0.5 * ck * (wv.T @ gp)
                - gbar * (v.T @ wvp)
            )
            A[blk, blkn] += K_cross
            A[blkn, blk] += K_cross.T
            A[blkn, blkn] += 0.5 * ck * (gp.T @ wvp + wvp.T @ gp) + gbar * (
                vp.T @ wvp
            )

    if ham.nonlocal_exchange is not None:
        if partition.dim != 1:
            raise UnsupportedFeatureError(
                "nonlocal exchange assembly is supported in 1D only"
            )
        Mx = ham.nonlocal_exchange.matrix()
        h = ham.grid.cell_volume
        evals = []
        idxs = []
        for e, lb in enumerate(basis.local_bases):
            m = partition.multi_index(e)[0]
            E = partition.grid_eval_matrix(0, m, closed=False)
            evals.append(E @ lb.values)
            idxs.append(partition.grid_indices(0, m, closed=False))
        for e in range(partition.n_elements):
            for e2 in range(partition.n_elements):
                blk, blk2 = basis.block(e), basis.block(e2)
                A[blk, blk2] += h * (
                    evals[e].T @ Mx[np.ix_(idxs[e], idxs[e2])] @ evals[e2]
                )

    A = 0.5 * (A + A.T)
    return DGMatrix(matrix=A, basis=basis, kinetic_coeff=ck)


@dataclass
class DGEigenSolution:
    values: np.ndarray
    coefficients: np.ndarray
    n: int


def solve_dg_eig(dgm: DGMatrix, n: int) -> DGEigenSolution:
    """Lowest n eigenpairs of the reduced dense Hermitian operator."""
    if n > dgm.n_total:
        raise ValueError(f"requested {n} pairs from a {dgm.n_total}-dim operator")
    vals, vecs = scipy.linalg.eigh(dgm.matrix, subset_by_index=(0, n - 1))
    return DGEigenSolution(values=vals, coefficients=vecs, n=n)


@dataclass
class ProjectorDG:
    """Rank-n spectral projector in basis coefficients, stored as a factor
    (Gamma = C C^T)."""

    factor: np.ndarray

    @property
    def rank(self) -> int:
        return self.factor.shape[1]

    def matrix(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def trace(self) -> float:
        return float(np.sum(self.factor**2))

    def idempotency_error(self) -> float:
        G = self.factor.T @ self.factor
        return float(np.linalg.norm(G - np.eye(self.rank)))


def reconstruct_orbitals(basis: DGBasis, coefficients: np.ndarray) -> np.ndarray:
    """Evaluate basis-expanded states on the uniform grid, (n_grid, n).

    Each grid point is owned by exactly one element (half-open boxes), so
    the piecewise-polynomial states are single-valued on the grid.
    """
    partition = basis.partition
    grid = partition.grid
    coefficients = np.asarray(coefficients)
    single = coefficients.ndim == 1
    C = coefficients[:, None] if single else coefficients
    n = C.shape[1]
    out = np.zeros(grid.points + (n,))
    for e, lb in enumerate(basis.local_bases):
        multi = partition.multi_index(e)
        vals = lb.values @ C[basis.block(e)]
        t = vals.reshape(partition.element_shape + (n,))
        gidx = []
        for d in range(partition.dim):
            E = partition.grid_eval_matrix(d, multi[d], closed=False)
            t = np.moveaxis(np.tensordot(E, t, axes=([1], [d])), 0, d)
            gidx.append(partition.grid_indices(d, multi[d], closed=False))
        out[np.ix_(*gidx)] += t
    out = out.reshape(grid.n_total, n)
    return out[:, 0] if single else out


def reconstruct_density(basis: DGBasis, sol: DGEigenSolution,
                        n_occupied: int = None) -> np.ndarray:
    """Sum of squares of the lowest occupied states on the uniform grid."""
    n_occ = sol.n if n_occupied is None else n_occupied
    psi = reconstruct_orbitals(basis, sol.coefficients[:, :n_occ])
    return np.sum(psi**2, axis=1)


def projector_kernel(basis: DGBasis, sol: DGEigenSolution,
                     n_occupied: int = None) -> np.ndarray:
    """Dense P(x, x') on grid points from the occupied states (1D only)."""
    if basis.partition.dim != 1:
        raise UnsupportedFeatureError("dense kernel reconstruction is 1D only")
    n_occ = sol.n if n_occupied is None else n_occupied
    psi = reconstruct_orbitals(basis, sol.coefficients[:, :n_occ])
    return psi @ psi.T


def relative_eigenvalue_error(computed, reference) -> float:
    """Sum of absolute eigenvalue errors over the sum of |reference|."""
    c = np.asarray(computed, dtype=float)
    r = np.asarray(reference, dtype=float)
    if c.shape != r.shape:
        raise ValueError("eigenvalue lists must have equal length")
    den = float(np.sum(np.abs(r)))
    if den == 0.0:
        raise ValueError("reference eigenvalues sum to zero; metric undefined")
    return float(np.sum(np.abs(c - r)) / den)
