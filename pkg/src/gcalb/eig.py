"""Block eigensolvers: LOBPCG for matrix-free operators and a dense
reference path for small problems.

Everything works in the plain Euclidean inner product; callers that need
grid-weighted normalization rescale afterwards (eigenvectors are unaffected
by a uniform weight).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError

__all__ = ["EigResult", "lobpcg", "dense_reference_eig", "pseudospectral_lowest"]

_DENSE_LIMIT = 4096
_REFRESH_EVERY = 8
_RANK_TOL = 1e-12


@dataclass
class EigResult:
    values: np.ndarray
    vectors: np.ndarray
    iterations: int
    residual_norms: np.ndarray
    converged: bool


def _orthonormalize(block, against=None):
    """SVD-based orthonormalization, projecting out ``against`` (assumed
    orthonormal) first.  Returns (Q, rank)."""
    for _ in range(2 if against is not None else 0):
        block = block - against @ (against.T @ block)
    if block.size == 0:
        return block[:, :0], 0
    u, s, _ = np.linalg.svd(block, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return block[:, :0], 0
    keep = s > _RANK_TOL * s[0]
    return u[:, keep], int(np.count_nonzero(keep))


def _orthonormalize_tracked(block, hblock, against, h_against):
    """Like :func:`_orthonormalize` but carries the operator image of the
    block through the same transform, so no fresh matvecs are needed."""
    for _ in range(2):
        c = against.T @ block
        block = block - against @ c
        hblock = hblock - h_against @ c
    if block.size == 0:
        return block[:, :0], hblock[:, :0], 0
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return block[:, :0], hblock[:, :0], 0
    keep = s > _RANK_TOL * s[0]
    transform = (vt.T / s)[:, keep]
    return u[:, keep], hblock @ transform, int(np.count_nonzero(keep))


def lobpcg(apply_h, x0, k_want: int = None, tol: float = 1e-9,
           maxiter: int = 500, precond=None):
    """Locally optimal block preconditioned conjugate gradient for the
    lowest eigenpairs of a symmetric operator given as a matvec on blocks.

    ``x0`` is an (n, m) start block with m >= k_want (extra columns act as
    guard vectors).  Convergence requires ||H x - theta x|| <=
    tol * max(1, |theta|) for the first k_want pairs.  Raises
    ConvergenceError with the best iterate attached if the budget runs out.
    """
    X = np.array(x0, dtype=float)
    n, m = X.shape
    if k_want is None:
        k_want = m
    if not 0 < k_want <= m:
        raise ValueError("need 0 < k_want <= block size")
    if 3 * m > n:
        raise ValueError("block size too large for the operator dimension")

    X, rank = _orthonormalize(X)
    if rank < m:
        raise ConvergenceError("start block is numerically rank deficient")
    HX = apply_h(X)
    T = X.T @ HX
    theta, C = np.linalg.eigh(0.5 * (T + T.T))
    X, HX = X @ C, HX @ C
    P = HP = None
    theta_full = theta
    for it in range(1, maxiter + 1):
        R = HX - X * theta
        rnorm = np.linalg.norm(R, axis=0)
        active = rnorm > tol * np.maximum(1.0, np.abs(theta))
        if not np.any(active[:k_want]):
            return EigResult(
                values=theta[:k_want].copy(),
                vectors=X[:, :k_want].copy(),
                iterations=it - 1,
                residual_norms=rnorm[:k_want].copy(),
                converged=True,
            )
        W = R[:, active]
        if precond is not None:
            W = precond(W)
        W, rw = _orthonormalize(W, against=X)
        if rw == 0:
            # residuals lie numerically inside span(X): X is an invariant
            # subspace to working precision, nothing more can be gained
            return EigResult(
                values=theta[:k_want].copy(),
                vectors=X[:, :k_want].copy(),
                iterations=it,
                residual_norms=rnorm[:k_want].copy(),
                converged=True,
            )
        HW = apply_h(W)
        blocks, hblocks = [X, W], [HX, HW]
        if P is not None and P.shape[1] > 0:
            Pq, HPq, rp = _orthonormalize_tracked(
                P, HP, np.hstack(blocks), np.hstack(hblocks)
            )
            if rp > 0:
                blocks.append(Pq)
                hblocks.append(HPq)
        S = np.hstack(blocks)
        HS = np.hstack(hblocks)
        T = S.T @ HS
        theta_full, C = np.linalg.eigh(0.5 * (T + T.T))
        C = C[:, :m]
        theta = theta_full[:m]
        Cp = C.copy()
        Cp[:m, :] = 0.0  # drop the old-X component: conjugate direction
        X, HX = S @ C, HS @ C
        P, HP = S @ Cp, HS @ Cp
        if it % _REFRESH_EVERY == 0:
            HX = apply_h(X)
            HP = apply_h(P)
            T = X.T @ HX
            theta, C2 = np.linalg.eigh(0.5 * (T + T.T))
            X, HX = X @ C2, HX @ C2
            P, HP = P @ C2, HP @ C2

    R = HX - X * theta
    rnorm = np.linalg.norm(R, axis=0)
    best = EigResult(
        values=theta[:k_want].copy(),
        vectors=X[:, :k_want].copy(),
        iterations=it,
        residual_norms=rnorm[:k_want].copy(),
        converged=False,
    )
    raise ConvergenceError(
        f"LOBPCG did not converge in {it} iterations "
        f"(worst requested residual {rnorm[:k_want].max():.3e})",
        best=best,
    )


def dense_reference_eig(apply_h, n: int, k: int) -> EigResult:
    """Lowest k eigenpairs by building the dense operator column by column
    and calling a direct symmetric solver.  Guarded to small n."""
    if n > _DENSE_LIMIT:
        raise ValueError(
            f"dense path limited to n <= {_DENSE_LIMIT} (got {n})"
        )
    H = apply_h(np.eye(n))
    H = 0.5 * (H + H.T)
    vals, vecs = scipy.linalg.eigh(H, subset_by_index=(0, k - 1))
    return EigResult(
        values=vals,
        vectors=vecs,
        iterations=0,
        residual_norms=np.zeros(k),
        converged=True,
    )


def pseudospectral_lowest(ham, k: int, *, extra: int = 5, tol: float = 1e-9,
                          maxiter: int = 500, x0=None, seed: int = 0) -> EigResult:
    """Lowest ``k`` eigenpairs of a grid Hamiltonian.

    Runs shifted-Laplacian-preconditioned LOBPCG with ``extra`` guard
    columns; ``x0`` columns (if given) seed the start block, the rest is
    drawn from a counter-based generator.  Grids too small for a block
    iteration fall back to the dense path, which is exact.
    """
    from .hamiltonian import apply_shifted_laplacian_inverse

    n = ham.grid.n_total
    block = k + extra
    if 3 * block > n:
        return dense_reference_eig(ham.apply, n, k)
    shift = float(np.min(ham.local_potential)) - 1.0
    if ham.nonlocal_exchange is not None:
        m = ham.nonlocal_exchange.matrix()
        shift -= float(np.max(np.sum(np.abs(m), axis=1)))

    def precond(W):
        return apply_shifted_laplacian_inverse(ham.grid, ham.kinetic_coeff,
                                               shift, W)

    rng = np.random.Generator(np.random.Philox([0xE16, seed]))
    start = rng.standard_normal((n, block))
    if x0 is not None:
        ncol = min(x0.shape[1], block)
        start[:, :ncol] = x0[:, :ncol]
    return lobpcg(ham.apply, start, k_want=k, tol=tol, maxiter=maxiter,
                  precond=precond)
