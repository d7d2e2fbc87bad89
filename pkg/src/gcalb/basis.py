"""Element-local orthonormal basis construction.

Three routes produce the same data structure (a DGBasis):

* build_gcalb: one global application of a filtered operator to a random
  orthonormal block, then per-element weighted SVDs of the restrictions.
* build_lcalb: per-element eigenproblems on buffered (extended) elements
  with periodic boundary conditions, restricted back and re-orthonormalized.
* build_opt_basis: per-element weighted SVDs of reference eigenfunctions
  (the best-possible basis of a given size, used as a yardstick).

"Orthonormal" always means the L2(element) inner product realized by LGL
quadrature; the weighted-SVD trick (scale rows by sqrt(w), SVD, unscale)
converts that geometry to the Euclidean one where the SVD lives.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .grids import Partition, UniformGrid, fourier_interpolate, interpolate_to_elements
from .hamiltonian import Hamiltonian, apply_shifted_laplacian_inverse
from .eig import dense_reference_eig, lobpcg

__all__ = [
    "RandomSketch",
    "random_orthonormal",
    "RangeResult",
    "randomized_range_finder",
    "LocalBasis",
    "DGBasis",
    "build_gcalb",
    "build_lcalb",
    "build_opt_basis",
]

_GUARD_VECTORS = 5
_EXT_DENSE_LIMIT = 3000
_RANK_FLOOR = 1e-14
_LCALB_DROP = 1e-12


@dataclass(frozen=True)
class RandomSketch:
    """Block of random vectors, orthonormal in the grid inner product."""

    columns: np.ndarray
    seed: int
    oversampling: int


def random_orthonormal(grid: UniformGrid, q: int, seed: int,
                       oversampling: int = 0) -> RandomSketch:
    """q i.i.d. Gaussian columns from a counter-based generator,
    orthonormalized against the grid inner product h^d * dot."""
    n = grid.n_total
    if q > n:
        raise ValueError(f"cannot draw {q} orthonormal vectors in dimension {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    A = rng.standard_normal((n, q))
    Q, _ = np.linalg.qr(A)
    return RandomSketch(
        columns=Q / np.sqrt(grid.cell_volume), seed=seed, oversampling=oversampling
    )


@dataclass
class RangeResult:
    vectors: np.ndarray
    singular_values: np.ndarray
    rank: int
    deficient: bool


def randomized_range_finder(apply_a, grid: UniformGrid, k: int, c: int = 5,
                            seed: int = 0) -> RangeResult:
    """Randomized range finder: sample W = A R with k+c probes and return
    the k leading left singular vectors of W.

    If W is numerically rank deficient (sigma_k < 1e-14 sigma_1) the result
    carries the numerical rank and sets ``deficient``.
    """
    if k + c > grid.n_total:
        raise ValueError("k + c exceeds the grid dimension")
    sketch = random_orthonormal(grid, k + c, seed, oversampling=c)
    W = apply_a(sketch.columns)
    u, s, _ = np.linalg.svd(W, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return RangeResult(
            vectors=W[:, :0], singular_values=s, rank=0, deficient=True
        )
    rank = int(np.count_nonzero(s > _RANK_FLOOR * s[0]))
    keep = min(k, rank)
    return RangeResult(
        vectors=u[:, :keep],
        singular_values=s[:keep],
        rank=rank,
        deficient=rank < k,
    )


# ---------------------------------------------------------------------------
# local bases


@dataclass
class LocalBasis:
    """Orthonormal functions on one element's tensor LGL grid.

    ``values`` has shape (nodes_per_element, count); the LGL-weighted Gram
    matrix of the columns is the identity.
    """

    element_index: int
    count: int
    values: np.ndarray
    singular_values: np.ndarray


@dataclass
class DGBasis:
    partition: Partition
    local_bases: list
    offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        counts = [lb.count for lb in self.local_bases]
        self.offsets = np.concatenate([[0], np.cumsum(counts)])

    @property
    def n_total(self) -> int:
        return int(self.offsets[-1])

    def block(self, element_index: int) -> slice:
        return slice(
            int(self.offsets[element_index]), int(self.offsets[element_index + 1])
        )


def _weighted_svd_basis(partition: Partition, element_index: int,
                        samples: np.ndarray, n_keep: int,
                        drop_tol: float = _RANK_FLOOR) -> LocalBasis:
    """Orthonormalize ``samples`` (nodes, q) in the LGL inner product and
    keep at most ``n_keep`` leading directions."""
    sqw = np.sqrt(partition.tensor_weights())
    u, s, _ = np.linalg.svd(sqw[:, None] * samples, full_matrices=False)
    if s.size and s[0] > 0.0:
        rank = int(np.count_nonzero(s > drop_tol * s[0]))
    else:
        rank = 0
    keep = min(n_keep, rank)
    return LocalBasis(
        element_index=element_index,
        count=keep,
        values=u[:, :keep] / sqw[:, None],
        singular_values=s[:keep].copy(),
    )


def build_gcalb(apply_filtered, partition: Partition, n_per_element: int,
                oversampling: int = 5, seed: int = 0) -> DGBasis:
    """Globally constructed adaptive local basis.

    ``apply_filtered`` maps a block of grid vectors to (approximately)
    their image under the spectral projector; it is applied once to a
    random orthonormal block of n_per_element + oversampling columns, and
    the restriction of the image to each element is SVD-compressed.
    """
    grid = partition.grid
    q = n_per_element + oversampling
    sketch = random_orthonormal(grid, q, seed, oversampling=oversampling)
    W = apply_filtered(sketch.columns)
    W_el = interpolate_to_elements(partition, W)
    locals_ = []
    for e in range(partition.n_elements):
        lb = _weighted_svd_basis(partition, e, W_el[e], n_per_element)
        if lb.count < n_per_element:
            warnings.warn(
                f"element {e}: filtered sketch has numerical rank {lb.count} "
                f"< requested {n_per_element}",
                stacklevel=2,
            )
        locals_.append(lb)
    return DGBasis(partition=partition, local_bases=locals_)


def _extended_element_grid(partition: Partition, multi, buffer: int):
    """Uniform grid for the buffered element: the element plus up to
    ``buffer`` neighbor layers each side per dimension (wrapped), at the
    global grid density.  Returns (grid, per-dim global index arrays)."""
    grid = partition.grid
    axes_idx = []
    lengths = []
    points = []
    for d in range(partition.dim):
        m_d = partition.elements_per_dim[d]
        g_d = grid.points[d] // m_d
        n_ext = min(m_d, 2 * buffer + 1)
        start_el = (multi[d] - min(buffer, (n_ext - 1) // 2)) % m_d
        idx = (start_el * g_d + np.arange(n_ext * g_d)) % grid.points[d]
        axes_idx.append(idx)
        lengths.append(n_ext * partition.widths[d])
        points.append(n_ext * g_d)
    return UniformGrid(lengths=tuple(lengths), points=tuple(points)), axes_idx


def build_lcalb(ham: Hamiltonian, partition: Partition, n_per_element: int,
                buffer: int = 1, tol: float = 1e-9, maxiter: int = 2000,
                seed: int = 0) -> DGBasis:
    """Locally constructed adaptive local basis: per element, solve the
    lowest-n eigenproblem of H restricted (with periodic wrap) to the
    element plus its neighbor layer, then restrict to the element and
    re-orthonormalize.
    """
    grid = partition.grid
    V_full = ham.local_potential.reshape(grid.points)
    locals_ = []
    for e in range(partition.n_elements):
        multi = partition.multi_index(e)
        ext_grid, axes_idx = _extended_element_grid(partition, multi, buffer)
        V_ext = V_full[np.ix_(*axes_idx)].ravel()
        h_ext = Hamiltonian(
            grid=ext_grid,
            kinetic_coeff=ham.kinetic_coeff,
            local_potential=V_ext,
        )
        shift = float(np.min(V_ext)) - 1.0  # safe lower bound: kinetic >= 0

        def precond(W, _g=ext_grid, _ck=ham.kinetic_coeff, _s=shift):
            return apply_shifted_laplacian_inverse(_g, _ck, _s, W)

        rng = np.random.Generator(np.random.Philox([seed, e]))
        # at least half again as many guard columns as basis functions:
        # the patch spectrum carries degenerate multiplets, and a multiplet
        # straddling the active window stalls the block iteration
        guard = max(_GUARD_VECTORS, n_per_element // 2)
        block = min(n_per_element + guard, ext_grid.n_total // 3)
        if block < n_per_element:
            raise ValueError(
                "extended element grid too small for the requested basis size"
            )
        if ext_grid.n_total <= _EXT_DENSE_LIMIT:
            # on small extended grids the block iteration has almost no room
            # to turn (3*block ~ n_ext) and stalls; a direct solve is exact
            # and faster there
            res = dense_reference_eig(h_ext.apply, ext_grid.n_total,
                                      n_per_element)
        else:
            x0 = rng.standard_normal((ext_grid.n_total, block))
            try:
                res = lobpcg(
                    h_ext.apply, x0, k_want=n_per_element, tol=tol,
                    maxiter=maxiter, precond=precond,
                )
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"extended-element eigensolve failed on element {e}: "
                    f"{exc}", best=exc.best,
                ) from exc
        # element kappa sits 'buffer-start' element slots into the extended
        # box; evaluate the eigenfunctions on kappa's LGL nodes
        offsets = []
        for d in range(partition.dim):
            m_d = partition.elements_per_dim[d]
            n_ext = min(m_d, 2 * buffer + 1)
            offsets.append(min(buffer, (n_ext - 1) // 2) * partition.widths[d])
        local_axes = [
            offsets[d]
            + (partition.rules[d].nodes + 1.0) * (partition.widths[d] / 2.0)
            for d in range(partition.dim)
        ]
        mesh = np.meshgrid(*local_axes, indexing="ij")
        targets = np.stack([m.ravel() for m in mesh], axis=1)
        samples = fourier_interpolate(ext_grid, res.vectors, targets)
        lb = _weighted_svd_basis(
            partition, e, samples, n_per_element, drop_tol=_LCALB_DROP
        )
        locals_.append(lb)
    return DGBasis(partition=partition, local_bases=locals_)


def build_opt_basis(psi_ref: np.ndarray, partition: Partition,
                    n_per_element: int) -> DGBasis:
    """Best basis of size n per element: leading left singular directions
    of the reference eigenfunctions restricted to each element."""
    n_ref = psi_ref.shape[1]
    if n_per_element > n_ref:
        warnings.warn(
            f"requested {n_per_element} basis functions from {n_ref} "
            "reference states; truncating",
            stacklevel=2,
        )
        n_per_element = n_ref
    psi_el = interpolate_to_elements(partition, psi_ref)
    locals_ = [
        _weighted_svd_basis(partition, e, psi_el[e], n_per_element)
        for e in range(partition.n_elements)
    ]
    return DGBasis(partition=partition, local_bases=locals_)
