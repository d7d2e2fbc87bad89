"""Second-order differential operators on periodic uniform grids.

The central object is :class:`Hamiltonian`, H = -c_k Laplacian + V (+ a
low-rank nonlocal exchange term), applied pseudospectrally: the kinetic part
acts in Fourier space through the exact symbol c_k |k|^2, the potential
pointwise, and exchange as a dense kernel contraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError
from .grids import UniformGrid

__all__ = [
    "GaussianWellSpec",
    "build_gaussian_potential",
    "NonlocalExchange",
    "Hamiltonian",
    "apply_shifted_laplacian_inverse",
    "SpectrumBounds",
    "estimate_spectrum_bounds",
]


@dataclass(frozen=True)
class GaussianWellSpec:
    """A sum of Gaussian wells on a periodic box.

    V(x) = sum_i depth_i * exp(-|x - c_i|^2 / (2 sigma_i^2)), with the
    periodic minimum-image distance; well depths are negative.
    """

    centers: np.ndarray
    depths: np.ndarray
    sigmas: np.ndarray

    @classmethod
    def regular(cls, centers, depth, sigma):
        """All wells share one (negative) depth and one width."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        m = centers.shape[0]
        return cls(
            centers=centers,
            depths=np.full(m, float(depth)),
            sigmas=np.full(m, float(sigma)),
        )


def _min_image(delta, length):
    """Wrap coordinate differences into [-L/2, L/2)."""
    return delta - length * np.round(delta / length)


def build_gaussian_potential(grid: UniformGrid, wells: GaussianWellSpec) -> np.ndarray:
    """Sample the Gaussian-well potential on all grid points, (n_total,)."""
    pts = grid.coords()
    centers = np.atleast_2d(wells.centers)
    if centers.shape[1] != grid.dim:
        raise ValueError("well centers do not match grid dimension")
    if np.any(np.asarray(wells.sigmas) <= 0):
        raise ValueError("well widths must be positive")
    v = np.zeros(grid.n_total)
    for c, z, s in zip(centers, wells.depths, wells.sigmas):
        d2 = np.zeros(grid.n_total)
        for d in range(grid.dim):
            d2 += _min_image(pts[:, d] - c[d], grid.lengths[d]) ** 2
        v += z * np.exp(-d2 / (2.0 * s * s))
    return v


class NonlocalExchange:
    """Nonlocal exchange operator -alpha * h^d * (K o P) acting on grid
    fields, where K is an interaction kernel on grid-point pairs, P the
    density matrix built from grid-orthonormal orbitals, and ``o`` the
    entrywise product."""

    def __init__(self, kernel: np.ndarray, orbitals: np.ndarray,
                 exchange_fraction: float, cell_volume: float):
        n = kernel.shape[0]
        if kernel.shape != (n, n):
            raise ValueError("kernel must be square")
        if orbitals.shape[0] != n:
            raise ValueError("orbitals do not match kernel size")
        self.kernel = kernel
        self.orbitals = orbitals
        self.exchange_fraction = float(exchange_fraction)
        self.cell_volume = float(cell_volume)
        self._matrix = None

    @property
    def density_matrix(self) -> np.ndarray:
        return self.orbitals @ self.orbitals.T

    def matrix(self) -> np.ndarray:
        """Dense representation of the exchange operator (cached)."""
        if self._matrix is None:
            self._matrix = (
                -self.exchange_fraction
                * self.cell_volume
                * (self.kernel * self.density_matrix)
            )
        return self._matrix

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix() @ x


@dataclass
class Hamiltonian:
    """H = -kinetic_coeff * Laplacian + diag(local_potential) [+ exchange]
    on a periodic uniform grid, applied matrix-free."""

    grid: UniformGrid
    kinetic_coeff: float
    local_potential: np.ndarray
    nonlocal_exchange: NonlocalExchange = None
    _kin_symbol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.local_potential = np.asarray(self.local_potential, dtype=float).ravel()
        if self.local_potential.size != self.grid.n_total:
            raise ValueError("potential does not match grid size")
        self._kin_symbol = self.kinetic_coeff * self.grid.laplacian_symbol()

    @property
    def n(self) -> int:
        return self.grid.n_total

    def apply_kinetic(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        block = x.ndim == 2
        shape = self.grid.points + ((-1,) if block else ())
        v = x.reshape(shape)
        axes = tuple(range(self.grid.dim))
        sym = self._kin_symbol[..., None] if block else self._kin_symbol
        out = np.fft.ifftn(sym * np.fft.fftn(v, axes=axes), axes=axes)
        if np.isrealobj(x):
            out = out.real
        return out.reshape(x.shape)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        out = self.apply_kinetic(x)
        if x.ndim == 2:
            out += self.local_potential[:, None] * x
        else:
            out += self.local_potential * x
        if self.nonlocal_exchange is not None:
            out += self.nonlocal_exchange.apply(x)
        return out

    __call__ = apply

    def rayleigh(self, x: np.ndarray) -> float:
        """Rayleigh quotient of a single real field."""
        num = self.grid.inner(x, self.apply(x))
        den = self.grid.inner(x, x)
        return float(np.real(num / den))


def apply_shifted_laplacian_inverse(grid: UniformGrid, kinetic_coeff: float,
                                    shift, x: np.ndarray) -> np.ndarray:
    """Solve (-kinetic_coeff * Laplacian - shift) u = x spectrally.

    ``shift`` may be complex (resolvent preconditioning); the solve is exact
    on the grid.  Raises if the shift collides with the kinetic spectrum.
    """
    den = kinetic_coeff * grid.laplacian_symbol() - shift
    floor = 1e-14 * max(1.0, float(np.max(np.abs(den))))
    if np.min(np.abs(den)) < floor:
        raise ConstructionError(
            f"shift {shift} is numerically on the kinetic spectrum"
        )
    x = np.asarray(x)
    block = x.ndim == 2
    shape = grid.points + ((-1,) if block else ())
    v = x.reshape(shape)
    axes = tuple(range(grid.dim))
    d = den[..., None] if block else den
    out = np.fft.ifftn(np.fft.fftn(v, axes=axes) / d, axes=axes)
    if np.isrealobj(x) and not np.iscomplexobj(np.asarray(shift)):
        out = out.real
    return out.reshape(x.shape)


@dataclass(frozen=True)
class SpectrumBounds:
    """Outer bounds on the spectrum of a self-adjoint operator.

    lambda_n_est (an interior eigenvalue estimate, e.g. the top of the wanted
    cluster) is filled in by callers that have run a coarse eigensolve; the
    Lanczos estimator only provides the extremes.
    """

    lambda_min_est: float
    lambda_max_est: float
    lambda_n_est: float = None

    def __post_init__(self):
        if self.lambda_min_est > self.lambda_max_est:
            raise ValueError("lower bound exceeds upper bound")
        if self.lambda_n_est is not None and not (
            self.lambda_min_est <= self.lambda_n_est <= self.lambda_max_est
        ):
            raise ValueError("interior estimate outside the bounds")


def estimate_spectrum_bounds(apply_h, n: int, rng, n_iter: int = 60,
                             inner=None) -> SpectrumBounds:
    """Lanczos bounds for a self-adjoint operator given as a matvec.

    Runs ``n_iter`` Lanczos steps from a random start and widens the extreme
    Ritz values by the final off-diagonal beta, which bounds the distance of
    each Ritz value to some true eigenvalue.  Restarts (up to 3 times) on
    early breakdown, which signals an invariant subspace.
    """
    if inner is None:
        inner = lambda u, v: np.vdot(u, v)
    for attempt in range(4):
        q = rng.standard_normal(n)
        q /= np.sqrt(np.real(inner(q, q)))
        alphas, betas = [], []
        q_prev = np.zeros_like(q)
        beta = 0.0
        broke = False
        for _ in range(min(n_iter, n)):
            w = apply_h(q)
            alpha = float(np.real(inner(q, w)))
            w = w - alpha * q - beta * q_prev
            alphas.append(alpha)
            beta = float(np.sqrt(np.real(inner(w, w))))
            if beta < 1e-12 * max(1.0, abs(alpha)):
                broke = True
                break
            betas.append(beta)
            q_prev, q = q, w / beta
        if broke and attempt < 3 and len(alphas) < 3:
            continue  # degenerate start vector; try another
        off = betas if broke else betas[:-1]
        if alphas:
            T = np.diag(alphas) + np.diag(off, 1) + np.diag(off, -1)
            theta = np.linalg.eigvalsh(T)
            margin = 0.0 if broke or not betas else betas[-1]
        else:  # pragma: no cover
            theta = np.zeros(1)
            margin = 0.0
        return SpectrumBounds(
            lambda_min_est=float(theta[0] - margin),
            lambda_max_est=float(theta[-1] + margin),
        )
    raise ConstructionError("Lanczos repeatedly broke down")  # pragma: no cover
