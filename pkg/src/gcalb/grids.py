"""Periodic uniform grids, tensor-product element partitions and
Legendre-Gauss-Lobatto (LGL) machinery.

Everything here is geometry/quadrature plumbing used by the rest of the
package: LGL rules and spectral differentiation on elements, trigonometric
(Fourier) interpolation from the global uniform grid onto element LGL grids,
and barycentric evaluation of element-local polynomials back onto uniform
grid points.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LGLRule",
    "lgl_rule",
    "barycentric_weights",
    "barycentric_matrix",
    "barycentric_interpolate",
    "differentiation_matrix",
    "lgl_differentiation",
    "UniformGrid",
    "trig_cardinal",
    "fourier_interpolate",
    "Partition",
    "Element",
    "interpolate_to_elements",
]

_NEWTON_TOL = 1e-14


@dataclass(frozen=True)
class LGLRule:
    """Legendre-Gauss-Lobatto quadrature of order ``p`` on [-1, 1].

    ``nodes`` holds the p+1 points (ascending, endpoints included) and
    ``weights`` the matching quadrature weights.  The rule integrates
    polynomials of degree <= 2p-1 exactly.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray


def _legendre_last_two(x, p):
    """Values of P_{p-1} and P_p at the points ``x`` via the three-term
    recurrence."""
    pm1 = np.ones_like(x)
    if p == 0:
        return None, pm1
    pk = x.copy()
    for k in range(1, p):
        pm1, pk = pk, ((2 * k + 1) * x * pk - k * pm1) / (k + 1)
    return pm1, pk


def lgl_rule(p: int) -> LGLRule:
    """Build the LGL rule of order ``p`` (p+1 nodes).

    Nodes are the roots of (1 - x^2) P_p'(x), found by Newton iteration
    started from the Chebyshev-Lobatto points.  Using the identity
    (x P_p - P_{p-1})' = (p+1) P_p the Newton update is closed-form.
    """
    if p < 1:
        raise ValueError(f"LGL order must be >= 1, got {p}")
    n = p + 1
    x = np.cos(np.pi * np.arange(n) / p)[::-1].copy()
    for _ in range(100):
        pm1, pk = _legendre_last_two(x, p)
        dx = (x * pk - pm1) / (n * pk)
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    else:  # pragma: no cover - the iteration converges in a handful of steps
        raise RuntimeError("LGL Newton iteration failed to converge")
    x = 0.5 * (x - x[::-1])  # enforce exact symmetry
    x[0], x[-1] = -1.0, 1.0
    _, pk = _legendre_last_two(x, p)
    w = 2.0 / (p * n * pk**2)
    return LGLRule(order=p, nodes=x, weights=w)


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    """Barycentric weights 1 / prod_{j != i} (x_i - x_j), rescaled so the
    largest magnitude is one (the formula is scaling invariant)."""
    x = np.asarray(nodes, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # work in logs to dodge overflow for large node counts
    logs = np.sum(np.log(np.abs(diff)), axis=1)
    signs = np.prod(np.sign(diff), axis=1)
    w = signs * np.exp(-(logs - logs.min()))
    return w / np.max(np.abs(w))


def barycentric_matrix(nodes, targets, bweights=None) -> np.ndarray:
    """Evaluation matrix E with E @ f_nodes = interpolant values at targets.

    Uses the second barycentric formula; rows for targets that coincide with
    a node reduce to the exact unit row.
    """
    x = np.asarray(nodes, dtype=float)
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    w = barycentric_weights(x) if bweights is None else bweights
    d = t[:, None] - x[None, :]
    exact_rows, exact_cols = np.nonzero(d == 0.0)
    d[exact_rows, exact_cols] = 1.0
    num = w[None, :] / d
    E = num / np.sum(num, axis=1)[:, None]
    if exact_rows.size:
        E[exact_rows, :] = 0.0
        E[exact_rows, exact_cols] = 1.0
    return E


def barycentric_interpolate(nodes, values, targets):
    """Evaluate the polynomial interpolant through (nodes, values) at
    targets (1D)."""
    E = barycentric_matrix(nodes, targets)
    return E @ np.asarray(values)


def differentiation_matrix(nodes, bweights=None) -> np.ndarray:
    """Spectral differentiation matrix for the Lagrange basis on ``nodes``."""
    x = np.asarray(nodes, dtype=float)
    w = barycentric_weights(x) if bweights is None else bweights
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    D = (w[None, :] / w[:, None]) / d
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -np.sum(D, axis=1))
    return D


def lgl_differentiation(rule: LGLRule, values: np.ndarray) -> np.ndarray:
    """Differentiate samples given on the nodes of ``rule`` (reference
    interval [-1, 1])."""
    values = np.asarray(values)
    if values.shape[0] != rule.order + 1:
        raise ValueError(
            f"expected {rule.order + 1} samples, got {values.shape[0]}"
        )
    return differentiation_matrix(rule.nodes) @ values


# ---------------------------------------------------------------------------
# periodic uniform grids


@dataclass
class UniformGrid:
    """Uniform tensor grid on a periodic box prod_d (0, L_d).

    Points along dimension d are x_i = i * L_d / N_d, i = 0..N_d-1.
    """

    lengths: tuple
    points: tuple
    _symbol: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.lengths = tuple(float(L) for L in np.atleast_1d(self.lengths))
        self.points = tuple(int(n) for n in np.atleast_1d(self.points))
        if not 1 <= len(self.lengths) <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        if len(self.lengths) != len(self.points):
            raise ValueError("lengths and points must have equal length")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("box lengths must be positive")
        if any(n < 2 for n in self.points):
            raise ValueError("need at least two points per dimension")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def n_total(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, d: int) -> np.ndarray:
        return np.arange(self.points[d]) * self.spacing[d]

    def wavenumbers(self, d: int) -> np.ndarray:
        """Angular wavenumbers 2*pi*m/L_d in FFT ordering."""
        n, L = self.points[d], self.lengths[d]
        return 2.0 * np.pi * np.fft.fftfreq(n, d=1.0) * n / L

    def laplacian_symbol(self) -> np.ndarray:
        """|k|^2 on the full tensor grid (FFT ordering), cached."""
        if self._symbol is None:
            ks = [self.wavenumbers(d) ** 2 for d in range(self.dim)]
            acc = np.zeros(self.points)
            for d, k2 in enumerate(ks):
                shape = [1] * self.dim
                shape[d] = self.points[d]
                acc = acc + k2.reshape(shape)
            self._symbol = acc
        return self._symbol

    def coords(self) -> np.ndarray:
        """All grid points as an (n_total, dim) array, C order."""
        axes = [self.axis(d) for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def inner(self, u, v):
        """Trapezoid (periodic) inner product h^d * sum(conj(u) v)."""
        return self.cell_volume * np.vdot(u, v)

    def norm(self, u):
        return float(np.sqrt(np.real(self.inner(u, u))))


def trig_cardinal(n: int, length: float, displacement) -> np.ndarray:
    """Periodic cardinal (Dirichlet) function of the n-point uniform grid.

    Evaluates D(s) with D(x_j - x_k) = delta_jk.  For even n the Nyquist
    mode is split symmetrically, which keeps real samples real:
    D(s) = sin(n a) cos(a) / (n sin(a)), a = pi s / L.  For odd n,
    D(s) = sin(n a) / (n sin(a)).
    """
    s = np.asarray(displacement, dtype=float)
    a = np.pi * s / length
    sa = np.sin(a)
    tiny = np.abs(sa) < 1e-14
    sa_safe = np.where(tiny, 1.0, sa)
    if n % 2 == 0:
        vals = np.sin(n * a) * np.cos(a) / (n * sa_safe)
    else:
        vals = np.sin(n * a) / (n * sa_safe)
    return np.where(tiny, 1.0, vals)


def fourier_interpolate(grid: UniformGrid, values, targets) -> np.ndarray:
    """Trigonometric interpolation of periodic grid samples at arbitrary
    points.

    ``values`` may be a single field (n_total,) or a block (n_total, q);
    ``targets`` is (m, dim) (or (m,) in 1D).  Exact for planewaves resolved
    by the grid.
    """
    values = np.asarray(values)
    t = np.asarray(targets, dtype=float)
    if grid.dim == 1 and t.ndim == 1:
        t = t[:, None]
    if t.ndim != 2 or t.shape[1] != grid.dim:
        raise ValueError(f"targets must be (m, {grid.dim})")
    block = values.ndim == 2
    v = values.reshape(grid.points + ((-1,) if block else ()))
    mats = [
        trig_cardinal(
            grid.points[d],
            grid.lengths[d],
            t[:, d][:, None] - grid.axis(d)[None, :],
        )
        for d in range(grid.dim)
    ]
    if grid.dim == 1:
        out = mats[0] @ v
    elif grid.dim == 2:
        out = np.einsum("mi,mj,ij...->m...", mats[0], mats[1], v)
    else:
        out = np.einsum("mi,mj,mk,ijk...->m...", mats[0], mats[1], mats[2], v)
    return out


# ---------------------------------------------------------------------------
# partitions and elements


class Partition:
    """Uniform tensor-product partition of a periodic box into congruent
    rectangular elements, each carrying a tensor LGL grid.

    ``elements_per_dim`` must divide the grid point counts so that element
    boundaries coincide with uniform grid points (the local-basis builders
    and density reconstruction rely on this alignment).
    """

    def __init__(self, grid: UniformGrid, elements_per_dim, lgl_points_per_dim):
        self.grid = grid
        self.elements_per_dim = tuple(int(m) for m in np.atleast_1d(elements_per_dim))
        self.lgl_points_per_dim = tuple(
            int(p) for p in np.atleast_1d(lgl_points_per_dim)
        )
        if len(self.elements_per_dim) != grid.dim:
            raise ValueError("elements_per_dim must match grid dimension")
        if len(self.lgl_points_per_dim) != grid.dim:
            raise ValueError("lgl_points_per_dim must match grid dimension")
        if any(m < 1 for m in self.elements_per_dim):
            raise ValueError("need at least one element per dimension")
        if any(p < 2 for p in self.lgl_points_per_dim):
            raise ValueError("need at least two LGL points per dimension")
        for n, m in zip(grid.points, self.elements_per_dim):
            if n % m != 0:
                raise ValueError(
                    f"elements per dim must divide grid points ({m} vs {n})"
                )
        self.rules = tuple(lgl_rule(p - 1) for p in self.lgl_points_per_dim)
        self.widths = tuple(
            L / m for L, m in zip(grid.lengths, self.elements_per_dim)
        )
        # physical 1D weights / differentiation matrices, shared by all
        # elements (the partition is uniform)
        self.weights_1d = tuple(
            r.weights * (w / 2.0) for r, w in zip(self.rules, self.widths)
        )
        self.diff_1d = tuple(
            differentiation_matrix(r.nodes) * (2.0 / w)
            for r, w in zip(self.rules, self.widths)
        )
        self._lgl_mats = None
        self._bary_cache = {}

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.elements_per_dim))

    @property
    def element_shape(self) -> tuple:
        return self.lgl_points_per_dim

    @property
    def nodes_per_element(self) -> int:
        return int(np.prod(self.lgl_points_per_dim))

    def multi_index(self, flat: int) -> tuple:
        return tuple(
            int(i) for i in np.unravel_index(flat, self.elements_per_dim)
        )

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(multi, self.elements_per_dim))

    def neighbor(self, flat: int, d: int, step: int) -> int:
        multi = list(self.multi_index(flat))
        multi[d] = (multi[d] + step) % self.elements_per_dim[d]
        return self.flat_index(multi)

    def element(self, flat: int) -> "Element":
        return Element(self, flat)

    def elements(self):
        for i in range(self.n_elements):
            yield self.element(i)

    def lgl_axis(self, d: int, m: int) -> np.ndarray:
        """Physical LGL node coordinates along dimension d in element slot m."""
        lo = m * self.widths[d]
        return lo + (self.rules[d].nodes + 1.0) * (self.widths[d] / 2.0)

    def tensor_weights(self) -> np.ndarray:
        """Physical LGL quadrature weights on one element, flattened C-order."""
        w = self.weights_1d[0]
        for d in range(1, self.dim):
            w = np.multiply.outer(w, self.weights_1d[d])
        return w.ravel()

    def apply_gradient(self, values: np.ndarray, d: int) -> np.ndarray:
        """d/dx_d of element-local nodal data (nodes, q), via the physical
        spectral differentiation matrix."""
        values = np.asarray(values)
        shape = self.element_shape + values.shape[1:]
        t = values.reshape(shape)
        out = np.tensordot(self.diff_1d[d], t, axes=([1], [d]))
        out = np.moveaxis(out, 0, d)
        return out.reshape(values.shape)

    def face_restrict(self, values: np.ndarray, d: int, side: int) -> np.ndarray:
        """Trace of element-local nodal data on the low (side=0) or high
        (side=1) face normal to dimension d."""
        values = np.asarray(values)
        shape = self.element_shape + values.shape[1:]
        t = values.reshape(shape)
        idx = -1 if side else 0
        out = np.take(t, idx, axis=d)
        n_face = self.nodes_per_element // self.element_shape[d]
        return out.reshape((n_face,) + values.shape[1:])

    def face_weights(self, d: int) -> np.ndarray:
        """Physical quadrature weights on a face normal to dimension d."""
        ws = [self.weights_1d[e] for e in range(self.dim) if e != d]
        if not ws:
            return np.ones(1)
        w = ws[0]
        for extra in ws[1:]:
            w = np.multiply.outer(w, extra)
        return w.ravel()

    def faces(self):
        """All distinct faces as (element_flat, dim) pairs; the face sits on
        the high side of the named element, its neighbor on the low side."""
        return [
            (e, d)
            for e in range(self.n_elements)
            for d in range(self.dim)
        ]

    # -- uniform-grid <-> LGL transfer -------------------------------------

    def _stacked_lgl_matrices(self):
        if self._lgl_mats is None:
            mats = []
            for d in range(self.dim):
                targets = np.concatenate(
                    [self.lgl_axis(d, m) for m in range(self.elements_per_dim[d])]
                )
                mats.append(
                    trig_cardinal(
                        self.grid.points[d],
                        self.grid.lengths[d],
                        targets[:, None] - self.grid.axis(d)[None, :],
                    )
                )
            self._lgl_mats = mats
        return self._lgl_mats

    def grid_eval_matrix(self, d: int, m: int, closed: bool = False) -> np.ndarray:
        """Barycentric matrix evaluating element-(slot m) LGL data at the
        uniform grid points inside the element along dimension d.

        With ``closed`` the right-boundary point is included (it belongs to
        the next element under the half-open ownership convention).
        """
        key = (d, m, closed)
        if key not in self._bary_cache:
            npts = self.grid.points[d] // self.elements_per_dim[d]
            lo = m * self.widths[d]
            xs = lo + np.arange(npts + (1 if closed else 0)) * self.grid.spacing[d]
            ref = 2.0 * (xs - lo) / self.widths[d] - 1.0
            self._bary_cache[key] = barycentric_matrix(self.rules[d].nodes, ref)
        return self._bary_cache[key]

    def grid_indices(self, d: int, m: int, closed: bool = False) -> np.ndarray:
        """Uniform grid indices (wrapped) covered by element slot m along d."""
        npts = self.grid.points[d] // self.elements_per_dim[d]
        start = m * npts
        stop = start + npts + (1 if closed else 0)
        return np.arange(start, stop) % self.grid.points[d]


def interpolate_to_elements(partition: Partition, values) -> np.ndarray:
    """Fourier-interpolate global grid samples onto every element LGL grid.

    Returns an array (n_elements, nodes_per_element, q) (the trailing axis is
    dropped for single fields).  All elements are handled in one tensor
    contraction per dimension.
    """
    values = np.asarray(values)
    block = values.ndim == 2
    grid = partition.grid
    v = values.reshape(grid.points + ((-1,) if block else ()))
    mats = partition._stacked_lgl_matrices()
    out = v
    for d in range(partition.dim):
        out = np.moveaxis(np.tensordot(mats[d], out, axes=([1], [d])), 0, d)
    # split each spatial axis into (element slot, node) and regroup
    shape = []
    for d in range(partition.dim):
        shape.extend([partition.elements_per_dim[d], partition.lgl_points_per_dim[d]])
    if block:
        shape.append(-1)
    out = out.reshape(shape)
    order = list(range(0, 2 * partition.dim, 2)) + list(
        range(1, 2 * partition.dim, 2)
    )
    if block:
        order.append(2 * partition.dim)
    out = np.transpose(out, order)
    final = (partition.n_elements, partition.nodes_per_element)
    if block:
        final += (values.shape[1],)
    return out.reshape(final)


class Element:
    """View of one partition element: geometry, LGL nodes and local
    interpolation."""

    def __init__(self, partition: Partition, flat: int):
        if not 0 <= flat < partition.n_elements:
            raise ValueError(f"element index {flat} out of range")
        self.partition = partition
        self.index = flat
        self.multi_index = partition.multi_index(flat)
        self.lower = tuple(
            m * w for m, w in zip(self.multi_index, partition.widths)
        )
        self.upper = tuple(
            lo + w for lo, w in zip(self.lower, partition.widths)
        )

    @property
    def widths(self) -> tuple:
        return self.partition.widths

    def lgl_axes(self):
        return [
            self.partition.lgl_axis(d, self.multi_index[d])
            for d in range(self.partition.dim)
        ]

    def node_coords(self) -> np.ndarray:
        """Physical coordinates of the tensor LGL nodes, (nodes, dim)."""
        axes = self.lgl_axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def weights(self) -> np.ndarray:
        return self.partition.tensor_weights()

    def interpolate(self, values, targets) -> np.ndarray:
        """Barycentric tensor-product evaluation of element nodal data at
        points inside the element."""
        values = np.asarray(values)
        t = np.asarray(targets, dtype=float)
        if self.partition.dim == 1 and t.ndim == 1:
            t = t[:, None]
        pad = 1e-12
        for d in range(self.partition.dim):
            if np.any(t[:, d] < self.lower[d] - pad) or np.any(
                t[:, d] > self.upper[d] + pad
            ):
                raise ValueError("target outside element")
        block = values.ndim == 2
        shape = self.partition.element_shape + ((-1,) if block else ())
        v = values.reshape(shape)
        mats = [
            barycentric_matrix(
                self.partition.rules[d].nodes,
                2.0 * (t[:, d] - self.lower[d]) / self.partition.widths[d] - 1.0,
            )
            for d in range(self.partition.dim)
        ]
        if self.partition.dim == 1:
            return mats[0] @ v
        if self.partition.dim == 2:
            return np.einsum("mi,mj,ij...->m...", mats[0], mats[1], v)
        return np.einsum(
            "mi,mj,mk,ijk...->m...", mats[0], mats[1], mats[2], v
        )
