"""Rational filters approximating the indicator of an interval [a, b].

The filter is a degree-(2r-1, 2r) rational function built in three steps:
a Möbius change of variables T that sends [a, b] onto the sign-approximation
band [ell, 1] and the complement onto [-1, -ell], the classical best rational
sign approximant Z on that band (coefficients from Jacobi elliptic
functions), and the affine shift f = (Z o T + 1)/2.  The partial-fraction
form (constant plus r conjugate pole pairs) is what gets applied to
operators: f(H)R costs r complex-shifted solves per column of R.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConstructionError, FilterApplicationError
from .hamiltonian import Hamiltonian, apply_shifted_laplacian_inverse
from .krylov import SolverConfig, gmres

__all__ = [
    "elliptic_K",
    "jacobi_sn_cn_dn",
    "FilterSpec",
    "MobiusMap",
    "solve_mobius",
    "ZolotarevCoeffs",
    "zolotarev_coeffs",
    "RationalFilter",
    "build_filter",
    "evaluate_filter",
    "evaluate_filter_composed",
    "FilterApplyReport",
    "apply_filter",
]


def elliptic_K(k: float) -> float:
    """Complete elliptic integral of the first kind via the
    arithmetic-geometric mean."""
    if not 0.0 <= k < 1.0:
        raise ValueError(f"modulus must satisfy 0 <= k < 1, got {k}")
    a, g = 1.0, np.sqrt(1.0 - k * k)
    for _ in range(60):
        if abs(a - g) <= 4e-16 * a:
            break
        a, g = 0.5 * (a + g), np.sqrt(a * g)
    return float(np.pi / (2.0 * a))


def jacobi_sn_cn_dn(u, k: float):
    """Jacobi elliptic sn, cn, dn by the descending Landen transformation.

    ``u`` may be a scalar or array; the modulus k is the same convention as
    :func:`elliptic_K` (k, not m = k^2).
    """
    if not 0.0 <= k < 1.0:
        raise ValueError(f"modulus must satisfy 0 <= k < 1, got {k}")
    u = np.asarray(u, dtype=float)
    m = k * k
    if m < 1e-12:
        s, c = np.sin(u), np.cos(u)
        ai = 0.25 * m * (u - s * c)
        sn = s - ai * c
        cn = c + ai * s
        dn = 1.0 - 0.5 * m * s * s
        return sn, cn, dn
    a_seq, c_seq = [1.0], [k]
    a, b = 1.0, np.sqrt(1.0 - m)
    for _ in range(32):
        a, b, c = 0.5 * (a + b), np.sqrt(a * b), 0.5 * (a - b)
        a_seq.append(a)
        c_seq.append(c)
        if abs(c) < 1e-17 * a:
            break
    n = len(a_seq) - 1
    phi = (2.0**n) * a_seq[n] * u
    phi_prev = phi
    for i in range(n, 0, -1):
        t = np.clip(c_seq[i] / a_seq[i] * np.sin(phi), -1.0, 1.0)
        phi_prev = phi
        phi = 0.5 * (np.arcsin(t) + phi)
    sn = np.sin(phi)
    cn = np.cos(phi)
    dn = cn / np.cos(phi - phi_prev)
    return sn, cn, dn


# ---------------------------------------------------------------------------
# Möbius change of variables


@dataclass(frozen=True)
class FilterSpec:
    """Target interval [a, b], guard points a_minus < a and b_plus > b, and
    half-degree r of the rational approximant."""

    a: float
    b: float
    a_minus: float = -np.inf
    b_plus: float = None
    r: int = 16

    def __post_init__(self):
        if self.b_plus is None:
            raise ValueError("b_plus is required")
        if not self.a <= self.b:
            raise ValueError("need a <= b")
        if not self.a_minus < self.a:
            raise ValueError("need a_minus < a")
        if not self.b_plus > self.b:
            raise ValueError("need b_plus > b")
        if self.r < 1:
            raise ValueError("need r >= 1")


@dataclass(frozen=True)
class MobiusMap:
    """T(x) = gamma (x - alpha)/(x - beta) with T(a_-) = -1, T(a) = 1,
    T(b) = ell, T(b_+) = -ell."""

    alpha: float
    beta: float
    gamma: float
    ell: float

    def __call__(self, x):
        x = np.asarray(x, dtype=complex) if np.iscomplexobj(x) else np.asarray(
            x, dtype=float
        )
        return self.gamma * (x - self.alpha) / (x - self.beta)

    def derivative(self, x):
        return self.gamma * (self.alpha - self.beta) / (x - self.beta) ** 2

    def inverse(self, t):
        """Preimage of t (complex allowed)."""
        return (self.gamma * self.alpha - t * self.beta) / (self.gamma - t)


def _validate_mobius(mob: MobiusMap, a_minus, a, b, b_plus, tol=1e-10):
    scale = max(abs(a), abs(b), abs(b_plus), 1.0)
    res = [
        abs(mob.gamma - (-1.0)) if np.isinf(a_minus) else abs(mob(a_minus) + 1.0),
        abs(mob(a) - 1.0),
        abs(mob(b) - mob.ell),
        abs(mob(b_plus) + mob.ell),
    ]
    if max(res) > tol * scale:
        raise ConstructionError(
            f"Möbius back-substitution residuals {res} exceed {tol}"
        )


def solve_mobius(a_minus, a, b, b_plus) -> MobiusMap:
    """Fit the Möbius map for the gap structure a_- < a <= b < b_+.

    For a_- = -inf the limit condition T(+-inf) = gamma = -1 gives a closed
    form; otherwise ell is fixed by the (Möbius-invariant) cross-ratio of the
    four points and the map by three-point interpolation.
    """
    if not (a_minus < a <= b < b_plus):
        raise ValueError("need a_minus < a <= b < b_plus")
    if np.isinf(a_minus):
        u, v = b - a, b_plus - a
        s = np.sqrt(u * v)
        ell = (s - u) / (s + u)
        mob = MobiusMap(alpha=a + s, beta=a - s, gamma=-1.0, ell=float(ell))
    else:
        chi = ((a_minus - b) * (a - b_plus)) / ((a - b) * (a_minus - b_plus))
        if not chi > 1.0:
            raise ConstructionError(
                f"gap structure infeasible: cross-ratio {chi} <= 1"
            )
        root = np.sqrt(chi)
        ell = (root - 1.0) / (root + 1.0)
        # T(x) = (p x + q)/(x + r): interpolate at a, b, b_+
        A = np.array(
            [
                [a, 1.0, -1.0],
                [b, 1.0, -ell],
                [b_plus, 1.0, ell],
            ]
        )
        rhs = np.array([a, ell * b, -ell * b_plus])
        p, q, r_ = np.linalg.solve(A, rhs)
        mob = MobiusMap(
            alpha=float(-q / p), beta=float(-r_), gamma=float(p), ell=float(ell)
        )
    if not 0.0 < mob.ell < 1.0:
        raise ConstructionError(f"no Möbius solution with 0 < ell < 1 ({mob.ell})")
    _validate_mobius(mob, a_minus, a, b, b_plus)
    return mob


# ---------------------------------------------------------------------------
# Zolotarev sign-approximant coefficients


@dataclass(frozen=True)
class ZolotarevCoeffs:
    """Coefficients of Z(t) = Mscale * t * sum_j a_part[j] / (t^2 + c[2j]),
    the best odd rational sign approximant on [-1,-ell] u [ell,1]."""

    r: int
    ell: float
    c: np.ndarray
    a_part: np.ndarray
    Mscale: float

    def g(self, t):
        """Unscaled odd kernel g(t) = t * sum_j a_j/(t^2 + c_{2j-1})."""
        t = np.asarray(t, dtype=float)
        out = t * np.sum(self.a_part / (t[..., None] ** 2 + self.c[0::2]), axis=-1)
        return out if out.ndim else float(out)

    def __call__(self, t):
        """The sign approximant Z(t) = Mscale * g(t)."""
        return self.Mscale * self.g(t)


def zolotarev_coeffs(r: int, ell: float) -> ZolotarevCoeffs:
    """Elliptic-function coefficients of the degree-(2r-1, 2r) sign
    approximant on [ell, 1], normalized to equioscillate."""
    if r < 1:
        raise ValueError("need r >= 1")
    if not 0.0 < ell < 1.0:
        raise ValueError("need 0 < ell < 1")
    kp = np.sqrt(1.0 - ell * ell)
    Kp = elliptic_K(kp)
    i = np.arange(1, 2 * r)
    sn, cn, _ = jacobi_sn_cn_dn(i * Kp / (2.0 * r), kp)
    c = (ell * sn / cn) ** 2
    if np.min(c) < 1e-300:
        raise ConstructionError("Zolotarev coefficients underflow for this (r, ell)")
    c_odd = c[0::2]  # c_1, c_3, ..., c_{2r-1}
    c_even = c[1::2]  # c_2, ..., c_{2r-2}
    a_part = np.empty(r)
    for j in range(r):
        num = np.prod(c_even - c_odd[j]) if r > 1 else 1.0
        den_terms = np.delete(c_odd, j) - c_odd[j]
        den = np.prod(den_terms) if r > 1 else 1.0
        a_part[j] = num / den

    def g(t):
        t = np.asarray(t, dtype=float)
        return t * np.sum(a_part / (t[..., None] ** 2 + c_odd), axis=-1)

    # locate g's extremum nearest t=1 along the natural elliptic path
    # t(u) = ell/dn(u; k'), u in [0, K'] (covers [ell, 1] monotonically)
    us = np.linspace(0.0, Kp, max(4096, 256 * r))
    _, _, dn = jacobi_sn_cn_dn(us, kp)
    ts = ell / dn
    gs = g(ts)
    interior = np.nonzero(
        (gs[1:-1] >= gs[:-2]) & (gs[1:-1] >= gs[2:])
    )[0]
    if interior.size == 0:
        raise ConstructionError("no interior extremum found for Zolotarev scale")
    i_star = interior[-1] + 1

    def neg_g_of_u(u):
        _, _, d = jacobi_sn_cn_dn(u, kp)
        return -g(float(ell / d))

    res = minimize_scalar(
        neg_g_of_u,
        bounds=(us[i_star - 1], us[i_star + 1]),
        method="bounded",
        options={"xatol": 1e-13 * Kp},
    )
    g_star = -float(res.fun)
    Mscale = 2.0 / (float(g(np.asarray(1.0))) + g_star)
    return ZolotarevCoeffs(r=r, ell=float(ell), c=c, a_part=a_part, Mscale=Mscale)


# ---------------------------------------------------------------------------
# the composed filter and its partial-fraction form


@dataclass(frozen=True)
class RationalFilter:
    """f(x) = C0 + sum_j 2 Re(w_j/(x - sigma_j)), poles in the upper half
    plane; approximates the indicator of [spec.a, spec.b]."""

    constant_term: float
    poles: np.ndarray
    weights: np.ndarray
    spec: FilterSpec
    mobius: MobiusMap
    coeffs: ZolotarevCoeffs

    @property
    def r(self) -> int:
        return self.poles.size


def evaluate_filter(filt: RationalFilter, x):
    """Partial-fraction evaluation at real points (scalar or array)."""
    x = np.asarray(x, dtype=float)
    terms = filt.weights / (x[..., None] - filt.poles)
    out = filt.constant_term + 2.0 * np.sum(terms.real, axis=-1)
    return out if out.ndim else float(out)


def evaluate_filter_composed(filt: RationalFilter, x):
    """Ground-truth evaluation (Z(T(x)) + 1)/2 via the composed form."""
    t = filt.mobius(np.asarray(x, dtype=float))
    return 0.5 * (filt.coeffs(t) + 1.0)


def build_filter(spec: FilterSpec) -> RationalFilter:
    """Compose the Möbius solve and Zolotarev coefficients into the
    partial-fraction filter, with a construction-time self check.

    Poles are the T-preimages of +-i sqrt(c_{2j-1}) folded into the upper
    half plane; weights are the exact residues Mscale*a_j/(4 T'(sigma_j)).
    """
    mob = solve_mobius(spec.a_minus, spec.a, spec.b, spec.b_plus)
    zc = zolotarev_coeffs(spec.r, mob.ell)
    c_odd = zc.c[0::2]
    t_poles = 1j * np.sqrt(c_odd)
    sigma = mob.inverse(t_poles)
    flip = sigma.imag < 0.0
    sigma = np.where(flip, np.conj(sigma), sigma)
    weights = zc.Mscale * zc.a_part / (4.0 * mob.derivative(sigma))
    C0 = 0.5 * zc.Mscale * mob.gamma * np.sum(
        zc.a_part / (mob.gamma**2 + c_odd)
    ) + 0.5
    filt = RationalFilter(
        constant_term=float(C0),
        poles=sigma,
        weights=weights,
        spec=spec,
        mobius=mob,
        coeffs=zc,
    )
    _validate_filter(filt)
    return filt


def _validate_filter(filt: RationalFilter, n_samples: int = 200, tol: float = 1e-11):
    """Partial-fraction form must match the composed form off the gap."""
    spec = filt.spec
    span = max(spec.b - spec.a, spec.b_plus - spec.b, 1.0)
    lo = spec.a - 10.0 * span if np.isinf(spec.a_minus) else max(
        spec.a_minus, spec.a - 10.0 * span
    )
    hi = spec.b_plus + 10.0 * span
    rng = np.random.default_rng(np.random.Philox(0x5EED))
    xs = []
    while len(xs) < n_samples:
        x = float(rng.uniform(lo, hi))
        if spec.b < x < spec.b_plus:
            continue
        if abs(x - filt.mobius.beta) < 1e-8 * span:
            continue
        xs.append(x)
    xs = np.array(xs)
    err = np.max(np.abs(evaluate_filter(filt, xs) - evaluate_filter_composed(filt, xs)))
    if not err < tol:
        raise ConstructionError(
            f"filter self-check failed: partial fraction vs composed {err:.3e}"
        )


# ---------------------------------------------------------------------------
# operator application


@dataclass
class FilterApplyReport:
    """Iteration accounting for one block application f(H)R."""

    per_pole: list
    n_rhs: int

    @property
    def total_iterations(self) -> int:
        return int(sum(self.per_pole))

    @property
    def mean_iterations_per_rhs(self) -> float:
        return self.total_iterations / self.n_rhs


def apply_filter(filt: RationalFilter, ham: Hamiltonian, block: np.ndarray,
                 config: SolverConfig = None):
    """Apply f(H) to a block of real grid vectors.

    Each of the r upper-half-plane poles costs one preconditioned GMRES
    solve per column (the conjugate pole is folded in by taking real parts).
    Returns (f(H) block, FilterApplyReport).
    """
    R = np.asarray(block)
    if np.iscomplexobj(R):
        raise ValueError("block must be real (conjugate poles are folded)")
    squeeze = R.ndim == 1
    if squeeze:
        R = R[:, None]
    cfg = config or SolverConfig()
    Y = filt.constant_term * R.astype(float).copy()
    per_pole = []
    for j, (sigma, w) in enumerate(zip(filt.poles, filt.weights)):
        def shifted(v, _s=sigma):
            return ham.apply(v) - _s * v

        def precond(v, _s=sigma):
            return apply_shifted_laplacian_inverse(
                ham.grid, ham.kinetic_coeff, _s, v
            )

        iters = 0
        for i in range(R.shape[1]):
            x, rep = gmres(shifted, R[:, i].astype(complex), precond=precond,
                           config=cfg)
            iters += rep.iterations
            if not rep.converged:
                raise FilterApplicationError(
                    f"resolvent solve stagnated at pole {j} "
                    f"(rel. residual {rep.relative_residual:.3e})",
                    pole_index=j,
                    report=rep,
                )
            Y[:, i] += 2.0 * np.real(w * x)
        per_pole.append(iters)
    report = FilterApplyReport(per_pole=per_pole, n_rhs=R.shape[1])
    return (Y[:, 0] if squeeze else Y), report
