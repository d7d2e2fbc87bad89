"""Rational filter construction: elliptic functions, Mobius solve,
Zolotarev coefficients, pole/weight extraction, and block application."""

import numpy as np
import pytest

from gcalb.errors import ConstructionError
from gcalb.grids import UniformGrid
from gcalb.hamiltonian import GaussianWellSpec, Hamiltonian, build_gaussian_potential
from gcalb.zolotarev import (
    FilterSpec,
    apply_filter,
    build_filter,
    elliptic_K,
    evaluate_filter,
    evaluate_filter_composed,
    jacobi_sn_cn_dn,
    solve_mobius,
    zolotarev_coeffs,
)


# ---------------------------------------------------------------------------
# elliptic machinery


def test_elliptic_K_special_values():
    assert abs(elliptic_K(0.0) - np.pi / 2) < 1e-15
    # reference from adaptive quadrature of the defining integral
    assert abs(elliptic_K(0.5) - 1.6857503548125961) < 1e-13
    assert elliptic_K(0.999999) > 7.0
    with pytest.raises(ValueError):
        elliptic_K(1.0)


def test_elliptic_K_against_quadrature():
    from scipy.integrate import quad

    for k in (0.1, 0.3, 0.7, 0.95):
        oracle, _ = quad(
            lambda t, k=k: 1.0 / np.sqrt(1 - k * k * np.sin(t) ** 2),
            0.0, np.pi / 2, epsabs=1e-12, epsrel=1e-12)
        assert abs(elliptic_K(k) - oracle) < 1e-12


def test_jacobi_degenerate_modulus():
    u = np.linspace(-2.0, 2.0, 9)
    sn, cn, dn = jacobi_sn_cn_dn(u, 0.0)
    np.testing.assert_allclose(sn, np.sin(u), atol=1e-13)
    np.testing.assert_allclose(cn, np.cos(u), atol=1e-13)
    np.testing.assert_allclose(dn, 1.0, atol=1e-13)


def test_jacobi_at_zero():
    sn, cn, dn = jacobi_sn_cn_dn(0.0, 0.8)
    assert abs(sn) < 1e-15 and abs(cn - 1.0) < 1e-15 and abs(dn - 1.0) < 1e-15


def test_jacobi_pythagorean_identities():
    k = 0.8
    u = elliptic_K(k) / 2
    sn, cn, dn = jacobi_sn_cn_dn(u, k)
    assert abs(sn * sn + cn * cn - 1.0) < 1e-13
    assert abs(dn * dn + k * k * sn * sn - 1.0) < 1e-13
    # and on a sweep of arguments
    for u in np.linspace(0.05, 2 * elliptic_K(k), 17):
        sn, cn, dn = jacobi_sn_cn_dn(u, k)
        assert abs(sn * sn + cn * cn - 1.0) < 1e-13
        assert abs(dn * dn + k * k * sn * sn - 1.0) < 1e-13


# ---------------------------------------------------------------------------
# Zolotarev sign approximant


def _zolo_eval(co, t):
    # independent partial-fraction evaluation (c_1, c_3, ... sit at the
    # even indices of the coefficient array)
    t = np.asarray(t, dtype=float)
    acc = np.zeros_like(t)
    for j in range(co.r):
        acc += co.a_part[j] / (t * t + co.c[2 * j])
    return co.Mscale * t * acc


def test_zolotarev_r1_equioscillates():
    ell = 0.3
    co = zolotarev_coeffs(1, ell)
    t = np.linspace(ell, 1.0, 20001)
    err = np.abs(_zolo_eval(co, t) - 1.0)
    # equal ripple: the error at both interval ends equals the max error
    assert abs(err[0] - err.max()) < 1e-10
    assert abs(err[-1] - err.max()) < 1e-10
    np.testing.assert_allclose(_zolo_eval(co, t), co(t), atol=1e-15)


def test_zolotarev_is_odd():
    co = zolotarev_coeffs(5, 0.2)
    t = np.linspace(0.1, 3.0, 11)
    np.testing.assert_allclose(_zolo_eval(co, -t), -_zolo_eval(co, t),
                               atol=1e-15)


@pytest.mark.parametrize("ell", [0.0839, 0.0122])
def test_zolotarev_r16_accuracy(ell):
    # 0.0122 is the modulus the 10% relative gap (-1, 1, 1.1) produces;
    # both it and the looser 0.0839 must clear the 1e-10 target at r=16
    co = zolotarev_coeffs(16, ell)
    t = np.concatenate([
        np.linspace(ell, 1.0, 50001),
        ell + (1.0 - ell) * np.logspace(-12, 0, 1000),
    ])
    assert np.max(np.abs(co(t) - 1.0)) <= 1e-10


def test_zolotarev_coefficient_positivity():
    co = zolotarev_coeffs(8, 0.05)
    assert np.all(co.c > 0)
    assert co.Mscale > 0


# ---------------------------------------------------------------------------
# Mobius transformation


def test_mobius_infinite_left_guard_gives_gamma():
    m = solve_mobius(-np.inf, -1.0, 1.0, 1.1)
    assert abs(m.gamma - (-1.0)) < 1e-14


def test_mobius_closed_form_case():
    """(-inf, 0, 1, 2): ell = (sqrt(2)-1)/(sqrt(2)+1), zero at +sqrt(2),
    pole at -sqrt(2)."""
    m = solve_mobius(-np.inf, 0.0, 1.0, 2.0)
    s2 = np.sqrt(2.0)
    assert abs(m.ell - (s2 - 1) / (s2 + 1)) < 1e-12
    # T(x) = gamma (x - alpha)/(x - beta) with a zero and a pole; find them
    roots = sorted([m.alpha, m.beta])
    np.testing.assert_allclose(roots, [-s2, s2], atol=1e-10)
    for x, target in [(0.0, 1.0), (1.0, m.ell), (2.0, -m.ell)]:
        assert abs(m(x) - target) < 1e-12


def test_mobius_random_quadruples():
    """20 random admissible quadruples: back-substitution residuals < 1e-10."""
    rng = np.random.default_rng(20)
    for _ in range(20):
        a = rng.uniform(-5.0, 0.0)
        b = a + rng.uniform(0.1, 4.0)
        b_plus = b + rng.uniform(0.05, 2.0)
        m = solve_mobius(-np.inf, a, b, b_plus)
        assert 0.0 < m.ell < 1.0
        assert abs(m(a) - 1.0) < 1e-10
        assert abs(m(b) - m.ell) < 1e-10
        assert abs(m(b_plus) + m.ell) < 1e-10
        assert abs(m.gamma + 1.0) < 1e-10  # the a_- = -inf condition


def test_mobius_finite_left_guard():
    m = solve_mobius(-8.0, -1.0, 1.0, 1.5)
    for x, target in [(-8.0, -1.0), (-1.0, 1.0), (1.0, m.ell), (1.5, -m.ell)]:
        assert abs(m(x) - target) < 1e-10


# ---------------------------------------------------------------------------
# assembled filter


@pytest.fixture(scope="module")
def fig_filter():
    return build_filter(FilterSpec(a=-1.0, b=1.0, b_plus=1.1, r=16))


def test_filter_partial_fractions_match_composed(fig_filter):
    rng = np.random.default_rng(31)
    x = rng.uniform(-30.0, 30.0, 500)
    x = x[(x < 1.0) | (x > 1.1)]  # avoid the transition band
    pf = evaluate_filter(fig_filter, x)
    composed = evaluate_filter_composed(fig_filter, x)
    np.testing.assert_allclose(pf, composed, atol=1e-11)


def test_filter_poles_in_upper_half_plane(fig_filter):
    assert np.all(np.imag(fig_filter.poles) > 0)
    assert len(fig_filter.poles) == 16


def test_filter_values_inside_and_outside(fig_filter):
    assert abs(evaluate_filter(fig_filter, 0.0) - 1.0) < 1e-10
    assert abs(evaluate_filter(fig_filter, 10.0)) < 1e-10
    # limit at infinity for a_- = -inf specs
    assert abs(evaluate_filter(fig_filter, 1e9)) < 1e-9
    assert abs(evaluate_filter(fig_filter, -1e9)) < 1e-9


def test_filter_left_of_a_transitions_through_one(fig_filter):
    """With an infinite left guard the region below a is the transition
    band: the map sends (-inf, a) through its real pole, so f stays near 1
    down to the pole and then decays slowly toward 0.  Nothing is pinned
    there -- a is always placed below the lowest eigenvalue."""
    assert evaluate_filter(fig_filter, -2.0) > 0.99
    assert abs(evaluate_filter(fig_filter, -100.0)) < 1e-9


def test_filter_is_real_on_real_axis(fig_filter):
    x = np.linspace(-5.0, 5.0, 101)
    contrib = sum(
        2.0 * (w / (x - s)).real - 2.0 * np.real(w / (x - s))
        for w, s in zip(fig_filter.weights, fig_filter.poles))
    # conjugate-pair folding is exact by construction; check the evaluated
    # filter carries no imaginary component either way
    assert np.max(np.abs(np.imag(evaluate_filter(fig_filter, x)))) < 1e-13
    assert np.max(np.abs(contrib)) < 1e-13


def _indicator_error(filt, a, b, bp, samples=40001):
    """Max deviation from the indicator of [a, b] on the designed domain
    [a, b] united with [b_plus, b_plus + 10(b-a)]."""
    w = b - a
    xs = np.concatenate([
        np.linspace(a, b, samples),
        np.linspace(bp, bp + 10 * w, samples),
    ])
    target = np.where(xs <= b, 1.0, 0.0)
    return np.max(np.abs(evaluate_filter(filt, xs) - target))


def test_filter_equioscillation_bound(fig_filter):
    assert _indicator_error(fig_filter, -1.0, 1.0, 1.1) <= 1e-10


def test_filter_error_monotone_in_r():
    errs = [
        _indicator_error(
            build_filter(FilterSpec(a=-1.0, b=1.0, b_plus=1.1, r=r)),
            -1.0, 1.0, 1.1, samples=20001)
        for r in (4, 8, 16)
    ]
    assert errs[0] > errs[1] > errs[2]


def test_filter_rejects_bad_spec():
    with pytest.raises(ValueError):
        FilterSpec(a=1.0, b=-1.0, b_plus=2.0)
    with pytest.raises((ValueError, ConstructionError)):
        build_filter(FilterSpec(a=-1.0, b=1.0, b_plus=1.0 + 1e-15, r=2))


# ---------------------------------------------------------------------------
# block application f(H) R


@pytest.fixture(scope="module")
def small_problem():
    grid = UniformGrid(lengths=2 * np.pi, points=32)
    wells = GaussianWellSpec.regular([[2.0], [4.5]], -10.0, 0.4)
    ham = Hamiltonian(grid, 1.0, build_gaussian_potential(grid, wells))
    dense = ham.apply(np.eye(32))
    vals, vecs = np.linalg.eigh(0.5 * (dense + dense.T))
    return grid, ham, vals, vecs


def test_apply_filter_matches_dense_functional_calculus(small_problem):
    grid, ham, vals, vecs = small_problem
    spec = FilterSpec(a=vals[0] - 0.5, b=vals[3] + 1e-3,
                      b_plus=vals[4] - 1e-3, r=16)
    filt = build_filter(spec)
    rng = np.random.default_rng(17)
    R = rng.standard_normal((32, 3))
    got, report = apply_filter(filt, ham, R)

    fh = vecs @ np.diag(evaluate_filter(filt, vals)) @ vecs.T
    np.testing.assert_allclose(got, fh @ R, atol=1e-8)
    assert report.total_iterations > 0
    assert report.n_rhs == 3


def test_apply_filter_passes_interior_eigenvector(small_problem):
    grid, ham, vals, vecs = small_problem
    spec = FilterSpec(a=vals[0] - 0.5, b=vals[3] + 1e-3,
                      b_plus=vals[4] - 1e-3, r=16)
    filt = build_filter(spec)
    psi = vecs[:, 1]  # deep inside [a, b]
    got, _ = apply_filter(filt, ham, psi)
    np.testing.assert_allclose(got, psi, atol=1e-8)
