"""Restarted GMRES with right preconditioning.

Used for the shifted resolvent solves inside rational-filter application,
where the operators are complex-shifted self-adjoint matvecs and a kinetic
(constant-coefficient) inverse is available as a strong preconditioner.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SolverConfig", "SolveReport", "gmres"]

_BREAKDOWN = 1e-300
_REORTH_RATIO = 2.0 ** -0.5  # DGKS-style cancellation test


@dataclass(frozen=True)
class SolverConfig:
    """Restarted GMRES controls; ``tol`` is relative to the right-hand side."""

    restart: int = 30
    tol: float = 1e-12
    max_restarts: int = 200


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    restarts: int
    residual_norm: float
    relative_residual: float


def _back_substitute(R, g):
    k = R.shape[0]
    y = np.zeros(k, dtype=g.dtype)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def gmres(apply_a, b, precond=None, config: SolverConfig = None, x0=None):
    """Solve A x = b with restarted GMRES, right-preconditioned by
    ``precond`` (a callable applying an approximate inverse of A).

    Returns (x, SolveReport).  Never raises on stagnation; the report's
    ``converged`` flag is authoritative and the true (unpreconditioned)
    residual is re-measured at every restart.
    """
    cfg = config or SolverConfig()
    b = np.asarray(b)
    n = b.shape[0]
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(True, 0, 0, 0.0, 0.0)
    target = cfg.tol * bnorm
    x = np.zeros_like(b) if x0 is None else np.array(x0)
    total = 0
    rnorm = np.inf
    for cycle in range(cfg.max_restarts):
        r = b - apply_a(x)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return x, SolveReport(True, total, cycle, rnorm, rnorm / bnorm)
        dtype = r.dtype
        m = cfg.restart
        V = np.zeros((n, m + 1), dtype=dtype)
        H = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m, dtype=float)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        V[:, 0] = r / rnorm
        g[0] = rnorm
        k_used = 0
        for k in range(m):
            z = V[:, k] if precond is None else precond(V[:, k])
            w = apply_a(z)
            w = np.asarray(w, dtype=dtype)
            wnorm_in = float(np.linalg.norm(w))
            h = V[:, : k + 1].conj().T @ w
            w = w - V[:, : k + 1] @ h
            H[: k + 1, k] = h
            nw = float(np.linalg.norm(w))
            if nw < _REORTH_RATIO * wnorm_in:
                h2 = V[:, : k + 1].conj().T @ w
                w = w - V[:, : k + 1] @ h2
                H[: k + 1, k] += h2
                nw = float(np.linalg.norm(w))
            H[k + 1, k] = nw
            # apply accumulated Givens rotations, then zero the subdiagonal
            for i in range(k):
                hi, hj = H[i, k], H[i + 1, k]
                H[i, k] = cs[i] * hi + sn[i] * hj
                H[i + 1, k] = -np.conj(sn[i]) * hi + cs[i] * hj
            f, gg = H[k, k], H[k + 1, k]
            if abs(f) == 0.0:
                cs[k], sn[k] = 0.0, 1.0
            else:
                rho = np.hypot(abs(f), abs(gg))
                cs[k] = abs(f) / rho
                sn[k] = (f / abs(f)) * np.conj(gg) / rho
            H[k, k] = cs[k] * f + sn[k] * gg
            H[k + 1, k] = 0.0
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            breakdown = nw <= _BREAKDOWN
            if not breakdown:
                V[:, k + 1] = w / nw
            if abs(g[k + 1]) <= target or breakdown:
                break
        y = _back_substitute(H[:k_used, :k_used], g[:k_used])
        dx = V[:, :k_used] @ y
        x = x + (dx if precond is None else precond(dx))
    r = b - apply_a(x)
    rnorm = float(np.linalg.norm(r))
    return x, SolveReport(
        rnorm <= target, total, cfg.max_restarts, rnorm, rnorm / bnorm
    )
