"""Experiment driver: reproduces the error/iteration tables at desk scale.

Each experiment solves for the lowest-n eigenvalues of a periodic
second-order operator (or runs the 1D self-consistent model) and reports,
per (method, n_b) pair: the relative eigenvalue error against a cached
pseudospectral reference, basis-construction and DG-solve wall times, the
mean GMRES iteration count per sketch vector, and the number of degrees of
freedom.  Reports are written as CSV or JSON.

Configuration comes from an optional ``key = value`` file plus command-line
flags (flags win).  Exit codes: 0 success, 1 usage error, 2 numerical
non-convergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .basis import build_gcalb, build_lcalb, build_opt_basis
from .dg import (
    assemble_dg,
    estimate_penalties,
    relative_eigenvalue_error,
    solve_dg_eig,
)
from .eig import pseudospectral_lowest
from .errors import GCALBError
from .grids import Partition, UniformGrid
from .hamiltonian import GaussianWellSpec, Hamiltonian, build_gaussian_potential
from .krylov import SolverConfig
from .scf import HFModelSpec, HFSystem, outer_scf
from .zolotarev import FilterSpec, apply_filter, build_filter

__all__ = [
    "ExperimentConfig",
    "RunMetrics",
    "make_config",
    "run_experiment",
    "emit_report",
    "read_report",
    "main",
]

_LIN_METHODS = ("gcalb", "lcalb", "opt", "planewave")
_CSV_COLUMNS = ("method", "n_b", "err", "t_basis_s", "t_dg_s", "n_tot_iter",
                "dofs")

# Default geometry per experiment: per-dimension grid/partition sizes, the
# n_b sweep, and the filter gap offset b_+ - lambda_n (tighter in higher
# dimension, where the spectral gap above the wanted cluster is smaller).
_EXPERIMENTS = {
    "lin1d": dict(dim=1, grid=140, ref_grid=500, elements=7, lgl=40,
                  nb=(6, 8, 10, 12, 14), b_plus_offset=1.0),
    "lin2d": dict(dim=2, grid=140, ref_grid=300, elements=7, lgl=40,
                  nb=(8, 10, 12, 14, 16, 18, 20, 22), b_plus_offset=0.1),
    "lin3d": dict(dim=3, grid=60, ref_grid=100, elements=4, lgl=30,
                  nb=(6, 8, 10, 12, 14, 16, 18, 20, 22, 24),
                  b_plus_offset=0.01),
    "weak2d": dict(dim=2, grid=140, ref_grid=300, elements=7, lgl=40,
                   nb=(20,), b_plus_offset=0.1),
    "scf1d": dict(dim=1, grid=160, ref_grid=160, elements=8, lgl=40,
                  nb=(16,), b_plus_offset=0.0),
}

_WELL_DEPTH = -10.0
_WELL_SIGMA = 0.2
_CELL = 2.0 * math.pi


class UsageError(Exception):
    """Bad flags, config keys, or unsupported combinations."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings for one experiment run."""

    experiment: str
    methods: tuple
    nb_list: tuple
    n: int
    seed: int
    rep: int
    grid: int
    ref_grid: int
    elements: int
    lgl: int
    b_plus_offset: float
    out: str = None
    format: str = "csv"
    serial: bool = True
    cache_dir: str = ".gcalb_cache"
    kernel_mode: str = "periodic"

    @property
    def dim(self) -> int:
        return _EXPERIMENTS[self.experiment]["dim"]


@dataclass
class RunMetrics:
    """One report row."""

    method: str
    n_b: int
    err: float
    t_basis_s: float
    t_dg_s: float
    n_tot_iter: float
    dofs: int


def make_config(experiment: str, **overrides) -> ExperimentConfig:
    """Resolve an experiment name plus overrides into a full config."""
    if experiment not in _EXPERIMENTS:
        raise UsageError(
            f"unknown experiment {experiment!r}; "
            f"choose from {sorted(_EXPERIMENTS)}")
    base = _EXPERIMENTS[experiment]
    cfg = dict(
        experiment=experiment,
        methods=("gcalb",) if experiment != "scf1d"
        else ("gcalb", "planewave"),
        nb_list=base["nb"],
        n=16,
        seed=0,
        rep=1,
        grid=base["grid"],
        ref_grid=base["ref_grid"],
        elements=base["elements"],
        lgl=base["lgl"],
        b_plus_offset=base["b_plus_offset"],
    )
    unknown = set(overrides) - set(cfg) - {
        "out", "format", "serial", "cache_dir", "kernel_mode"}
    if unknown:
        raise UsageError(f"unknown configuration keys: {sorted(unknown)}")
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**cfg)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if any(nb <= 0 for nb in cfg.nb_list):
        raise UsageError("n_b sweep values must be positive")
    if cfg.seed < 0 or cfg.rep < 1:
        raise UsageError("seed must be >= 0 and rep >= 1")
    if cfg.format not in ("csv", "json"):
        raise UsageError(f"unknown report format {cfg.format!r}")
    allowed = ("gcalb", "planewave") if cfg.experiment == "scf1d" \
        else _LIN_METHODS
    bad = [m for m in cfg.methods if m not in allowed]
    if bad:
        raise UsageError(
            f"methods {bad} not supported for {cfg.experiment} "
            f"(allowed: {list(allowed)})")
    if cfg.rep != 1 and cfg.experiment != "weak2d":
        raise UsageError("rep is only meaningful for weak2d")


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# model setup


def well_centers(dim: int) -> np.ndarray:
    """Canonical positions of the four Gaussian wells in one periodic cell.

    The 1D positions are the published ones; in 2D the wells sit on the
    2x2 lattice of odd quarter-points, and in 3D on the even-parity corners
    of the same lattice (a tetrahedral arrangement).
    """
    if dim == 1:
        return np.array([[1.0367], [2.4504], [3.8642], [5.2779]])
    lo, hi = 0.25 * _CELL, 0.75 * _CELL
    if dim == 2:
        return np.array([[lo, lo], [lo, hi], [hi, lo], [hi, hi]])
    if dim == 3:
        return np.array(
            [[lo, lo, lo], [lo, hi, hi], [hi, lo, hi], [hi, hi, lo]])
    raise UsageError(f"unsupported dimension {dim}")


def _tiled_centers(dim: int, rep: int) -> np.ndarray:
    base = well_centers(dim)
    if rep == 1:
        return base
    shifts = np.stack(
        np.meshgrid(*[np.arange(rep) * _CELL] * dim, indexing="ij"),
        axis=-1).reshape(-1, dim)
    return (base[None, :, :] + shifts[:, None, :]).reshape(-1, dim)


def _build_problem(cfg: ExperimentConfig, points_per_dim: int):
    """Grid + Hamiltonian (kinetic coefficient 1) for the linear problems."""
    dim = cfg.dim
    lengths = (_CELL * cfg.rep,) * dim
    grid = UniformGrid(lengths=lengths, points=(points_per_dim,) * dim)
    wells = GaussianWellSpec.regular(
        _tiled_centers(dim, cfg.rep), _WELL_DEPTH, _WELL_SIGMA)
    v = build_gaussian_potential(grid, wells)
    return grid, Hamiltonian(grid, 1.0, v)


def _n_states(cfg: ExperimentConfig) -> int:
    scale = cfg.rep ** cfg.dim if cfg.experiment == "weak2d" else 1
    return cfg.n * scale


def _reference_values(cfg: ExperimentConfig, log) -> np.ndarray:
    """Lowest n+1 reference eigenvalues, cached on disk by config hash."""
    n = _n_states(cfg)
    key_fields = dict(
        experiment=cfg.experiment, dim=cfg.dim, rep=cfg.rep,
        ref_grid=cfg.ref_grid * cfg.rep, n=n, depth=_WELL_DEPTH,
        sigma=_WELL_SIGMA)
    key = hashlib.sha256(
        json.dumps(key_fields, sort_keys=True).encode()).hexdigest()[:16]
    cache = Path(cfg.cache_dir)
    path = cache / f"ref-{key}.npz"
    if path.exists():
        return np.load(path)["values"]
    log(f"computing reference spectrum on a {cfg.ref_grid * cfg.rep}^"
        f"{cfg.dim} grid ...")
    _, ham = _build_problem(cfg, cfg.ref_grid * cfg.rep)
    t0 = time.monotonic()
    res = pseudospectral_lowest(ham, n + 1, extra=5, tol=1e-11, maxiter=1000,
                                seed=cfg.seed)
    log(f"reference done in {time.monotonic() - t0:.1f} s")
    cache.mkdir(parents=True, exist_ok=True)
    np.savez(path, values=res.values[: n + 1])
    return res.values[: n + 1]


# ---------------------------------------------------------------------------
# per-method pipeline


def _method_seed(cfg: ExperimentConfig, method: str, nb: int) -> int:
    return cfg.seed * 100003 + 257 * nb + _LIN_METHODS.index(method)


def _run_linear(cfg: ExperimentConfig, method: str, nb: int, shared,
                log) -> RunMetrics:
    ref = shared["ref"]
    n = _n_states(cfg)
    if method == "planewave":
        t0 = time.monotonic()
        _, ham = _build_problem(cfg, nb)
        res = pseudospectral_lowest(ham, n, extra=5, tol=1e-10, maxiter=800,
                                    seed=_method_seed(cfg, method, nb))
        t_solve = time.monotonic() - t0
        err = relative_eigenvalue_error(res.values[:n], ref[:n])
        return RunMetrics(method, nb, err, t_solve, 0.0, 0.0, nb ** cfg.dim)

    ham = shared["ham"]
    partition = shared["partition"]
    seed = _method_seed(cfg, method, nb)
    iters = 0.0
    t0 = time.monotonic()
    if method == "gcalb":
        a, b = float(ref[0]), float(ref[n - 1])
        filt = build_filter(FilterSpec(a=a, b=b, b_plus=b + cfg.b_plus_offset,
                                       r=16))
        reports = []

        def filtered(block):
            out, rep = apply_filter(filt, ham, block,
                                    SolverConfig(restart=30, tol=1e-12))
            reports.append(rep)
            return out

        basis = build_gcalb(filtered, partition, nb, seed=seed)
        iters = reports[0].total_iterations / reports[0].n_rhs
    elif method == "lcalb":
        basis = build_lcalb(ham, partition, nb, buffer=1, tol=1e-8,
                            maxiter=3000, seed=seed)
    elif method == "opt":
        basis = build_opt_basis(shared["psi_work"], partition, nb)
    else:  # pragma: no cover
        raise UsageError(f"unknown method {method!r}")
    t_basis = time.monotonic() - t0

    t0 = time.monotonic()
    penalties = estimate_penalties(basis, ham.kinetic_coeff)
    dgm = assemble_dg(ham, basis, penalties)
    sol = solve_dg_eig(dgm, n)
    t_dg = time.monotonic() - t0
    err = relative_eigenvalue_error(sol.values[:n], ref[:n])
    return RunMetrics(method, nb, err, t_basis, t_dg, iters, basis.n_total)


def _run_scf(cfg: ExperimentConfig, method: str, log) -> RunMetrics:
    spec = HFModelSpec()
    system = HFSystem(spec, n_grid=cfg.grid, kernel_mode=cfg.kernel_mode,
                      n_elements=cfg.elements, lgl_points=cfg.lgl,
                      n_b=cfg.nb_list[0])
    t0 = time.monotonic()
    state, reports = outer_scf(system, solver=method, seed=cfg.seed)
    wall = time.monotonic() - t0
    for r in reports:
        rel = ("   --   " if math.isnan(r.rel_change)
               else f"{r.rel_change:.2e}")
        log(f"  [{method}] outer {r.index:2d}: {r.n_inner:2d} inner,  "
            f"E_X = {r.e_x:+.6f},  rel change = {rel}")
    gmres = sum(r.gmres_iterations for r in reports)
    rhs = sum(r.gmres_rhs for r in reports)
    iters = gmres / rhs if rhs else 0.0
    dofs = (system.partition.n_elements * cfg.nb_list[0]
            if method == "gcalb" else cfg.grid)
    return RunMetrics(method, cfg.nb_list[0], reports[-1].rel_change, wall,
                      0.0, iters, dofs)


def run_experiment(cfg: ExperimentConfig, log=None) -> list:
    """Execute all (method, n_b) sweep entries and return metric rows."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    if cfg.experiment == "scf1d":
        return [_run_scf(cfg, method, log) for method in cfg.methods]

    shared = {"ref": _reference_values(cfg, log)}
    dg_methods = [m for m in cfg.methods if m != "planewave"]
    if dg_methods:
        grid, ham = _build_problem(cfg, cfg.grid * cfg.rep)
        shared["ham"] = ham
        shared["partition"] = Partition(
            grid, (cfg.elements * cfg.rep,) * cfg.dim, (cfg.lgl,) * cfg.dim)
    if "opt" in cfg.methods:
        res = pseudospectral_lowest(
            shared["ham"], _n_states(cfg), extra=5, tol=1e-10, maxiter=800,
            seed=cfg.seed)
        shared["psi_work"] = res.vectors

    tasks = [(method, nb) for method in cfg.methods for nb in cfg.nb_list]

    def run(task):
        method, nb = task
        log(f"running {cfg.experiment} {method} n_b={nb} ...")
        row = _run_linear(cfg, method, nb, shared, log)
        log(f"  err={row.err:.3e} t_basis={row.t_basis_s:.2f}s "
            f"t_dg={row.t_dg_s:.2f}s")
        return row

    if cfg.serial or len(tasks) == 1:
        return [run(t) for t in tasks]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor() as pool:
        return list(pool.map(run, tasks))


# ---------------------------------------------------------------------------
# reports


def _format_cell(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.5e}"


def emit_report(rows, fmt: str, path=None, metadata=None) -> str:
    """Serialize metric rows; write to ``path`` if given.  Returns the text."""
    if not rows:
        raise ValueError("no rows to report")
    if fmt == "csv":
        lines = [",".join(_CSV_COLUMNS)]
        for row in rows:
            d = asdict(row)
            lines.append(",".join(_format_cell(d[c]) for c in _CSV_COLUMNS))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = {
            "metadata": metadata or {},
            "rows": [asdict(row) for row in rows],
        }
        text = json.dumps(payload, indent=2, default=float) + "\n"
    else:
        raise UsageError(f"unknown report format {fmt!r}")
    if path:
        Path(path).write_text(text)
    return text


def read_report(text: str, fmt: str = "csv") -> list:
    """Parse a report back into row dictionaries (inverse of emit_report)."""
    if fmt == "json":
        return json.loads(text)["rows"]
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        row = {}
        for key, cell in zip(header, cells):
            if key == "method":
                row[key] = cell
            elif key in ("n_b", "dofs"):
                row[key] = int(cell)
            else:
                row[key] = float(cell)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# command line


def _parse_config_file(path: str) -> dict:
    opts = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        opts[key.replace("-", "_").replace(".", "_")] = value
    return opts


_INT_KEYS = ("n", "seed", "rep", "grid", "ref_grid", "elements", "lgl")


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    if key in _INT_KEYS:
        return int(value)
    if key == "b_plus_offset":
        return float(value)
    if key in ("methods", "nb_list"):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        return tuple(int(p) for p in parts) if key == "nb_list" \
            else tuple(parts)
    if key == "serial":
        return value.lower() in ("1", "true", "yes", "on")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="gcalb", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--experiment", choices=sorted(_EXPERIMENTS))
    p.add_argument("--method", help="comma-separated subset of "
                   "gcalb,lcalb,opt,planewave")
    p.add_argument("--nb", help="comma-separated n_b sweep, e.g. 6,8,10")
    p.add_argument("--n", type=int, help="number of wanted eigenvalues")
    p.add_argument("--seed", type=int)
    p.add_argument("--rep", type=int, help="domain repetition factor (weak2d)")
    p.add_argument("--grid", type=int, help="working grid points per dim")
    p.add_argument("--ref-grid", type=int, dest="ref_grid")
    p.add_argument("--elements", type=int, help="elements per dim")
    p.add_argument("--lgl", type=int, help="LGL points per dim per element")
    p.add_argument("--b-plus-offset", type=float, dest="b_plus_offset")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--serial", action="store_true", default=None,
                   help="run sweep entries sequentially (default)")
    p.add_argument("--parallel", action="store_true",
                   help="run independent sweep entries concurrently")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--kernel-mode", dest="kernel_mode",
                   choices=("periodic", "free"))
    p.add_argument("--config", help="key = value configuration file")
    return p


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        opts = _parse_config_file(args.config) if args.config else {}
        for key in ("experiment", "method", "nb", "n", "seed", "rep", "grid",
                    "ref_grid", "elements", "lgl", "b_plus_offset", "out",
                    "format", "cache_dir", "kernel_mode"):
            val = getattr(args, key, None)
            if val is not None:
                opts[key] = val
        if args.parallel:
            opts["serial"] = False
        elif args.serial:
            opts["serial"] = True
        if "method" in opts:
            opts["methods"] = _coerce("methods", opts.pop("method"))
        if "nb" in opts:
            opts["nb_list"] = _coerce("nb_list", opts.pop("nb"))
        experiment = opts.pop("experiment", None)
        if experiment is None:
            raise UsageError("an experiment must be named "
                             "(--experiment or config file)")
        opts = {k: _coerce(k, v) for k, v in opts.items()}
        cfg = make_config(experiment, **opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1

    try:
        rows = run_experiment(cfg)
    except GCALBError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    metadata = {"seed": cfg.seed, "config_hash": config_hash(cfg),
                "version": __version__}
    text = emit_report(rows, cfg.format, cfg.out, metadata)
    if not cfg.out:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
