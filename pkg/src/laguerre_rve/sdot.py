"""Periodic semi-discrete optimal transport: dual objective, derivatives,
reduced SPD solve, and the damped Newton method.

The dual objective K(w) is concave; its gradient is m - v(w) where v are the
cell volumes, and its Hessian is a weighted graph Laplacian assembled from
the interface table (off-diagonal entries area / (2 * seed-image distance),
diagonal minus the row sum).  Newton steps solve the reduced system with the
last weight pinned to zero, and backtracking keeps every iterate inside the
region where all cells have volume at least epsilon, with the error
reduction e(w_new) <= (1 - 2^-(l+1)) e(w_old).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    EmptyCellError,
    InfeasibleStartError,
    LineSearchError,
    MaxIterationsError,
    SingularHessianError,
)
from .geometry import Lattice
from .tessellation import LaguerreDiagram, SeedSet, Tessellator, compute_diagram


class TargetMasses:
    """Positive target cell volumes, rescaled on construction so they sum to
    the fundamental-cell volume exactly."""

    def __init__(self, values, lattice: Lattice):
        values = np.ascontiguousarray(values, dtype=float)
        if values.ndim != 1 or len(values) < 1:
            raise ValueError("target masses must be a nonempty vector")
        if np.any(values <= 0):
            raise ValueError("target masses must be positive")
        self.values = values * (lattice.volume / values.sum())
        self.lattice = lattice

    @property
    def n(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SolverConfig:
    """Damped Newton settings; ``eta`` is the stopping tolerance on the mass
    percentage error."""

    eta: float
    max_iterations: int = 100
    max_backtracking: int = 40
    linear_tol: float = 1e-11
    log_kantorovich: bool = False

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iterations < 1 or self.max_backtracking < 0:
            raise ValueError("iteration limits must be positive")


@dataclass
class IterationRecord:
    """One accepted Newton step, as logged by the solver."""

    error: float
    pct_error: float
    backtracking_steps: int
    min_volume: float
    time_diagram: float
    time_hessian: float
    time_solve: float
    time_total: float
    kantorovich: float | None = None


@dataclass
class SolverReport:
    """Per-iteration log of a damped Newton run.

    The acceptance rule is replayable: every record satisfies
    ``min_volume >= epsilon`` and
    ``error <= (1 - 2^-(l+1)) * previous error``.
    """

    initial_error: float
    initial_pct_error: float
    epsilon: float
    converged: bool
    iterations: list[IterationRecord] = field(default_factory=list)
    total_time: float = 0.0

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    @property
    def errors(self) -> list[float]:
        """e(w^k) for k = 0..K (index 0 is the initial error)."""
        return [self.initial_error] + [r.error for r in self.iterations]

    @property
    def total_backtracking(self) -> int:
        return sum(r.backtracking_steps for r in self.iterations)

    @property
    def final_pct_error(self) -> float:
        return self.iterations[-1].pct_error if self.iterations else self.initial_pct_error


def kantorovich_value(seeds: SeedSet, masses: TargetMasses,
                      diagram: LaguerreDiagram | None = None) -> float:
    """Dual objective: sum over cells of the quadratic transport moment
    minus w_i * v_i, plus sum of m_i * w_i."""
    if diagram is None:
        diagram = compute_diagram(seeds)
    w = diagram.seeds.weights
    return float(
        np.sum(diagram.moments - w * diagram.volumes + masses.values * w)
    )


def kantorovich_gradient(diagram: LaguerreDiagram, masses: TargetMasses) -> np.ndarray:
    """Gradient of the dual objective: m - v componentwise."""
    return masses.values - diagram.volumes


def kantorovich_hessian(diagram: LaguerreDiagram) -> sp.csr_matrix:
    """Hessian of the dual objective as a sparse weighted graph Laplacian.

    Off-diagonal entries sum area / (2 * delta) over all shared interfaces of
    a seed pair (self-image interfaces carry no weight); the diagonal is
    minus the row sum, so rows sum to zero exactly and the kernel contains
    the constant vector.  Requires all cells nonempty.
    """
    if diagram.has_empty_cells:
        raise EmptyCellError("empty cell: Hessian undefined when a cell has zero volume")
    n = diagram.n
    iface = diagram.interfaces
    mask = iface.i != iface.j
    rows = iface.i[mask]
    cols = iface.j[mask]
    vals = iface.area[mask] / (2.0 * iface.delta[mask])
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off = (off + off.T) * 0.5
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


# Above this size the multigrid-preconditioned CG path is used; sparse LU of
# a 3D tessellation Laplacian suffers heavy fill-in at large n.
_DIRECT_SOLVE_MAX = 1200


def reduced_solve(hessian: sp.spmatrix, b: np.ndarray, tol: float = 1e-11) -> np.ndarray:
    """Solve -H_reduced d = b, where H_reduced drops the last row and column.

    The reduced matrix is symmetric positive definite when all cells have
    positive volume and the interface graph is connected.  Small systems use
    a sparse direct factorization; large ones smoothed-aggregation multigrid
    with CG acceleration, falling back to the factorization if multigrid
    stalls.  The contract is the relative residual, checked explicitly.
    """
    b = np.asarray(b, dtype=float)
    m = hessian.shape[0] - 1
    if b.shape != (m,):
        raise ValueError("right-hand side must have length n - 1")
    if m == 0:
        return np.zeros(0)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(m)
    reduced = (-hessian[:m, :m]).tocsc()

    def _residual(d: np.ndarray) -> float:
        r = float(np.linalg.norm(reduced @ d - b)) / bnorm
        return r if np.isfinite(r) else np.inf

    d = None
    if m > _DIRECT_SOLVE_MAX:
        d = _multigrid_solve(reduced.tocsr(), b, tol)
        if d is not None and _residual(d) > tol:
            d = None
    if d is None:
        try:
            d = spla.splu(reduced).solve(b)
        except RuntimeError as exc:
            raise SingularHessianError(f"singular reduced Hessian: {exc}") from exc
    residual = _residual(d)
    if residual > tol:
        raise SingularHessianError(
            f"singular reduced Hessian: relative residual {residual:.3e} exceeds {tol:.1e}"
        )
    return d


def _multigrid_solve(reduced: sp.csr_matrix, b: np.ndarray, tol: float):
    try:
        import pyamg
    except ImportError:
        return None
    try:
        ml = pyamg.smoothed_aggregation_solver(reduced, max_coarse=64)
        return ml.solve(b, tol=0.1 * tol, accel="cg", maxiter=400)
    except Exception:
        return None


def mass_error(diagram: LaguerreDiagram, masses: TargetMasses) -> tuple[float, float]:
    """Maximum absolute volume deviation and the mass percentage error
    100 * max |v_i - m_i| / m_i."""
    dev = np.abs(diagram.volumes - masses.values)
    return float(dev.max()), float(100.0 * (dev / masses.values).max())


def damped_newton(
    seeds: SeedSet,
    masses: TargetMasses,
    w0=None,
    config: SolverConfig | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """Maximize the dual objective with the damped Newton method.

    ``seeds`` supplies positions only; the returned weight vector is gauge
    fixed (last component zero; a nonzero w0 gauge is shifted away on entry,
    which changes nothing by shift invariance).  Every accepted iterate keeps
    all cell volumes >= epsilon = half the smaller of the initial minimum
    volume and the minimum target mass.
    """
    if config is None:
        raise ValueError("damped_newton requires a SolverConfig")
    n = seeds.n
    if masses.n != n:
        raise ValueError("target masses and seeds disagree on n")
    w = np.zeros(n) if w0 is None else np.ascontiguousarray(w0, dtype=float).copy()
    if w.shape != (n,):
        raise ValueError("w0 must have shape (n,)")
    w = w - w[-1]

    t_start = time.perf_counter()
    tess = Tessellator(seeds)
    diagram = tess.diagram(w)
    volumes = diagram.volumes
    if volumes.min() <= 0.0:
        raise InfeasibleStartError(
            "infeasible initial guess: some cell has zero volume at w0"
        )
    epsilon = 0.5 * min(float(volumes.min()), float(masses.values.min()))
    error, pct = mass_error(diagram, masses)
    report = SolverReport(
        initial_error=error,
        initial_pct_error=pct,
        epsilon=epsilon,
        converged=pct < config.eta,
    )
    if report.converged:
        report.total_time = time.perf_counter() - t_start
        return w, report

    for _ in range(config.max_iterations):
        t_iter = time.perf_counter()
        t0 = time.perf_counter()
        hessian = kantorovich_hessian(diagram)
        t_hessian = time.perf_counter() - t0
        b = (masses.values - volumes)[: n - 1]
        t0 = time.perf_counter()
        direction = np.zeros(n)
        direction[: n - 1] = reduced_solve(hessian, b, config.linear_tol)
        t_solve = time.perf_counter() - t0

        t_diagram = 0.0
        accepted = False
        for l in range(config.max_backtracking + 1):
            w_trial = w + (0.5**l) * direction
            t0 = time.perf_counter()
            trial = tess.diagram(w_trial)
            t_diagram += time.perf_counter() - t0
            e_trial = float(np.abs(trial.volumes - masses.values).max())
            if (
                trial.volumes.min() >= epsilon
                and e_trial <= (1.0 - 2.0 ** -(l + 1)) * error
            ):
                accepted = True
                break
        if not accepted:
            raise LineSearchError(
                f"line search failed: no acceptable step within "
                f"{config.max_backtracking} halvings at iteration "
                f"{report.n_iterations + 1}"
            )

        w = w_trial
        diagram = trial
        volumes = diagram.volumes
        error, pct = mass_error(diagram, masses)
        record = IterationRecord(
            error=error,
            pct_error=pct,
            backtracking_steps=l,
            min_volume=float(volumes.min()),
            time_diagram=t_diagram,
            time_hessian=t_hessian,
            time_solve=t_solve,
            time_total=time.perf_counter() - t_iter,
        )
        if config.log_kantorovich:
            record.kantorovich = kantorovich_value(seeds, masses, diagram)
        report.iterations.append(record)
        if pct < config.eta:
            report.converged = True
            report.total_time = time.perf_counter() - t_start
            return w, report

    raise MaxIterationsError(
        f"max iterations exceeded: {config.max_iterations} Newton steps "
        f"without reaching eta = {config.eta}"
    )
