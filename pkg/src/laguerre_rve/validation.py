"""Self-check suites: each named invariant reports its measured error
against its tolerance.

``quick`` runs the fast structural checks (analytic cases, partition sums,
mirror symmetry, small finite-difference probes); ``full`` adds the Monte
Carlo volume oracle at a million samples, the dense finite-difference
Hessian comparison, the large partition sum, and a solver run at n = 1000.
The checks deliberately route through the public module functions so that a
broken build (or an injected bug) fails here the same way it would fail for
a user.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sdot
from .geometry import (
    ConvexPolyhedron,
    Lattice,
    Plane,
    clip_by_halfspace,
    periodic_sq_distance,
    polyhedron_measures,
    wrap_point,
)
from .rve import VolumeSpec, sample_targets
from .tessellation import SeedSet, Tessellator, compute_diagram, monte_carlo_volumes

UNIT = Lattice(1.0, 1.0, 1.0)


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        mark = "pass" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: measured {self.measured:.3e} vs tolerance {self.tolerance:.1e}"


def _check(name: str, measured: float, tolerance: float) -> CheckResult:
    return CheckResult(name, float(measured), float(tolerance),
                       bool(measured <= tolerance))


def _random_seeds(n, rng, weight_scale=0.01):
    pos = rng.uniform(-0.5, 0.5, (n, 3)) * 0.999
    w = rng.uniform(-weight_scale, weight_scale, n)
    return SeedSet(pos, w, lattice=UNIT)


def check_wrap_idempotent(rng) -> CheckResult:
    x = rng.uniform(-10, 10, (500, 3))
    w1 = np.array([wrap_point(v, UNIT) for v in x])
    w2 = np.array([wrap_point(v, UNIT) for v in w1])
    return _check("wrap_point idempotent", np.abs(w2 - w1).max(), 0.0)


def check_periodic_distance_symmetry(rng) -> CheckResult:
    worst = 0.0
    for _ in range(200):
        a, b = rng.uniform(-2, 2, (2, 3))
        d1, _ = periodic_sq_distance(a, b, UNIT)
        d2, _ = periodic_sq_distance(b, a, UNIT)
        shift = rng.integers(-2, 3, 3).astype(float)
        d3, _ = periodic_sq_distance(a + shift, b, UNIT)
        worst = max(worst, abs(d1 - d2), abs(d1 - d3))
    return _check("periodic distance symmetry/invariance", worst, 1e-12)


def check_clip_monotone(rng) -> CheckResult:
    poly = ConvexPolyhedron.box([-0.5] * 3, [0.5] * 3)
    worst = 0.0
    last = 1.0
    for _ in range(15):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        poly = clip_by_halfspace(poly, Plane(n, rng.uniform(0.1, 0.6)))
        if poly.is_empty:
            break
        vol, _, _ = polyhedron_measures(poly)
        worst = max(worst, vol - last)
        last = vol
    return _check("clip volume monotone", worst, 1e-12)


def check_tetrahedron_oracle(rng) -> CheckResult:
    worst = 0.0
    for _ in range(10):
        pts = rng.uniform(-1, 1, (4, 3))
        det = float(np.linalg.det(pts[1:] - pts[0]))
        if abs(det) < 1e-2:
            continue
        lo = pts.min(axis=0) - 1
        hi = pts.max(axis=0) + 1
        poly = ConvexPolyhedron.box(lo, hi)
        center = pts.mean(axis=0)
        for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            a, b, c = pts[list(tri)]
            nrm = np.cross(b - a, c - a)
            if np.dot(nrm, center - a) > 0:
                nrm = -nrm
            poly = clip_by_halfspace(poly, Plane.from_point_normal(a, nrm))
        vol, _, _ = polyhedron_measures(poly)
        worst = max(worst, abs(vol - abs(det) / 6.0))
    return _check("tetrahedron volume vs determinant", worst, 1e-12)


def check_slab_analytic(rng) -> CheckResult:
    seeds = SeedSet(np.array([[-0.25, 0, 0], [0.25, 0, 0]]), lattice=UNIT)
    d = compute_diagram(seeds)
    table = d.interface_table
    errs = [
        abs(d.volumes[0] - 0.5),
        abs(d.volumes[1] - 0.5),
        abs(table[(0, 1, (0, 0, 0))][0] - 1.0),
        abs(table[(0, 1, (-1, 0, 0))][0] - 1.0),
        abs(table[(0, 1, (0, 0, 0))][1] - 0.5),
    ]
    return _check("two-seed slab analytic geometry", max(errs), 1e-12)


def check_partition_sum(rng, n=50) -> CheckResult:
    seeds = _random_seeds(n, rng)
    d = compute_diagram(seeds)
    rel = abs(d.volumes.sum() - UNIT.volume) / UNIT.volume
    return _check(f"partition sum (n={n})", rel, 1e-10)


def check_interface_mirrors(rng) -> CheckResult:
    seeds = _random_seeds(50, rng)
    table = compute_diagram(seeds).interface_table
    worst = 0.0
    for (i, j, shift), (area, _) in table.items():
        mirror = table.get((j, i, tuple(-c for c in shift)))
        if mirror is None:
            return _check("interface mirror symmetry", np.inf, 1e-9)
        worst = max(worst, abs(area - mirror[0]) / max(area, 1e-300))
    return _check("interface mirror symmetry", worst, 1e-9)


def check_gradient_fd(rng, n=5) -> CheckResult:
    seeds = _random_seeds(n, rng)
    m = sdot.TargetMasses(rng.uniform(0.5, 1.5, n), UNIT)
    tess = Tessellator(seeds)
    grad = sdot.kantorovich_gradient(tess.diagram(), m)
    h = 1e-6
    worst = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        kp = sdot.kantorovich_value(seeds, m, tess.diagram(seeds.weights + e))
        km = sdot.kantorovich_value(seeds, m, tess.diagram(seeds.weights - e))
        fd = (kp - km) / (2 * h)
        worst = max(worst, abs(fd - grad[i]) / max(abs(grad[i]), 1e-8))
    return _check(f"gradient vs finite differences (n={n})", worst, 1e-5)


def check_hessian_structure(rng, n=20) -> CheckResult:
    seeds = _random_seeds(n, rng)
    H = sdot.kantorovich_hessian(compute_diagram(seeds))
    rowsum = np.abs(np.asarray(H.sum(axis=1))).max()
    dense = H.toarray()
    asym = np.abs(dense - dense.T).max()
    negoff = max(0.0, -(dense - np.diag(np.diag(dense))).min())
    return _check(f"Hessian structure (n={n})", max(rowsum, asym, negoff), 1e-10)


def check_hessian_fd(rng, n=20) -> CheckResult:
    seeds = _random_seeds(n, rng)
    m = sdot.TargetMasses(np.full(n, UNIT.volume / n), UNIT)
    tess = Tessellator(seeds)
    H = sdot.kantorovich_hessian(tess.diagram()).toarray()
    h = 1e-6
    fd = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        gp = sdot.kantorovich_gradient(tess.diagram(seeds.weights + e), m)
        gm = sdot.kantorovich_gradient(tess.diagram(seeds.weights - e), m)
        fd[:, i] = (gp - gm) / (2 * h)
    scale = np.abs(H).max()
    denom = np.maximum(np.maximum(np.abs(H), np.abs(fd)), 1e-6 * scale)
    return _check(f"Hessian vs finite differences (n={n})", np.max(np.abs(H - fd) / denom), 1e-4)


def check_slab_newton(rng) -> CheckResult:
    seeds = SeedSet(np.array([[-0.25, 0, 0], [0.25, 0, 0]]), lattice=UNIT)
    m = sdot.TargetMasses([0.3, 0.7], UNIT)
    w, report = sdot.damped_newton(seeds, m, None, sdot.SolverConfig(eta=0.01))
    err = abs(w[0] - w[1] + 0.1)
    if report.n_iterations > 2 or not report.converged:
        err = np.inf
    return _check("two-seed analytic Newton solve", err, 1e-8)


def check_mc_volume_oracle(rng, n=10, n_samples=1_000_000) -> CheckResult:
    seeds = _random_seeds(n, rng)
    d = compute_diagram(seeds)
    est, se = monte_carlo_volumes(seeds, n_samples, rng)
    sigmas = np.abs(d.volumes - est) / np.maximum(se, 1e-12)
    return _check(f"Monte Carlo volume oracle (n={n})", sigmas.max(), 4.0)


def check_partition_sum_large(rng) -> CheckResult:
    return check_partition_sum(rng, n=10_000)


def check_newton_at_scale(rng, n=1000) -> CheckResult:
    seeds = SeedSet(
        rng.uniform(-0.5, 0.5, (n, 3)) * 0.999, lattice=UNIT
    )
    m = sample_targets(VolumeSpec.lognormal(n), UNIT, rng)
    w, report = sdot.damped_newton(seeds, m, None, sdot.SolverConfig(eta=1.0))
    errors = report.errors
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    ok = report.converged and decreasing and report.final_pct_error < 1.0
    return _check(f"damped Newton at scale (n={n})", 0.0 if ok else np.inf, 0.5)


QUICK_CHECKS = [
    check_wrap_idempotent,
    check_periodic_distance_symmetry,
    check_clip_monotone,
    check_tetrahedron_oracle,
    check_slab_analytic,
    check_partition_sum,
    check_interface_mirrors,
    check_gradient_fd,
    check_hessian_structure,
    check_slab_newton,
]

FULL_CHECKS = QUICK_CHECKS + [
    check_hessian_fd,
    check_mc_volume_oracle,
    lambda rng: check_mc_volume_oracle(rng, n=100),
    check_partition_sum_large,
    check_newton_at_scale,
]


def run_checks(level: str = "quick", rng_seed: int = 20240) -> list[CheckResult]:
    """Run the named invariant suite; 'quick' or 'full'."""
    if level not in ("quick", "full"):
        raise ValueError("level must be 'quick' or 'full'")
    checks = QUICK_CHECKS if level == "quick" else FULL_CHECKS
    results = []
    for k, check in enumerate(checks):
        rng = np.random.default_rng([rng_seed, k])
        results.append(check(rng))
    return results
