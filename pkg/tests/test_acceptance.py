"""Acceptance gate: one test per release criterion, each printing a PASS line
with its measured numbers (run with ``pytest tests/test_acceptance.py -v -rA``).

Budgets are wall-clock bounds for desk hardware and are asserted, not just
reported.  The Monte Carlo and finite-difference oracles here are computed
independently of the code paths they check.
"""

import time

import numpy as np
import pytest

from laguerre_rve.cli import main
from laguerre_rve.exports import write_stats_csv
from laguerre_rve.geometry import Lattice
from laguerre_rve.rve import VolumeSpec, generate_rve, sample_seeds, sample_targets
from laguerre_rve.sdot import (
    SolverConfig,
    TargetMasses,
    damped_newton,
    kantorovich_gradient,
    kantorovich_hessian,
    kantorovich_value,
)
from laguerre_rve.tessellation import (
    SeedSet,
    Tessellator,
    compute_diagram,
    monte_carlo_volumes,
)

UNIT = Lattice(1.0, 1.0, 1.0)


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # One tiny diagram so JIT compilation never counts against a budget.
    compute_diagram(SeedSet(np.array([[0.0, 0.0, 0.0]]), lattice=UNIT))


def nonempty_instance(n, rng, weight_scale=0.01):
    while True:
        pos = rng.uniform(-0.5, 0.5, (n, 3)) * 0.999
        w = rng.uniform(-weight_scale, weight_scale, n)
        seeds = SeedSet(pos, w, lattice=UNIT)
        d = compute_diagram(seeds)
        if d.volumes.min() > 1e-3 * UNIT.volume / n:
            return seeds, d


def fd_instances():
    rng = np.random.default_rng(101)
    return [nonempty_instance(n, rng) for n in (5, 5, 5, 5, 5, 20, 20, 20, 20, 20)]


@pytest.fixture(scope="module")
def scale_runs():
    """Criterion-5 runs (n = 1000 log-normal), shared with criterion 9."""
    runs = []
    for seed in range(3):
        rng = np.random.default_rng([42, seed])
        masses = sample_targets(VolumeSpec.lognormal(1000), UNIT, rng)
        seeds = SeedSet(sample_seeds(1000, UNIT, rng), lattice=UNIT)
        t0 = time.perf_counter()
        w, report = damped_newton(seeds, masses, None, SolverConfig(eta=1.0))
        runs.append((report, time.perf_counter() - t0))
    return runs


def test_criterion_1_two_seed_analytic_solve():
    seeds = SeedSet(np.array([[-0.25, 0, 0], [0.25, 0, 0]]), lattice=UNIT)
    masses = TargetMasses([0.3, 0.7], UNIT)
    t0 = time.perf_counter()
    w, report = damped_newton(seeds, masses, None, SolverConfig(eta=0.01))
    elapsed = time.perf_counter() - t0
    # Oracle: analytic slab volume v_1 = 0.5 + 2 (w_1 - w_2).
    assert report.converged
    assert report.n_iterations <= 2
    assert all(r.backtracking_steps == 0 for r in report.iterations)
    assert abs((w[0] - w[1]) - (-0.1)) <= 1e-8
    est, se = monte_carlo_volumes(seeds.with_weights(w), 1_000_000, rng=7)
    assert abs(est[0] - 0.3) < 4 * se[0]
    assert elapsed < 1.0
    print(
        f"PASS criterion 1: w1-w2 = {w[0]-w[1]:.12f} in {report.n_iterations} "
        f"iteration(s), {elapsed:.3f} s, MC agrees within "
        f"{abs(est[0]-0.3)/se[0]:.2f} sigma"
    )


def test_criterion_2_gradient_finite_differences():
    t0 = time.perf_counter()
    h = 1e-6
    worst = 0.0
    for seeds, diagram in fd_instances():
        n = seeds.n
        masses = TargetMasses(np.full(n, UNIT.volume / n), UNIT)
        tess = Tessellator(seeds)
        grad = kantorovich_gradient(diagram, masses)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            kp = kantorovich_value(seeds, masses, tess.diagram(seeds.weights + e))
            km = kantorovich_value(seeds, masses, tess.diagram(seeds.weights - e))
            fd = (kp - km) / (2 * h)
            worst = max(worst, abs(fd - grad[i]) / max(abs(grad[i]), 1e-8))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-5
    assert elapsed < 30.0
    print(f"PASS criterion 2: max gradient FD relative error {worst:.2e} in {elapsed:.1f} s")


def test_criterion_3_hessian_finite_differences():
    t0 = time.perf_counter()
    h = 1e-6
    worst = 0.0
    for seeds, diagram in fd_instances():
        n = seeds.n
        masses = TargetMasses(np.full(n, UNIT.volume / n), UNIT)
        tess = Tessellator(seeds)
        H = kantorovich_hessian(diagram)
        assert np.abs(np.asarray(H.sum(axis=1))).max() <= 1e-10
        dense = H.toarray()
        assert np.array_equal(dense, dense.T)
        assert np.all(dense - np.diag(np.diag(dense)) >= 0)
        fd = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            gp = kantorovich_gradient(tess.diagram(seeds.weights + e), masses)
            gm = kantorovich_gradient(tess.diagram(seeds.weights - e), masses)
            fd[:, i] = (gp - gm) / (2 * h)
        scale = np.abs(dense).max()
        denom = np.maximum(np.maximum(np.abs(dense), np.abs(fd)), 1e-6 * scale)
        worst = max(worst, float(np.max(np.abs(dense - fd) / denom)))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4
    assert elapsed < 120.0
    print(f"PASS criterion 3: max Hessian FD relative error {worst:.2e} in {elapsed:.1f} s")


def test_criterion_4_partition_and_volume_oracle():
    t0 = time.perf_counter()
    worst_partition = 0.0
    worst_sigma = 0.0
    for k, n in enumerate((10, 100, 1000)):
        rng = np.random.default_rng([77, n])
        pos = rng.uniform(-0.5, 0.5, (n, 3)) * 0.999
        w = rng.uniform(-0.01, 0.01, n) * (10.0 / n) ** (2 / 3)
        seeds = SeedSet(pos, w, lattice=UNIT)
        d = compute_diagram(seeds)
        worst_partition = max(
            worst_partition, abs(d.volumes.sum() - UNIT.volume) / UNIT.volume
        )
        est, se = monte_carlo_volumes(seeds, 1_000_000, rng=[78, n])
        sigmas = np.abs(d.volumes - est) / np.maximum(se, 1e-12)
        worst_sigma = max(worst_sigma, float(sigmas.max()))
    elapsed = time.perf_counter() - t0
    assert worst_partition <= 1e-10
    assert worst_sigma < 4.0
    assert elapsed < 300.0
    print(
        f"PASS criterion 4: partition error {worst_partition:.2e}, Monte Carlo "
        f"max deviation {worst_sigma:.2f} sigma in {elapsed:.1f} s"
    )


def test_criterion_5_convergence_at_scale(scale_runs):
    for report, elapsed in scale_runs:
        assert report.converged
        assert report.n_iterations <= 25
        errors = report.errors
        assert all(b < a for a, b in zip(errors, errors[1:]))
        for k, rec in enumerate(report.iterations, start=1):
            assert rec.min_volume >= report.epsilon
            bound = (1.0 - 2.0 ** -(rec.backtracking_steps + 1)) * errors[k - 1]
            assert rec.error <= bound + 1e-15
        assert report.final_pct_error < 1.0
        assert elapsed <= 60.0
    print(
        "PASS criterion 5: "
        + "; ".join(
            f"{r.n_iterations} its in {t:.2f} s (final {r.final_pct_error:.3f}%)"
            for r, t in scale_runs
        )
    )


def test_criterion_6_large_rve_pipeline():
    lat = Lattice(2.0, 2.0, 2.0)
    t0 = time.perf_counter()
    result = generate_rve(
        VolumeSpec.lognormal(10_000), lat, lloyd_steps=5, eta=1.0, rng=2024
    )
    elapsed = time.perf_counter() - t0
    pct = 100.0 * np.abs(result.diagram.volumes - result.targets.values) / result.targets.values
    assert len(result.reports) == 5
    assert all(r.converged for r in result.reports)
    assert pct.max() < 1.0
    assert elapsed <= 600.0
    stats = "criterion6.stats.csv"
    import os
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, stats)
        write_stats_csv(path, result.diagram, result.targets)
        with open(path) as fh:
            rows = sum(1 for _ in fh) - 1
    assert rows == 10_000
    print(
        f"PASS criterion 6: 10,000 grains, 5 Lloyd rounds, max error "
        f"{pct.max():.3f}% in {elapsed:.1f} s"
    )


def test_criterion_7_backtracking_profile():
    t0 = time.perf_counter()
    deepest = 0
    for seed in range(10):
        rng = np.random.default_rng([55, seed])
        masses = sample_targets(VolumeSpec.lognormal(1000), UNIT, rng)
        seeds = SeedSet(sample_seeds(1000, UNIT, rng), lattice=UNIT)
        _, report = damped_newton(seeds, masses, None, SolverConfig(eta=1.0))
        for k, rec in enumerate(report.iterations, start=1):
            if rec.backtracking_steps > 0:
                assert k <= 6
                deepest = max(deepest, k)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(
        f"PASS criterion 7: last backtracking at iteration {deepest} over 10 "
        f"runs in {elapsed:.1f} s"
    )


def test_criterion_8_scaling_sanity(tmp_path):
    out = tmp_path / "bench.csv"
    t0 = time.perf_counter()
    code = main(
        [
            "bench",
            "--sizes", "100,1000",
            "--dists", "sp",
            "--repeats", "20",
            "--eta", "1",
            "--rng-seed", "5",
            "--out", str(out),
        ]
    )
    elapsed = time.perf_counter() - t0
    assert code == 0
    import csv

    with open(out) as fh:
        rows = {r["n"]: r for r in csv.DictReader(fh)}
    assert rows["100"]["failures"] == "0" and rows["1000"]["failures"] == "0"
    ratio = float(rows["1000"]["mean_time"]) / float(rows["100"]["mean_time"])
    assert ratio < 50.0
    assert elapsed < 180.0
    print(
        f"PASS criterion 8: mean time ratio n=1000/n=100 = {ratio:.1f} "
        f"(bound 50) in {elapsed:.1f} s"
    )


def test_criterion_9_superlinear_tail(scale_runs):
    checked = 0
    for report, _ in scale_runs:
        if report.n_iterations < 4:
            continue
        errors = report.errors
        ratios = [b / a for a, b in zip(errors, errors[1:])]
        tail = ratios[-3:]
        assert tail[0] > tail[1] > tail[2]
        checked += 1
    assert checked >= 1
    print(
        f"PASS criterion 9: error ratios strictly decreasing over the final "
        f"3 iterations in {checked} run(s) with >= 4 iterations"
    )
