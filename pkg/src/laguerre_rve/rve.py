"""Polycrystalline RVE pipeline: target-volume sampling, random seed
initialization, and alternating Lloyd regularization with damped Newton
volume correction.

One round moves every seed to the centroid of its cell in the previous
round's converged diagram (round 1 regularizes the plain Voronoi diagram of
the random seeds), then re-solves for weights from w = 0.  With zero rounds
the pipeline is a single Newton solve on the random seeds, which is how the
solver benchmarks run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyCellError, SolverError
from .geometry import Lattice, wrap_point
from .sdot import SolverConfig, SolverReport, TargetMasses, damped_newton
from .tessellation import (
    LaguerreDiagram,
    SeedSet,
    Tessellator,
    compute_diagram,
)

DISTRIBUTIONS = ("sp", "dp", "lognormal", "explicit")


@dataclass(frozen=True)
class VolumeSpec:
    """Target grain-volume specification.

    ``sp`` gives equal volumes; ``dp`` a two-phase mix where half the grains
    are ``dp_ratio`` times larger than the other half; ``lognormal`` draws
    from a log-normal law (``mu_log`` defaults so the pre-rescale mean volume
    is |V|/n) and rescales to sum exactly |V|; ``explicit`` takes the listed
    volumes as-is up to normalization.
    """

    distribution: str
    n: int
    dp_ratio: float = 5.0
    sigma_log: float = 0.5
    mu_log: float | None = None
    explicit_values: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.distribution == "dp" and self.dp_ratio <= 0:
            raise ValueError("dp_ratio must be positive")
        if self.distribution == "lognormal" and self.sigma_log <= 0:
            raise ValueError("sigma_log must be positive")
        if self.distribution == "explicit":
            if not self.explicit_values:
                raise ValueError("explicit distribution requires values")
            if len(self.explicit_values) != self.n:
                raise ValueError("explicit values must have length n")

    @classmethod
    def sp(cls, n: int) -> "VolumeSpec":
        return cls("sp", n)

    @classmethod
    def dp(cls, n: int, ratio: float = 5.0) -> "VolumeSpec":
        return cls("dp", n, dp_ratio=ratio)

    @classmethod
    def lognormal(cls, n: int, sigma: float = 0.5, mu: float | None = None) -> "VolumeSpec":
        return cls("lognormal", n, sigma_log=sigma, mu_log=mu)

    @classmethod
    def explicit(cls, values) -> "VolumeSpec":
        values = tuple(float(v) for v in values)
        return cls("explicit", len(values), explicit_values=values)


@dataclass
class RveResult:
    """Final tessellation of a pipeline run plus the per-round solver logs."""

    seeds: SeedSet
    diagram: LaguerreDiagram
    targets: TargetMasses
    reports: list[SolverReport]
    lloyd_displacements: list[float] = field(default_factory=list)
    total_time: float = 0.0

    @property
    def final_pct_error(self) -> float:
        dev = np.abs(self.diagram.volumes - self.targets.values)
        return float(100.0 * (dev / self.targets.values).max())


def sample_targets(spec: VolumeSpec, lat: Lattice, rng) -> TargetMasses:
    """Draw target masses per the spec variant, normalized to sum |V|."""
    rng = np.random.default_rng(rng)
    n = spec.n
    if spec.distribution == "sp":
        values = np.full(n, lat.volume / n)
    elif spec.distribution == "dp":
        if n % 2:
            raise ValueError("DP requires even n")
        x = lat.volume / (0.5 * n * (1.0 + spec.dp_ratio))
        values = np.full(n, x)
        values[rng.permutation(n)[: n // 2]] *= spec.dp_ratio
    elif spec.distribution == "lognormal":
        mu = spec.mu_log
        if mu is None:
            # Pre-rescale mean volume |V|/n: mean of lognormal is
            # exp(mu + sigma^2/2).
            mu = float(np.log(lat.volume / n) - 0.5 * spec.sigma_log**2)
        values = rng.lognormal(mu, spec.sigma_log, n)
    else:
        values = np.asarray(spec.explicit_values, dtype=float)
    return TargetMasses(values, lat)


def sample_seeds(n: int, lat: Lattice, rng) -> np.ndarray:
    """n i.i.d. uniform points strictly inside the fundamental cell, with
    pairwise periodic separation enforced by rejection (deterministic given
    the rng seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    half = lat.lengths / 2
    positions = rng.uniform(-half, half, (n, 3))
    budget = 100 * n
    while True:
        bad = _invalid_seed_indices(positions, lat)
        if not len(bad):
            return positions
        if budget < len(bad):
            raise ValueError(
                "seed rejection failed: could not place distinct seeds "
                "(degenerate box)"
            )
        budget -= len(bad)
        positions[bad] = rng.uniform(-half, half, (len(bad), 3))


def _invalid_seed_indices(positions: np.ndarray, lat: Lattice) -> np.ndarray:
    from scipy.spatial import cKDTree

    from .tessellation import MIN_SEED_SEPARATION_REL

    half = lat.lengths / 2
    bad = set(np.nonzero(np.any(np.abs(positions) >= half, axis=1))[0].tolist())
    ok = np.asarray([i for i in range(len(positions)) if i not in bad])
    if len(ok) > 1:
        tree = cKDTree(positions[ok] + half, boxsize=lat.lengths)
        pairs = tree.query_pairs(
            MIN_SEED_SEPARATION_REL * lat.max_length, output_type="ndarray"
        )
        # Redraw the later seed of each colliding pair.
        bad.update(ok[pairs.max(axis=1)].tolist())
    return np.asarray(sorted(bad), dtype=int)


def lloyd_step(diagram: LaguerreDiagram, lat: Lattice) -> np.ndarray:
    """Move every seed to the centroid of its unwrapped cell, wrapped into
    the fundamental cell; distinctness is re-checked."""
    if diagram.has_empty_cells:
        raise EmptyCellError("empty cell: Lloyd step needs all cells nonempty")
    new_positions = np.array(
        [wrap_point(c, lat) for c in diagram.centroids]
    )
    SeedSet(new_positions, lattice=lat)  # re-validate interiority/distinctness
    return new_positions


def generate_rve(
    spec: VolumeSpec,
    lat: Lattice,
    lloyd_steps: int,
    eta: float,
    rng,
    config: SolverConfig | None = None,
    initial_positions=None,
    warm_start: bool = False,
) -> RveResult:
    """Run the pipeline: sample targets and seeds, then ``lloyd_steps``
    rounds of (centroid move, damped Newton from w = 0).

    ``lloyd_steps = 0`` performs a single Newton solve on the random seeds.
    ``initial_positions`` overrides the random seeding (for reproducing
    fixed-geometry cases).  ``warm_start=True`` starts each round's solve
    from the previous round's weights instead of zero (off by default).
    """
    if lloyd_steps < 0:
        raise ValueError("lloyd_steps must be >= 0")
    t_start = time.perf_counter()
    rng = np.random.default_rng(rng)
    config = SolverConfig(eta=eta) if config is None else replace(config, eta=eta)

    targets = sample_targets(spec, lat, rng)
    if initial_positions is None:
        positions = sample_seeds(spec.n, lat, rng)
    else:
        positions = np.ascontiguousarray(initial_positions, dtype=float)
        if positions.shape != (spec.n, 3):
            raise ValueError("initial_positions must have shape (n, 3)")
    seeds = SeedSet(positions, lattice=lat)

    reports: list[SolverReport] = []
    displacements: list[float] = []

    if lloyd_steps == 0:
        weights, report = damped_newton(seeds, targets, None, config)
        reports.append(report)
        seeds = seeds.with_weights(weights)
        diagram = compute_diagram(seeds)
    else:
        current = compute_diagram(seeds)  # Voronoi diagram of the raw seeds
        weights = None
        for k in range(1, lloyd_steps + 1):
            try:
                new_positions = lloyd_step(current, lat)
                moved = new_positions - seeds.positions
                moved -= lat.lengths * np.round(moved / lat.lengths)
                displacements.append(float(np.linalg.norm(moved, axis=1).mean()))
                seeds = SeedSet(new_positions, lattice=lat)
                w0 = weights if (warm_start and weights is not None) else None
                weights, report = damped_newton(seeds, targets, w0, config)
            except (SolverError, EmptyCellError, ValueError) as exc:
                raise type(exc)(f"Lloyd round {k}: {exc}") from exc
            reports.append(report)
            seeds = seeds.with_weights(weights)
            current = Tessellator(seeds).diagram()
        diagram = current

    return RveResult(
        seeds=seeds,
        diagram=diagram,
        targets=targets,
        reports=reports,
        lloyd_displacements=displacements,
        total_time=time.perf_counter() - t_start,
    )
