import numpy as np
import pytest

from laguerre_rve.errors import EmptyCellError
from laguerre_rve.geometry import Lattice, periodic_sq_distance
from laguerre_rve.rve import (
    RveResult,
    VolumeSpec,
    generate_rve,
    lloyd_step,
    sample_seeds,
    sample_targets,
)
from laguerre_rve.sdot import SolverConfig
from laguerre_rve.tessellation import SeedSet, compute_diagram

UNIT = Lattice(1.0, 1.0, 1.0)

SLAB_POSITIONS = np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]])

SUBLATTICE = np.array(
    [[x, y, z] for x in (-0.25, 0.25) for y in (-0.25, 0.25) for z in (-0.25, 0.25)]
)


class TestSampleTargets:
    def test_sp_equal_volumes(self):
        m = sample_targets(VolumeSpec.sp(4), UNIT, rng=0)
        assert np.allclose(m.values, 0.25, atol=1e-15)

    def test_dp_two_phase_split(self):
        # 2x + 2*5x = 1 gives x = 1/12; the large grains are a random half.
        m = sample_targets(VolumeSpec.dp(4, ratio=5), UNIT, rng=1)
        assert sorted(np.round(m.values * 12).astype(int)) == [1, 1, 5, 5]
        assert m.values.sum() == pytest.approx(1.0, rel=1e-15)

    def test_dp_odd_n_rejected(self):
        with pytest.raises(ValueError, match="DP requires even n"):
            sample_targets(VolumeSpec.dp(5), UNIT, rng=0)

    def test_dp_assignment_varies_with_seed(self):
        a = sample_targets(VolumeSpec.dp(8), UNIT, rng=1).values
        b = sample_targets(VolumeSpec.dp(8), UNIT, rng=2).values
        assert not np.array_equal(a, b)

    def test_lognormal_normalized_and_positive(self):
        lat = Lattice(2.0, 1.0, 1.0)
        m = sample_targets(VolumeSpec.lognormal(100), lat, rng=3)
        assert m.values.sum() == pytest.approx(lat.volume, rel=1e-12)
        assert np.all(m.values > 0)

    def test_lognormal_mean_scale(self):
        # Default mu puts the pre-rescale mean at |V|/n; after rescaling the
        # sample mean is exactly |V|/n.
        m = sample_targets(VolumeSpec.lognormal(5000), UNIT, rng=4)
        assert m.values.mean() == pytest.approx(UNIT.volume / 5000, rel=1e-12)

    def test_explicit_passthrough(self):
        m = sample_targets(VolumeSpec.explicit([0.3, 0.7]), UNIT, rng=0)
        assert np.allclose(m.values, [0.3, 0.7], atol=1e-15)


class TestSampleSeeds:
    def test_single_seed_inside(self):
        pos = sample_seeds(1, UNIT, rng=0)
        assert pos.shape == (1, 3)
        assert np.all(np.abs(pos) < 0.5)

    def test_deterministic(self):
        a = sample_seeds(100, UNIT, rng=42)
        b = sample_seeds(100, UNIT, rng=42)
        assert np.array_equal(a, b)

    def test_valid_seed_set(self):
        lat = Lattice(0.5, 2.0, 1.0)
        pos = sample_seeds(500, lat, rng=5)
        SeedSet(pos, lattice=lat)  # validates interiority and distinctness

    def test_uniformity_smoke(self):
        n = 10_000
        pos = sample_seeds(n, UNIT, rng=6)
        sigma = 1.0 / np.sqrt(12.0)
        assert np.all(np.abs(pos.mean(axis=0)) < 4 * sigma / np.sqrt(n))


class TestLloydStep:
    def test_slab_is_fixed_point(self):
        seeds = SeedSet(SLAB_POSITIONS, lattice=UNIT)
        new = lloyd_step(compute_diagram(seeds), UNIT)
        assert np.allclose(new, SLAB_POSITIONS, atol=1e-12)

    def test_single_seed_fixed_point(self):
        seeds = SeedSet(np.array([[0.2, -0.1, 0.3]]), lattice=UNIT)
        new = lloyd_step(compute_diagram(seeds), UNIT)
        assert np.allclose(new, seeds.positions, atol=1e-12)

    def test_new_seed_inside_its_cell_before_wrapping(self):
        rng = np.random.default_rng(7)
        pos = rng.uniform(-0.5, 0.5, (20, 3)) * 0.999
        seeds = SeedSet(pos, lattice=UNIT)
        d = compute_diagram(seeds)
        for i in range(20):
            cell = d.cell(i)
            for facet in cell.facets:
                assert facet.plane.signed_distance(d.centroids[i]) < 0

    def test_empty_cell_raises(self):
        seeds = SeedSet(SLAB_POSITIONS, np.array([0.0, -0.75]), lattice=UNIT)
        with pytest.raises(EmptyCellError, match="empty cell"):
            lloyd_step(compute_diagram(seeds), UNIT)


class TestGenerateRve:
    def test_slab_explicit_targets(self):
        result = generate_rve(
            VolumeSpec.explicit([0.3, 0.7]),
            UNIT,
            lloyd_steps=0,
            eta=0.01,
            rng=0,
            initial_positions=SLAB_POSITIONS,
        )
        w = result.seeds.weights
        assert w[1] == 0.0
        assert w[0] == pytest.approx(-0.1, abs=1e-8)
        assert result.final_pct_error < 0.01

    def test_sublattice_sp_needs_zero_iterations(self):
        result = generate_rve(
            VolumeSpec.sp(8),
            UNIT,
            lloyd_steps=0,
            eta=0.5,
            rng=0,
            initial_positions=SUBLATTICE,
        )
        assert result.reports[0].n_iterations == 0
        assert np.allclose(result.seeds.weights, 0.0)

    def test_output_contract_small_lognormal(self):
        result = generate_rve(
            VolumeSpec.lognormal(60), UNIT, lloyd_steps=2, eta=1.0, rng=8
        )
        assert len(result.reports) == 2
        assert all(r.converged for r in result.reports)
        assert result.final_pct_error < 1.0
        assert len(result.lloyd_displacements) == 2
        # Seeds moved and weights balance the volumes.
        assert result.diagram.volumes.min() > 0

    def test_determinism(self):
        kwargs = dict(spec=VolumeSpec.lognormal(40), lat=UNIT, lloyd_steps=1,
                      eta=1.0, rng=123)
        r1 = generate_rve(**kwargs)
        r2 = generate_rve(**kwargs)
        assert np.array_equal(r1.seeds.positions, r2.seeds.positions)
        assert np.array_equal(r1.seeds.weights, r2.seeds.weights)
        assert [r.n_iterations for r in r1.reports] == [
            r.n_iterations for r in r2.reports
        ]

    def test_every_inner_solve_starts_feasible(self):
        # w = 0 on seeds strictly inside the box is a Voronoi diagram, whose
        # cells all have positive volume; no round may raise.
        result = generate_rve(
            VolumeSpec.dp(30), UNIT, lloyd_steps=3, eta=1.0, rng=9
        )
        for report in result.reports:
            assert report.epsilon > 0

    def test_warm_start_converges_too(self):
        cold = generate_rve(VolumeSpec.lognormal(50), UNIT, 2, 1.0, rng=10)
        warm = generate_rve(
            VolumeSpec.lognormal(50), UNIT, 2, 1.0, rng=10, warm_start=True
        )
        assert cold.final_pct_error < 1.0
        assert warm.final_pct_error < 1.0

    def test_solver_failure_names_the_round(self):
        from laguerre_rve.errors import MaxIterationsError

        with pytest.raises(MaxIterationsError, match="Lloyd round 1"):
            generate_rve(
                VolumeSpec.lognormal(50),
                UNIT,
                lloyd_steps=1,
                eta=1e-10,
                rng=11,
                config=SolverConfig(eta=1.0, max_iterations=1),
            )

    def test_position_override_shape_checked(self):
        with pytest.raises(ValueError, match="initial_positions"):
            generate_rve(
                VolumeSpec.sp(4), UNIT, 0, 1.0, rng=0,
                initial_positions=SLAB_POSITIONS,
            )


@pytest.mark.slow
class TestLloydSoftProperty:
    def test_displacement_shrinks_in_most_trials(self):
        # Soft diagnostic: mean seed movement at the last round is no larger
        # than at the first in at least 80% of trials.
        wins = 0
        trials = 20
        for t in range(trials):
            result = generate_rve(
                VolumeSpec.lognormal(500), UNIT, lloyd_steps=4, eta=1.0, rng=1000 + t
            )
            d = result.lloyd_displacements
            if d[-1] <= d[0]:
                wins += 1
        assert wins >= int(0.8 * trials)


class TestVolumeSpecValidation:
    def test_unknown_distribution(self):
        with pytest.raises(ValueError, match="unknown distribution"):
            VolumeSpec("weibull", 10)

    def test_explicit_requires_values(self):
        with pytest.raises(ValueError, match="explicit"):
            VolumeSpec("explicit", 3)

    def test_constructors(self):
        assert VolumeSpec.sp(5).distribution == "sp"
        assert VolumeSpec.dp(6, ratio=3.0).dp_ratio == 3.0
        assert VolumeSpec.lognormal(7, sigma=0.3).sigma_log == 0.3
        assert VolumeSpec.explicit([1.0, 2.0]).n == 2
