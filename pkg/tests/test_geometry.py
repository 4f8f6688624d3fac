import numpy as np
import pytest

from laguerre_rve.errors import EmptyCellError
from laguerre_rve.geometry import (
    BOX_TAG,
    ConvexPolyhedron,
    Lattice,
    Plane,
    clip_by_halfspace,
    periodic_sq_distance,
    polyhedron_measures,
    second_moment_about,
    wrap_point,
)

UNIT = Lattice(1.0, 1.0, 1.0)


def unit_cube():
    return ConvexPolyhedron.box([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5])


class TestWrapPoint:
    def test_shift_by_one_lattice_vector(self):
        assert np.allclose(wrap_point([0.75, 0, 0], UNIT), [-0.25, 0, 0])

    def test_identity(self):
        assert np.allclose(wrap_point([0, 0, 0], UNIT), [0, 0, 0])

    def test_half_open_boundary(self):
        # +Li/2 maps to -Li/2, -Li/2 stays put.
        assert np.allclose(wrap_point([0.5, -0.5, 0], UNIT), [-0.5, -0.5, 0])

    def test_idempotent_exactly(self):
        rng = np.random.default_rng(7)
        lat = Lattice(1.0, 2.0, 0.5)
        for _ in range(200):
            x = rng.uniform(-10, 10, 3)
            w = wrap_point(x, lat)
            assert np.array_equal(wrap_point(w, lat), w)

    def test_result_in_fundamental_cell_and_equivalent(self):
        rng = np.random.default_rng(8)
        lat = Lattice(1.5, 2.0, 3.0)
        for _ in range(200):
            x = rng.uniform(-20, 20, 3)
            w = wrap_point(x, lat)
            assert np.all(w >= -lat.lengths / 2) and np.all(w < lat.lengths / 2)
            shifts = (x - w) / lat.lengths
            assert np.allclose(shifts, np.rint(shifts), atol=1e-9)


class TestPeriodicSqDistance:
    def test_half_box_gap(self):
        d2, _ = periodic_sq_distance([0, 0, 0], [0.5, 0, 0], UNIT)
        assert d2 == pytest.approx(0.25, abs=1e-15)

    def test_coincident(self):
        d2, u = periodic_sq_distance([0.3, -0.2, 0.1], [0.3, -0.2, 0.1], UNIT)
        assert d2 == 0.0
        assert np.array_equal(u, [0, 0, 0])

    def test_wrapped_gap_and_shift(self):
        d2, u = periodic_sq_distance([0.4, 0, 0], [-0.4, 0, 0], UNIT)
        assert d2 == pytest.approx(0.04, abs=1e-15)
        assert np.array_equal(u, [-1, 0, 0])

    def test_shift_reconstructs_wrapped_difference(self):
        rng = np.random.default_rng(5)
        lat = Lattice(1.0, 2.5, 0.75)
        for _ in range(200):
            x, y = rng.uniform(-4, 4, (2, 3))
            d2, u = periodic_sq_distance(x, y, lat)
            gap = x - y + u * lat.lengths
            assert np.dot(gap, gap) == pytest.approx(d2, rel=1e-14)

    def test_symmetry_and_lattice_invariance(self):
        rng = np.random.default_rng(6)
        lat = Lattice(2.0, 1.0, 1.5)
        for _ in range(100):
            x, y = rng.uniform(-3, 3, (2, 3))
            d2, _ = periodic_sq_distance(x, y, lat)
            d2_sym, _ = periodic_sq_distance(y, x, lat)
            assert abs(d2 - d2_sym) <= 1e-12
            shift = rng.integers(-3, 4, 3) * lat.lengths
            d2_shifted, _ = periodic_sq_distance(x + shift, y, lat)
            assert abs(d2 - d2_shifted) <= 1e-12

    def test_matches_27_image_brute_force(self):
        rng = np.random.default_rng(11)
        lat = Lattice(1.0, 1.3, 0.6)
        shifts = np.array(
            [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
        )
        for _ in range(100):
            x = rng.uniform(-0.5, 0.5, 3) * lat.lengths
            y = rng.uniform(-0.5, 0.5, 3) * lat.lengths
            d2, _ = periodic_sq_distance(x, y, lat)
            brute = min(
                float(np.sum((x - y - s * lat.lengths) ** 2)) for s in shifts
            )
            assert d2 == pytest.approx(brute, rel=1e-14)


class TestClipByHalfspace:
    def test_half_cube(self):
        half = clip_by_halfspace(unit_cube(), Plane([1.0, 0, 0], 0.0), tag=(1, (0, 0, 0)))
        vol, _, _ = polyhedron_measures(half)
        assert vol == pytest.approx(0.5, abs=1e-14)
        tags = [f.tag for f in half.facets]
        assert (1, (0, 0, 0)) in tags

    def test_non_cutting_plane_is_identity(self):
        cube = unit_cube()
        out = clip_by_halfspace(cube, Plane([1.0, 0, 0], 2.0))
        assert out is cube

    def test_fully_cut_is_empty(self):
        out = clip_by_halfspace(unit_cube(), Plane([1.0, 0, 0], -2.0))
        assert out.is_empty

    def test_tangent_plane_is_noop(self):
        cube = unit_cube()
        out = clip_by_halfspace(cube, Plane([1.0, 0, 0], 0.5 + 1e-15))
        assert len(out.facets) == 6
        vol, _, _ = polyhedron_measures(out)
        assert vol == pytest.approx(1.0, abs=1e-14)

    def test_sequence_volume_monotone_and_feasible(self):
        rng = np.random.default_rng(3)
        poly = unit_cube()
        planes = []
        last = 1.0
        for _ in range(25):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            c = rng.uniform(0.05, 0.6)
            plane = Plane(n, c)
            planes.append(plane)
            poly = clip_by_halfspace(poly, plane)
            if poly.is_empty:
                break
            vol, _, _ = polyhedron_measures(poly)
            assert vol <= last + 1e-12
            last = vol
        if not poly.is_empty:
            for plane in planes:
                s = poly.vertices @ plane.normal - plane.offset
                assert np.all(s <= 1e-9)

    def test_axis_aligned_cut_fraction(self):
        for f in (0.1, 0.25, 0.5, 0.9):
            out = clip_by_halfspace(unit_cube(), Plane([1.0, 0, 0], 0.5 - f))
            vol, _, _ = polyhedron_measures(out)
            assert vol == pytest.approx(1.0 - f, abs=1e-12)

    def test_euler_formula_after_random_clips(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            poly = unit_cube()
            for _ in range(6):
                n = rng.normal(size=3)
                n /= np.linalg.norm(n)
                poly = clip_by_halfspace(poly, Plane(n, rng.uniform(0.1, 0.7)))
            if poly.is_empty:
                continue
            v = len(poly.vertices)
            e = poly.edge_count
            f = len(poly.facets)
            assert v - e + f == 2

    def test_facets_planar_and_convex_polyhedron(self):
        rng = np.random.default_rng(12)
        poly = unit_cube()
        for _ in range(8):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            poly = clip_by_halfspace(poly, Plane(n, rng.uniform(0.2, 0.6)))
        assert not poly.is_empty
        for facet in poly.facets:
            s = poly.vertices[facet.vertices] @ facet.plane.normal - facet.plane.offset
            assert np.max(np.abs(s)) <= 1e-9
            s_all = poly.vertices @ facet.plane.normal - facet.plane.offset
            assert np.all(s_all <= 1e-9)


class TestMeasures:
    def test_unit_cube(self):
        vol, centroid, areas = polyhedron_measures(unit_cube())
        assert vol == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(centroid, 0.0, atol=1e-14)
        assert np.allclose(sorted(areas), 1.0, atol=1e-14)

    def test_rectangular_box(self):
        box = ConvexPolyhedron.box([0, 0, 0], [2, 1, 1])
        vol, centroid, _ = polyhedron_measures(box)
        assert vol == pytest.approx(2.0, abs=1e-13)
        assert np.allclose(centroid, [1.0, 0.5, 0.5], atol=1e-13)

    def test_random_tetrahedron_against_determinant(self):
        # Oracle: vol(tet) = |det(b-a, c-a, d-a)| / 6, evaluated directly.
        rng = np.random.default_rng(9)
        for _ in range(25):
            pts = rng.uniform(-1, 1, (4, 3))
            det = np.linalg.det(pts[1:] - pts[0])
            if abs(det) < 1e-3:
                continue
            tet = _tetrahedron(pts)
            vol, centroid, _ = polyhedron_measures(tet)
            assert vol == pytest.approx(abs(det) / 6.0, abs=1e-12)
            assert np.allclose(centroid, pts.mean(axis=0), atol=1e-12)

    def test_empty_cell_error(self):
        with pytest.raises(EmptyCellError, match="empty cell"):
            polyhedron_measures(ConvexPolyhedron.empty())

    def test_second_moment_unit_cube(self):
        # Closed form: integral of |x|^2 over the centered unit cube is 3/12.
        assert second_moment_about(unit_cube(), [0, 0, 0]) == pytest.approx(
            0.25, abs=1e-14
        )

    def test_second_moment_shifted_point(self):
        # Parallel-axis: moment about p is moment about centroid + V |p - g|^2.
        box = ConvexPolyhedron.box([0, 0, 0], [2, 1, 1])
        p = np.array([0.3, -0.4, 1.7])
        base = second_moment_about(box, [1.0, 0.5, 0.5])
        expected = base + 2.0 * np.sum((p - [1.0, 0.5, 0.5]) ** 2)
        assert second_moment_about(box, p) == pytest.approx(expected, rel=1e-13)

    def test_second_moment_random_poly_vs_monte_carlo(self):
        rng = np.random.default_rng(10)
        poly = unit_cube()
        for _ in range(4):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            poly = clip_by_halfspace(poly, Plane(n, rng.uniform(0.2, 0.5)))
        vol, _, _ = polyhedron_measures(poly)
        pts = rng.uniform(-0.5, 0.5, (200000, 3))
        inside = np.ones(len(pts), dtype=bool)
        for facet in poly.facets:
            inside &= pts @ facet.plane.normal - facet.plane.offset <= 0
        y = np.array([0.1, 0.0, -0.2])
        vals = np.sum((pts[inside] - y) ** 2, axis=1)
        mc = vals.mean() * inside.mean()
        se = vals.std() * inside.mean() / np.sqrt(inside.sum()) + 4e-3 / np.sqrt(len(pts))
        assert abs(second_moment_about(poly, y) - mc) < 5 * se


def _tetrahedron(pts: np.ndarray) -> ConvexPolyhedron:
    """Build a tetrahedron by clipping a large box with its four face planes."""
    lo = pts.min(axis=0) - 1.0
    hi = pts.max(axis=0) + 1.0
    poly = ConvexPolyhedron.box(lo, hi)
    center = pts.mean(axis=0)
    faces = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    for tri in faces:
        a, b, c = pts[list(tri)]
        n = np.cross(b - a, c - a)
        if np.dot(n, center - a) > 0:
            n = -n
        poly = clip_by_halfspace(poly, Plane.from_point_normal(a, n))
    return poly


class TestPlane:
    def test_unit_normal_enforced(self):
        with pytest.raises(ValueError):
            Plane([1.0, 1.0, 0.0], 0.5)

    def test_from_point_normal(self):
        p = Plane.from_point_normal([0.5, 0, 0], [2.0, 0, 0])
        assert p.offset == pytest.approx(0.5)
        assert p.signed_distance([0.7, 0, 0]) == pytest.approx(0.2)
