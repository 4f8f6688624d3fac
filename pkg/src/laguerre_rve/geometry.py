"""Lattice arithmetic on the triply periodic cuboid and exact convex-polyhedron
clipping with volume/centroid/facet-area measures.

All values are immutable after construction and safe to share across threads;
the operations are pure functions. Geometry is plain floating point: the
solver tolerances sitting on top of this module dominate geometric error by
many orders of magnitude, so no rational arithmetic is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCellError

# Tag carried by facets that were produced by the initial bounding box rather
# than by a radical plane.
BOX_TAG = "box"

#: Relative vertex-snapping tolerance used while clipping (times the length
#: scale): vertices this close to a cutting plane are treated as lying on it.
SNAP_REL = 1e-12

#: Relative facet-area floor (times length scale squared): facets below it are
#: numerical slivers and are dropped from interface accounting.
SLIVER_AREA_REL = 1e-14


@dataclass(frozen=True)
class Lattice:
    """Triply periodic cuboid box with edge lengths (L1, L2, L3).

    The fundamental cell is V = [-L1/2, L1/2] x [-L2/2, L2/2] x [-L3/2, L3/2].
    """

    L1: float
    L2: float
    L3: float

    def __post_init__(self) -> None:
        if not (self.L1 > 0 and self.L2 > 0 and self.L3 > 0):
            raise ValueError("lattice lengths must be positive")

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.L1, self.L2, self.L3])

    @property
    def volume(self) -> float:
        return self.L1 * self.L2 * self.L3

    @property
    def max_length(self) -> float:
        return max(self.L1, self.L2, self.L3)


def wrap_point(x, lat: Lattice) -> np.ndarray:
    """Canonical representative of ``x`` in the fundamental cell.

    Each coordinate is mapped to the half-open interval [-Li/2, Li/2); the
    half-open convention makes wrapping a function on boundary points
    (+Li/2 maps to -Li/2).
    """
    x = np.asarray(x, dtype=float)
    L = lat.lengths
    return np.mod(x + 0.5 * L, L) - 0.5 * L


def periodic_sq_distance(x, y, lat: Lattice) -> tuple[float, np.ndarray]:
    """Squared periodic distance min_u |x - y - u|^2 and its minimizing shift.

    Returns ``(d2, u)`` where ``u`` is the integer shift with
    ``wrap(x - y) = x - y + u * L``.  For a rectangular lattice each
    coordinate minimizes independently, so wrapping the difference is exact
    (equivalent to searching the 27 nearest images).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    L = lat.lengths
    diff = x - y
    wrapped = wrap_point(diff, lat)
    u = np.rint((wrapped - diff) / L).astype(int)
    return float(np.dot(wrapped, wrapped)), u


@dataclass(frozen=True)
class Plane:
    """Oriented plane; the kept half-space is {x : normal . x <= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("plane normal must be a unit vector")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, float(np.dot(n, np.asarray(point, dtype=float))))

    def signed_distance(self, x) -> float:
        return float(np.dot(self.normal, np.asarray(x, dtype=float)) - self.offset)


@dataclass
class Facet:
    """One face of a convex polyhedron: an ordered vertex loop, the plane that
    cut it, and a neighbor tag (``(j, (ux, uy, uz))`` or ``BOX_TAG``)."""

    vertices: list[int]
    plane: Plane
    tag: object = BOX_TAG


@dataclass
class ConvexPolyhedron:
    """Convex polyhedron as a vertex array plus tagged facet loops.

    The polyhedron is the intersection of its facet half-spaces.  The empty
    polyhedron (no vertices) is a valid value: it is what repeated clipping
    produces once nothing is left.
    """

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    facets: list[Facet] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    @property
    def edge_count(self) -> int:
        # Every edge is shared by exactly two facet loops.
        return sum(len(f.vertices) for f in self.facets) // 2

    @property
    def extent(self) -> float:
        """Largest axis-aligned extent; the module's default length scale."""
        if self.is_empty:
            return 0.0
        return float(np.max(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @classmethod
    def empty(cls) -> "ConvexPolyhedron":
        return cls()

    @classmethod
    def box(cls, lo, hi) -> "ConvexPolyhedron":
        """Axis-aligned box [lo, hi] with outward-oriented box-tagged facets."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if not np.all(hi > lo):
            raise ValueError("box requires hi > lo componentwise")
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        verts = np.array(
            [
                [x0, y0, z0],
                [x1, y0, z0],
                [x1, y1, z0],
                [x0, y1, z0],
                [x0, y0, z1],
                [x1, y0, z1],
                [x1, y1, z1],
                [x0, y1, z1],
            ]
        )
        axes = np.eye(3)
        loops = [
            ([0, 3, 2, 1], -axes[2], -z0),
            ([4, 5, 6, 7], axes[2], z1),
            ([0, 1, 5, 4], -axes[1], -y0),
            ([2, 3, 7, 6], axes[1], y1),
            ([0, 4, 7, 3], -axes[0], -x0),
            ([1, 2, 6, 5], axes[0], x1),
        ]
        facets = [Facet(loop, Plane(n, c), BOX_TAG) for loop, n, c in loops]
        return cls(verts, facets)


def clip_by_halfspace(
    poly: ConvexPolyhedron,
    plane: Plane,
    tag: object = BOX_TAG,
    snap_tol: float | None = None,
) -> ConvexPolyhedron:
    """Intersect ``poly`` with the half-space of ``plane``.

    The new facet (if the plane actually cuts) carries ``tag``.  Vertices
    within ``snap_tol`` of the plane are snapped onto it, which is the
    tie-breaking rule for degenerate contacts; by default the tolerance is
    ``SNAP_REL`` times the polyhedron extent.  An empty result is a valid
    outcome, not an error.
    """
    if poly.is_empty:
        return poly
    if snap_tol is None:
        snap_tol = SNAP_REL * poly.extent

    s = poly.vertices @ plane.normal - plane.offset
    s[np.abs(s) <= snap_tol] = 0.0

    if not np.any(s > 0):
        return poly
    if not np.any(s < 0):
        # Nothing strictly inside: the intersection has measure zero.
        return ConvexPolyhedron.empty()

    verts = [v for v in poly.vertices]
    side = list(s)
    edge_cut: dict[tuple[int, int], int] = {}

    def cut_vertex(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = edge_cut.get(key)
        if idx is None:
            t = side[a] / (side[a] - side[b])
            verts.append(poly.vertices[a] + t * (poly.vertices[b] - poly.vertices[a]))
            side.append(0.0)
            idx = len(verts) - 1
            edge_cut[key] = idx
        return idx

    new_facets: list[Facet] = []
    on_plane: list[int] = []
    for facet in poly.facets:
        loop = facet.vertices
        out: list[int] = []
        for i, a in enumerate(loop):
            b = loop[(i + 1) % len(loop)]
            if side[a] <= 0:
                out.append(a)
            if (side[a] < 0 < side[b]) or (side[b] < 0 < side[a]):
                out.append(cut_vertex(a, b))
        out = [v for i, v in enumerate(out) if v != out[i - 1]]
        if len(out) >= 3:
            new_facets.append(Facet(out, facet.plane, facet.tag))
            on_plane.extend(v for v in out if side[v] == 0.0)

    section = _order_section_loop(np.asarray(verts), sorted(set(on_plane)), plane)
    if len(section) >= 3:
        new_facets.append(Facet(section, plane, tag))

    return _compact(np.asarray(verts), new_facets)


def _order_section_loop(verts: np.ndarray, idx: list[int], plane: Plane) -> list[int]:
    """Order the on-plane vertices into a convex loop wound around the
    plane normal (which points out of the kept half-space)."""
    if len(idx) < 3:
        return idx
    n = plane.normal
    e1 = np.cross(n, np.eye(3)[np.argmin(np.abs(n))])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    pts = verts[idx]
    rel = pts - pts.mean(axis=0)
    angles = np.arctan2(rel @ e2, rel @ e1)
    return [idx[k] for k in np.argsort(angles)]


def _compact(verts: np.ndarray, facets: list[Facet]) -> ConvexPolyhedron:
    """Drop unreferenced vertices and reindex facet loops."""
    used = sorted({v for f in facets for v in f.vertices})
    if not used:
        return ConvexPolyhedron.empty()
    remap = {old: new for new, old in enumerate(used)}
    out_facets = [Facet([remap[v] for v in f.vertices], f.plane, f.tag) for f in facets]
    return ConvexPolyhedron(verts[used], out_facets)


# Degree-2 quadrature on a tetrahedron: four symmetric points, equal weights.
_QUAD_A = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
_QUAD_B = (5.0 - np.sqrt(5.0)) / 20.0


def polyhedron_measures(poly: ConvexPolyhedron) -> tuple[float, np.ndarray, list[float]]:
    """Volume, centroid, and per-facet areas of a nonempty polyhedron.

    The volume and centroid come from the tetrahedral fan decomposition about
    the vertex mean (exact for polyhedra); facet areas from fan triangulation.
    Raises :class:`EmptyCellError` on the empty polyhedron.
    """
    if poly.is_empty:
        raise EmptyCellError("empty cell")
    q = poly.vertices.mean(axis=0)
    volume = 0.0
    first_moment = np.zeros(3)
    areas: list[float] = []
    for facet in poly.facets:
        loop = poly.vertices[facet.vertices]
        a = loop[0]
        cross_sum = np.zeros(3)
        vol_f = 0.0
        moment_f = np.zeros(3)
        for t in range(1, len(loop) - 1):
            b, c = loop[t], loop[t + 1]
            cross_sum += np.cross(b - a, c - a)
            vt = np.dot(a - q, np.cross(b - q, c - q)) / 6.0
            vol_f += vt
            moment_f += vt * (q + a + b + c) / 4.0
        areas.append(0.5 * float(np.linalg.norm(cross_sum)))
        sgn = 1.0 if vol_f >= 0 else -1.0
        volume += sgn * vol_f
        first_moment += sgn * moment_f
    if volume <= 0.0:
        raise EmptyCellError("empty cell")
    return float(volume), first_moment / volume, areas


def second_moment_about(poly: ConvexPolyhedron, point) -> float:
    """Exact integral of |x - point|^2 over the polyhedron.

    Uses the same fan decomposition as :func:`polyhedron_measures` with a
    degree-2 quadrature rule per tetrahedron (exact for quadratics).
    """
    if poly.is_empty:
        raise EmptyCellError("empty cell")
    p = np.asarray(point, dtype=float)
    q = poly.vertices.mean(axis=0)
    total = 0.0
    for facet in poly.facets:
        loop = poly.vertices[facet.vertices]
        a = loop[0]
        moment_f = 0.0
        vol_f = 0.0
        for t in range(1, len(loop) - 1):
            b, c = loop[t], loop[t + 1]
            vt = np.dot(a - q, np.cross(b - q, c - q)) / 6.0
            vol_f += vt
            corners = np.stack([q, a, b, c])
            pts = _QUAD_A * corners + _QUAD_B * (corners.sum(axis=0) - corners)
            moment_f += vt * float(np.sum((pts - p) ** 2)) / 4.0
        total += moment_f if vol_f >= 0 else -moment_f
    return float(total)
