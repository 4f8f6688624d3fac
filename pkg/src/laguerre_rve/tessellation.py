"""Periodic Laguerre tessellation of the fundamental cell.

Cells are built as unwrapped convex polyhedra: the initial bounding box
around each seed is clipped by radical planes against candidate images
``y_j + u * L`` (all seeds, shifts with components in {-1, 0, 1}).  Candidate
images are fetched nearest-first from a KD-tree and cut in power-distance
order; a distance bound proves that unfetched images cannot cut, and an
a-posteriori security margin proves the same for every image outside the
searched shells.  If that margin fails, the cell is rebuilt against the
5^3 shift set before giving up.

Empty cells are representable (volume zero), because the damped Newton
backtracking must evaluate infeasible trial weights and reject them.

The batch path runs the whole diagram in one compiled parallel pass
(:func:`laguerre_rve._cell.build_diagram_batch`); cells the pass cannot
certify (more candidates needed, security margin failed, capacity overflow)
are redone one at a time on a slower certified path, ending at an
object-level construction that shares no code with the kernel.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.spatial import cKDTree

from . import _cell
from .errors import DegeneratePairError, SecurityCheckError
from .geometry import (
    BOX_TAG,
    SLIVER_AREA_REL,
    SNAP_REL,
    ConvexPolyhedron,
    Facet,
    Lattice,
    Plane,
    clip_by_halfspace,
    polyhedron_measures,
    second_moment_about,
)

#: Minimum pairwise periodic seed distance, relative to max(Li).
MIN_SEED_SEPARATION_REL = 1e-9

_INITIAL_KNN = 64
_MAX_IFACES = 96


def _shift_table(reach: int) -> np.ndarray:
    r = range(-reach, reach + 1)
    return np.array([[i, j, k] for i in r for j in r for k in r], dtype=float)


_SHIFTS = {1: _shift_table(1), 2: _shift_table(2)}
_CENTER = {1: 13, 2: 62}


def resolve_workers(workers: int | None = None) -> int:
    """Worker count for parallel cell construction; RVE_THREADS caps it
    (0 or unset means auto)."""
    if workers is None:
        env = os.environ.get("RVE_THREADS", "0")
        try:
            workers = int(env)
        except ValueError:
            workers = 0
    if workers <= 0:
        workers = os.cpu_count() or 1
    return max(1, workers)


class SeedSet:
    """Seed positions strictly inside the fundamental cell, with weights.

    Positions are validated once (strict interiority and pairwise periodic
    separation); :meth:`with_weights` reuses them without re-validation, which
    is what the Newton loop does thousands of times.
    """

    def __init__(self, positions, weights=None, lattice: Lattice | None = None, *,
                 validate: bool = True):
        if lattice is None:
            raise ValueError("SeedSet requires a lattice")
        positions = np.ascontiguousarray(positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("positions must have shape (n, 3)")
        n = positions.shape[0]
        if n < 1:
            raise ValueError("at least one seed is required")
        if weights is None:
            weights = np.zeros(n)
        weights = np.ascontiguousarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValueError("weights must have shape (n,)")
        self.positions = positions
        self.weights = weights
        self.lattice = lattice
        if validate:
            self._validate()

    def _validate(self) -> None:
        half = self.lattice.lengths / 2
        if not np.all(np.abs(self.positions) < half):
            raise ValueError("seeds must lie strictly inside the fundamental cell")
        min_sep = MIN_SEED_SEPARATION_REL * self.lattice.max_length
        if len(self.positions) > 1:
            tree = cKDTree(self.positions + half, boxsize=self.lattice.lengths)
            if tree.query_pairs(min_sep, output_type="ndarray").size:
                raise ValueError("seeds are not pairwise distinct")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n(self) -> int:
        return len(self.positions)

    def with_weights(self, weights) -> "SeedSet":
        return SeedSet(self.positions, weights, self.lattice, validate=False)


def radical_plane(y_i, w_i: float, y_img, w_j: float) -> Plane:
    """Plane where the two power distances are equal, oriented so that the
    power-smaller side of ``y_i`` is kept."""
    y_i = np.asarray(y_i, dtype=float)
    y_img = np.asarray(y_img, dtype=float)
    g = y_img - y_i
    gn = float(np.linalg.norm(g))
    if gn < 1e-14:
        raise DegeneratePairError("degenerate pair: coincident generator points")
    n = g / gn
    offset = float(n @ (0.5 * (y_i + y_img))) + (w_i - w_j) / (2.0 * gn)
    return Plane(n, offset)


class _ImageContext:
    """All candidate images ``y_j + u * L`` for one shift reach, plus the
    KD-tree used to fetch them nearest-first."""

    def __init__(self, positions: np.ndarray, lat: Lattice, reach: int):
        shifts = _SHIFTS[reach]
        L = lat.lengths
        n = positions.shape[0]
        self.reach = reach
        self.n_shifts = len(shifts)
        self.center = _CENTER[reach]
        self.images = np.ascontiguousarray(
            (positions[:, None, :] + shifts[None, :, :] * L).reshape(-1, 3)
        )
        self.seed_of_image = np.repeat(np.arange(n), self.n_shifts)
        self.shift_of_image = np.tile(np.arange(self.n_shifts), n)
        self.shift_vectors = shifts.astype(int)
        self.tree = cKDTree(self.images)
        self.n_images = len(self.images)
        # Initial bounding box half-extents, and the shell the security
        # margin is checked against: every image beyond this reach lies
        # outside the open box of half-width (reach + 0.5) * L.
        self.box_half = (0.5 * reach + 0.25) * L
        self.shell_half = (0.5 + reach) * L

    def image_weights(self, weights: np.ndarray) -> np.ndarray:
        return weights[self.seed_of_image]

    def self_ids(self, n: int) -> np.ndarray:
        return np.arange(n) * self.n_shifts + self.center


class _CellRecord:
    """Normalized per-cell result used by the slow certified path."""

    __slots__ = ("volume", "centroid", "moment", "face_count",
                 "if_j", "if_shift", "if_area", "if_delta", "poly")

    def __init__(self, volume, centroid, moment, face_count,
                 if_j, if_shift, if_area, if_delta, poly=None):
        self.volume = volume
        self.centroid = centroid
        self.moment = moment
        self.face_count = face_count
        self.if_j = if_j
        self.if_shift = if_shift
        self.if_area = if_area
        self.if_delta = if_delta
        self.poly = poly


def _empty_record() -> _CellRecord:
    return _CellRecord(
        0.0,
        np.full(3, np.nan),
        0.0,
        0,
        np.zeros(0, dtype=int),
        np.zeros((0, 3), dtype=int),
        np.zeros(0),
        np.zeros(0),
        ConvexPolyhedron.empty(),
    )


class Tessellator:
    """Reusable Laguerre-diagram builder for a fixed seed geometry.

    The KD-tree over images depends only on positions, so one Tessellator
    serves every weight vector the Newton loop evaluates.  Instances are
    immutable after construction.
    """

    def __init__(self, seeds: SeedSet, workers: int | None = None):
        self.seeds = seeds
        self.lattice = seeds.lattice
        self.workers = resolve_workers(workers)
        self.snap_tol = SNAP_REL * self.lattice.max_length
        self.sliver_tol = SLIVER_AREA_REL * self.lattice.max_length**2
        self._ctx = _ImageContext(seeds.positions, self.lattice, reach=1)
        self._wide_ctx: _ImageContext | None = None

    def _wide(self) -> _ImageContext:
        if self._wide_ctx is None:
            self._wide_ctx = _ImageContext(self.seeds.positions, self.lattice, reach=2)
        return self._wide_ctx

    # -- slow certified per-cell path ------------------------------------

    def _kernel_cell(self, ctx: _ImageContext, i: int, weights, w_img, w_max):
        """Kernel build for one cell, growing the candidate fetch until the
        distance bound certifies completeness.  Returns None on capacity
        overflow (caller falls back to the object-level path)."""
        y = self.seeds.positions[i]
        self_id = i * ctx.n_shifts + ctx.center
        k = min(_INITIAL_KNN, ctx.n_images)
        while True:
            dist, idx = ctx.tree.query(y, k=k)
            dist = np.atleast_1d(dist)
            idx = np.atleast_1d(idx)
            out = _cell.build_cell(
                y,
                weights[i],
                ctx.box_half,
                ctx.images[idx],
                w_img[idx],
                np.ascontiguousarray(dist),
                idx == self_id,
                k == ctx.n_images,
                w_max,
                self.snap_tol,
            )
            if out[0] == _cell.STATUS_NEED_MORE and k < ctx.n_images:
                k = min(2 * k, ctx.n_images)
                continue
            if out[0] == _cell.STATUS_OVERFLOW:
                return None, idx
            return out, idx

    def _object_cell(self, ctx: _ImageContext, i: int, weights, w_img) -> ConvexPolyhedron:
        """Object-level construction: fold clip_by_halfspace over all
        candidate images in power order with the same pruning bound.  Slow;
        used when the kernel overflows its capacity."""
        y = self.seeds.positions[i]
        poly = ConvexPolyhedron.box(y - ctx.box_half, y + ctx.box_half)
        self_id = i * ctx.n_shifts + ctx.center
        d2 = np.sum((ctx.images - y) ** 2, axis=1)
        order = np.argsort(d2 - w_img)
        for row in order:
            if row == self_id or poly.is_empty:
                continue
            rel = poly.vertices - y
            r2 = float(np.max(np.sum(rel**2, axis=1)))
            r = np.sqrt(r2)
            d = np.sqrt(d2[row])
            if d > r and (d - r) ** 2 - w_img[row] > r2 - weights[i]:
                continue
            j = int(ctx.seed_of_image[row])
            shift = tuple(int(c) for c in ctx.shift_vectors[ctx.shift_of_image[row]])
            plane = radical_plane(y, weights[i], ctx.images[row], w_img[row])
            poly = clip_by_halfspace(poly, plane, (j, shift), snap_tol=self.snap_tol)
        return poly

    def _poly_secure(self, poly: ConvexPolyhedron, i: int, weights, w_max,
                     ctx: _ImageContext) -> bool:
        if poly.is_empty:
            return True
        _, _, areas = polyhedron_measures(poly)
        for facet, area in zip(poly.facets, areas):
            if facet.tag == BOX_TAG and area > self.sliver_tol:
                return False
        y = self.seeds.positions[i]
        r2 = float(np.max(np.sum((poly.vertices - y) ** 2, axis=1)))
        margin = float(np.min(ctx.shell_half[None, :] - np.abs(poly.vertices)))
        return margin >= 0.0 and margin * margin - w_max > r2 - weights[i]

    def _record_from_kernel(self, ctx, out, idx, i, geometry: bool) -> _CellRecord:
        y = self.seeds.positions[i]
        _, verts, nv, loops, llen, fplane, ftag, nf = out
        vol, cx, cy, cz, mom, areas = _cell.cell_measures(verts, loops, llen, nf, y)
        live = (llen[:nf] >= 3) & (areas > self.sliver_tol)
        keep = live & (ftag[:nf] >= 0)
        rows = idx[ftag[:nf][keep]]
        j = ctx.seed_of_image[rows]
        shifts = ctx.shift_vectors[ctx.shift_of_image[rows]]
        delta = np.linalg.norm(ctx.images[rows] - y, axis=1)
        poly = None
        if geometry:
            poly = self._materialize(ctx, out, idx)
        return _CellRecord(
            float(vol),
            np.array([cx, cy, cz]),
            float(mom),
            int(np.count_nonzero(live)),
            j,
            shifts,
            areas[keep],
            delta,
            poly,
        )

    def _record_from_poly(self, poly: ConvexPolyhedron, i: int) -> _CellRecord:
        if poly.is_empty:
            return _empty_record()
        y = self.seeds.positions[i]
        vol, centroid, areas = polyhedron_measures(poly)
        moment = second_moment_about(poly, y)
        if_j = []
        if_shift = []
        if_area = []
        if_delta = []
        count = 0
        for facet, area in zip(poly.facets, areas):
            if area <= self.sliver_tol:
                continue
            count += 1
            if facet.tag == BOX_TAG:
                continue
            j, shift = facet.tag
            if_j.append(j)
            if_shift.append(shift)
            if_area.append(area)
            if_delta.append(
                float(
                    np.linalg.norm(
                        self.seeds.positions[j]
                        + np.asarray(shift) * self.lattice.lengths
                        - y
                    )
                )
            )
        return _CellRecord(
            float(vol),
            centroid,
            float(moment),
            count,
            np.asarray(if_j, dtype=int),
            np.asarray(if_shift, dtype=int).reshape(-1, 3),
            np.asarray(if_area),
            np.asarray(if_delta),
            poly,
        )

    def _materialize(self, ctx, out, idx) -> ConvexPolyhedron:
        _, verts, nv, loops, llen, fplane, ftag, nf = out
        facets = []
        for f in range(nf):
            if llen[f] < 3:
                continue
            plane = Plane(fplane[f, :3].copy(), fplane[f, 3])
            if ftag[f] >= 0:
                row = idx[ftag[f]]
                tag = (
                    int(ctx.seed_of_image[row]),
                    tuple(int(c) for c in ctx.shift_vectors[ctx.shift_of_image[row]]),
                )
            else:
                tag = BOX_TAG
            facets.append(Facet([int(v) for v in loops[f, : llen[f]]], plane, tag))
        used = sorted({v for facet in facets for v in facet.vertices})
        remap = {old: new for new, old in enumerate(used)}
        for facet in facets:
            facet.vertices = [remap[v] for v in facet.vertices]
        return ConvexPolyhedron(verts[used].copy(), facets)

    def _certified_cell(self, i: int, weights, w_max, geometry: bool = False) -> _CellRecord:
        """Build one cell with the full escalation ladder: kernel at reach 1,
        then reach 2, object path on kernel overflow, error if even the wide
        shell cannot be certified."""
        for ctx in (self._ctx, self._wide()):
            w_img = ctx.image_weights(weights)
            out, idx = self._kernel_cell(ctx, i, weights, w_img, w_max)
            if out is None:
                poly = self._object_cell(ctx, i, weights, w_img)
                if poly.is_empty:
                    return _empty_record()
                if self._poly_secure(poly, i, weights, w_max, ctx):
                    return self._record_from_poly(poly, i)
                continue
            if out[0] == _cell.STATUS_EMPTY:
                return _empty_record()
            vol, cx, cy, cz, mom, areas = _cell.cell_measures(
                out[1], out[3], out[4], out[7], self.seeds.positions[i]
            )
            if _cell.cell_secure(
                out[1], out[3], out[4], out[6], out[7], areas,
                self.seeds.positions[i], weights[i], w_max,
                ctx.shell_half, self.sliver_tol,
            ):
                return self._record_from_kernel(ctx, out, idx, i, geometry)
        raise SecurityCheckError(
            f"cell {i} may be cut by distant image (pathological weights)"
        )

    # -- fast batch path ---------------------------------------------------

    def _initial_knn(self, weights: np.ndarray) -> int:
        """Candidate fetch size for the first batch pass.

        The stop bound needs the covering radius r to satisfy
        (r - R)^2 > R^2 + (w_max - w_i); size the k-NN fetch for a typical
        cell radius and the global weight spread so most cells certify in
        one pass (stragglers are re-batched with doubled k)."""
        n = self.seeds.n
        spread = float(weights.max() - weights.min())
        typical_r = (self.lattice.volume / n) ** (1.0 / 3.0)
        needed = typical_r + np.sqrt(typical_r**2 + max(spread, 0.0))
        density = n / self.lattice.volume
        k = int(4.19 * density * needed**3) + 32
        return min(max(_INITIAL_KNN, k), 512, self._ctx.n_images)

    def diagram(self, weights=None) -> "LaguerreDiagram":
        """Compute every cell (parallel compiled passes) and assemble
        volumes, centroids, quadratic moments, and the interface table."""
        seeds = self.seeds
        n = seeds.n
        if weights is None:
            weights = seeds.weights
        weights = np.ascontiguousarray(weights, dtype=float)
        ctx = self._ctx
        w_img = ctx.image_weights(weights)
        w_max = float(np.max(weights))
        self_ids = ctx.self_ids(n)

        status = np.full(n, -1, dtype=np.int32)
        volumes = np.zeros(n)
        centroids = np.full((n, 3), np.nan)
        moments = np.zeros(n)
        face_counts = np.zeros(n, dtype=np.int32)
        nif = np.zeros(n, dtype=np.int32)
        if_row = np.zeros((n, _MAX_IFACES), dtype=np.int64)
        if_area = np.zeros((n, _MAX_IFACES))
        if_delta = np.zeros((n, _MAX_IFACES))

        _cell.set_num_threads(self.workers)
        pending = np.arange(n)
        k = self._initial_knn(weights)
        while len(pending):
            k = min(k, ctx.n_images)
            dist, idx = ctx.tree.query(seeds.positions[pending], k=k, workers=-1)
            dist = np.ascontiguousarray(np.atleast_2d(dist))
            idx = np.ascontiguousarray(np.atleast_2d(idx))
            out = _cell.build_diagram_batch(
                seeds.positions[pending],
                weights[pending],
                ctx.images,
                w_img,
                idx,
                dist,
                self_ids[pending],
                k == ctx.n_images,
                ctx.box_half,
                ctx.shell_half,
                w_max,
                self.snap_tol,
                self.sliver_tol,
                _MAX_IFACES,
            )
            status[pending] = out[0]
            volumes[pending] = out[1]
            centroids[pending] = out[2]
            moments[pending] = out[3]
            face_counts[pending] = out[4]
            nif[pending] = out[5]
            if_row[pending] = out[6]
            if_area[pending] = out[7]
            if_delta[pending] = out[8]
            pending = pending[out[0] == _cell.STATUS_NEED_MORE]
            if k == ctx.n_images:
                break
            k *= 2

        retry = np.nonzero((status != _cell.STATUS_OK) & (status != _cell.STATUS_EMPTY))[0]
        fallback: dict[int, _CellRecord] = {}
        for i in retry:
            rec = self._certified_cell(int(i), weights, w_max)
            fallback[int(i)] = rec
            volumes[i] = rec.volume
            centroids[i] = rec.centroid
            moments[i] = rec.moment
            face_counts[i] = rec.face_count

        interfaces = self._assemble_interfaces(
            ctx, n, nif, if_row, if_area, if_delta, fallback
        )
        return LaguerreDiagram(
            seeds.with_weights(weights),
            volumes,
            centroids,
            moments,
            face_counts,
            interfaces,
            self,
        )

    def _assemble_interfaces(self, ctx, n, nif, if_row, if_area, if_delta,
                             fallback: dict[int, _CellRecord]) -> "Interfaces":
        # Flatten the batch output (cell-major, hence deterministic), then
        # splice in fallback cells at their positions.
        counts = nif.astype(int).copy()
        for i in fallback:
            counts[i] = 0
        mask = np.arange(if_row.shape[1])[None, :] < counts[:, None]
        rows = if_row[mask]
        cell_i = np.repeat(np.arange(n), counts)
        areas = if_area[mask]
        deltas = if_delta[mask]
        jj = ctx.seed_of_image[rows]
        shifts = ctx.shift_vectors[ctx.shift_of_image[rows]]
        if not fallback:
            return Interfaces(cell_i, jj, shifts, areas, deltas)
        parts = []
        fb_sorted = sorted(fallback)
        bounds = np.searchsorted(cell_i, np.asarray(fb_sorted))
        prev = 0
        for pos, i in zip(bounds, fb_sorted):
            rec = fallback[i]
            parts.append(
                (
                    cell_i[prev:pos],
                    jj[prev:pos],
                    shifts[prev:pos],
                    areas[prev:pos],
                    deltas[prev:pos],
                )
            )
            parts.append(
                (
                    np.full(len(rec.if_j), i),
                    rec.if_j,
                    rec.if_shift,
                    rec.if_area,
                    rec.if_delta,
                )
            )
            prev = pos
        parts.append((cell_i[prev:], jj[prev:], shifts[prev:], areas[prev:], deltas[prev:]))
        return Interfaces(
            np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]).reshape(-1, 3),
            np.concatenate([p[3] for p in parts]),
            np.concatenate([p[4] for p in parts]),
        )

    def cell_polyhedron(self, i: int, weights=None) -> ConvexPolyhedron:
        """Materialize one unwrapped cell as a tagged ConvexPolyhedron."""
        weights = (
            self.seeds.weights
            if weights is None
            else np.ascontiguousarray(weights, dtype=float)
        )
        rec = self._certified_cell(i, weights, float(np.max(weights)), geometry=True)
        return rec.poly


class Interfaces:
    """Flat arrays of interface entries (i, j, shift) -> (area, delta).

    Both orientations of every interface are present: entry (i, j, u) mirrors
    (j, i, -u).  Self entries (i == j, u != 0) record a cell facing its own
    periodic image; they carry no Hessian weight but are part of the table.
    """

    def __init__(self, i, j, shift, area, delta):
        self.i = np.asarray(i, dtype=int)
        self.j = np.asarray(j, dtype=int)
        self.shift = np.asarray(shift, dtype=int).reshape(-1, 3)
        self.area = np.asarray(area, dtype=float)
        self.delta = np.asarray(delta, dtype=float)

    def __len__(self) -> int:
        return len(self.i)

    def as_dict(self) -> dict:
        table = {}
        for k in range(len(self.i)):
            key = (int(self.i[k]), int(self.j[k]), tuple(int(c) for c in self.shift[k]))
            table[key] = (float(self.area[k]), float(self.delta[k]))
        return table


class LaguerreDiagram:
    """Computed periodic Laguerre tessellation: per-seed unwrapped cell
    measures plus the interface table feeding the Hessian."""

    def __init__(self, seeds, volumes, centroids, moments, face_counts,
                 interfaces, tessellator):
        self.seeds = seeds
        self.lattice = seeds.lattice
        self.volumes = volumes
        self.centroids = centroids
        self.moments = moments
        self.face_counts = face_counts
        self.interfaces = interfaces
        self._tessellator = tessellator
        self._table = None
        self._cells: dict[int, ConvexPolyhedron] = {}

    @property
    def n(self) -> int:
        return len(self.volumes)

    @property
    def interface_table(self) -> dict:
        if self._table is None:
            self._table = self.interfaces.as_dict()
        return self._table

    def cell(self, i: int) -> ConvexPolyhedron:
        if i not in self._cells:
            self._cells[i] = self._tessellator.cell_polyhedron(i, self.seeds.weights)
        return self._cells[i]

    @property
    def cells(self) -> list[ConvexPolyhedron]:
        return [self.cell(i) for i in range(self.n)]

    @property
    def has_empty_cells(self) -> bool:
        return bool(np.any(self.volumes <= 0.0))


def compute_cell(i: int, seeds: SeedSet) -> ConvexPolyhedron:
    """Unwrapped Laguerre cell of seed ``i`` (see :class:`Tessellator`)."""
    return Tessellator(seeds).cell_polyhedron(i)


def compute_diagram(seeds: SeedSet, workers: int | None = None) -> LaguerreDiagram:
    """Periodic Laguerre tessellation generated by ``seeds``."""
    return Tessellator(seeds, workers=workers).diagram()


def monte_carlo_volumes(
    seeds: SeedSet, n_samples: int, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of the periodic cell volumes, independent of the
    clipping construction: each uniform sample is assigned to the seed with
    the smallest periodic power distance (ties to the lowest index).

    Returns (estimates, binomial standard errors).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng)
    lat = seeds.lattice
    L = lat.lengths
    pos = seeds.positions
    w = seeds.weights
    n = seeds.n
    counts = np.zeros(n, dtype=np.int64)
    chunk = max(1, min(n_samples, int(4e7 // max(n, 1))))
    remaining = n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        pts = rng.uniform(-0.5, 0.5, (m, 3)) * L
        power = np.zeros((m, n))
        for c in range(3):
            d = pts[:, c : c + 1] - pos[None, :, c]
            d -= L[c] * np.round(d / L[c])
            power += d * d
        power -= w[None, :]
        counts += np.bincount(np.argmin(power, axis=1), minlength=n)
        remaining -= m
    p = counts / n_samples
    estimates = p * lat.volume
    std_err = lat.volume * np.sqrt(p * (1.0 - p) / n_samples)
    return estimates, std_err
