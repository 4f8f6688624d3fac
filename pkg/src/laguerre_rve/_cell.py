"""Flat-array kernels that build Laguerre cells by successive half-space
clipping, measure them, and certify the image search.

This is the hot path of diagram construction: everything here operates on
plain arrays so that numba can compile it, and the batch entry point runs the
per-cell loop under ``prange`` so an entire diagram is one compiled call.
Setting ``RVE_DISABLE_NUMBA=1`` runs the identical code uncompiled (slow, for
debugging).  The object-level API in :mod:`laguerre_rve.geometry` implements
the same clipping rules; the two are cross-checked in the test suite.

Conventions shared with the driver in :mod:`laguerre_rve.tessellation`:

- candidates are images ``z = y_j + u * L`` supplied sorted by distance from
  the seed; the kernel re-sorts them by power distance so the most aggressive
  cuts come first;
- a candidate whose minimum possible power over the current cell exceeds the
  seed's maximum power P = R^2 - w_self cannot cut and is skipped; the same
  bound with the batch's covering radius certifies that no unfetched image
  can cut (later cuts only shrink R and P, so early skips stay valid);
- facet tags are candidate row indices (box faces are -1); the driver maps
  rows back to (seed, shift) pairs.
"""

from __future__ import annotations

import math
import os

import numpy as np

if os.environ.get("RVE_DISABLE_NUMBA"):

    def njit(*args, **kwargs):  # noqa: D103 - numba stand-in
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap

    prange = range

    def set_num_threads(n):  # noqa: D103
        pass

else:
    # The builtin threading layer avoids probing TBB/OpenMP (and the noisy
    # version warnings that can come with them); per-cell tasks are coarse
    # enough that the scheduler choice does not matter here.
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    from numba import njit, prange, set_num_threads  # noqa: F401

# Capacity limits. A 3D Laguerre cell has ~15 facets on average; the caps
# leave an order of magnitude of headroom. Overflow is reported via status
# and the driver falls back to the object-level path, never truncates.
MAXV = 512
MAXF = 128
MAXLOOP = 32

STATUS_OK = 0
STATUS_EMPTY = 1
STATUS_NEED_MORE = 2
STATUS_OVERFLOW = 3
STATUS_INSECURE = 4

BOX_FACET = -1

# Degree-2 tetrahedron quadrature (four symmetric points, equal weights).
_QA = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
_QB = (5.0 - math.sqrt(5.0)) / 20.0


@njit(cache=True, nogil=True)
def build_cell(
    y,
    w_self,
    box_half,
    cand_pos,
    cand_w,
    cand_dist,
    cand_skip,
    exhausted,
    w_max,
    snap_tol,
):
    """Clip the initial box around ``y`` by the radical planes of the
    supplied candidate images.

    Returns ``(status, verts, nv, loops, llen, fplane, ftag, nf)``; the facet
    arrays are only meaningful for STATUS_OK.
    """
    nc = cand_pos.shape[0]
    verts = np.empty((MAXV, 3))
    loops = np.empty((MAXF, MAXLOOP), np.int32)
    llen = np.empty(MAXF, np.int32)
    fplane = np.empty((MAXF, 4))
    ftag = np.empty(MAXF, np.int32)

    # Initial box y +- box_half with one facet per face.
    for corner in range(8):
        verts[corner, 0] = y[0] + (box_half[0] if corner & 1 else -box_half[0])
        verts[corner, 1] = y[1] + (box_half[1] if corner & 2 else -box_half[1])
        verts[corner, 2] = y[2] + (box_half[2] if corner & 4 else -box_half[2])
    nv = 8
    box_loops = np.array(
        [
            [0, 2, 6, 4],
            [1, 3, 7, 5],
            [0, 1, 5, 4],
            [2, 3, 7, 6],
            [0, 1, 3, 2],
            [4, 5, 7, 6],
        ],
        np.int32,
    )
    for f in range(6):
        for t in range(4):
            loops[f, t] = box_loops[f, t]
        llen[f] = 4
        axis = f // 2
        sign = 1.0 if f % 2 else -1.0
        for c in range(3):
            fplane[f, c] = 0.0
        fplane[f, axis] = sign
        fplane[f, 3] = sign * y[axis] + box_half[axis]
        ftag[f] = BOX_FACET
    nf = 6

    alive = np.empty(MAXV, np.bool_)
    seen = np.empty(MAXV, np.int32)
    sval = np.empty(MAXV)
    for v in range(8):
        alive[v] = True
        seen[v] = -1

    R2 = 0.0
    for v in range(8):
        d2 = 0.0
        for c in range(3):
            d2 += (verts[v, c] - y[c]) ** 2
        if d2 > R2:
            R2 = d2

    power = np.empty(nc)
    for i in range(nc):
        power[i] = cand_dist[i] * cand_dist[i] - cand_w[i]
    order = np.argsort(power)

    new_loop = np.empty(MAXLOOP, np.int32)
    cut_a = np.empty(2 * MAXLOOP, np.int32)
    cut_b = np.empty(2 * MAXLOOP, np.int32)
    cut_v = np.empty(2 * MAXLOOP, np.int32)
    sec = np.empty(MAXLOOP, np.int32)
    sec_angle = np.empty(MAXLOOP)
    empty = False

    for oi in range(nc):
        ci = order[oi]
        if cand_skip[ci]:
            continue
        d = cand_dist[ci]
        R = math.sqrt(R2)
        P = R2 - w_self
        if d > R and (d - R) * (d - R) - cand_w[ci] > P:
            continue

        # Radical plane through the weighted midpoint, oriented so the
        # seed's power-smaller side is kept.
        gx = cand_pos[ci, 0] - y[0]
        gy = cand_pos[ci, 1] - y[1]
        gz = cand_pos[ci, 2] - y[2]
        gn = math.sqrt(gx * gx + gy * gy + gz * gz)
        nx = gx / gn
        ny = gy / gn
        nz = gz / gn
        coff = (
            0.5 * (nx * (cand_pos[ci, 0] + y[0]) + ny * (cand_pos[ci, 1] + y[1]) + nz * (cand_pos[ci, 2] + y[2]))
            + (w_self - cand_w[ci]) / (2.0 * gn)
        )

        has_pos = False
        has_neg = False
        for v in range(nv):
            if not alive[v]:
                continue
            s = nx * verts[v, 0] + ny * verts[v, 1] + nz * verts[v, 2] - coff
            if -snap_tol <= s <= snap_tol:
                s = 0.0
            sval[v] = s
            if s > 0.0:
                has_pos = True
            elif s < 0.0:
                has_neg = True
        if not has_pos:
            continue
        if not has_neg:
            empty = True
            break

        n_cut = 0
        for f in range(nf):
            m = llen[f]
            if m == 0:
                continue
            anypos = False
            for t in range(m):
                if sval[loops[f, t]] > 0.0:
                    anypos = True
                    break
            if not anypos:
                continue
            p = 0
            for t in range(m):
                a = loops[f, t]
                b = loops[f, (t + 1) % m]
                sa = sval[a]
                sb = sval[b]
                if sa <= 0.0:
                    if p >= MAXLOOP:
                        return STATUS_OVERFLOW, verts, nv, loops, llen, fplane, ftag, nf
                    new_loop[p] = a
                    p += 1
                if (sa < 0.0 and sb > 0.0) or (sa > 0.0 and sb < 0.0):
                    lo = a if a < b else b
                    hi = b if a < b else a
                    vi = -1
                    for q in range(n_cut):
                        if cut_a[q] == lo and cut_b[q] == hi:
                            vi = cut_v[q]
                            break
                    if vi < 0:
                        if nv >= MAXV or n_cut >= 2 * MAXLOOP:
                            return (
                                STATUS_OVERFLOW,
                                verts,
                                nv,
                                loops,
                                llen,
                                fplane,
                                ftag,
                                nf,
                            )
                        tt = sa / (sa - sb)
                        for c in range(3):
                            verts[nv, c] = verts[a, c] + tt * (verts[b, c] - verts[a, c])
                        sval[nv] = 0.0
                        seen[nv] = -1
                        cut_a[n_cut] = lo
                        cut_b[n_cut] = hi
                        cut_v[n_cut] = nv
                        vi = nv
                        n_cut += 1
                        nv += 1
                    if p >= MAXLOOP:
                        return STATUS_OVERFLOW, verts, nv, loops, llen, fplane, ftag, nf
                    new_loop[p] = vi
                    p += 1
            # Drop consecutive duplicates (cyclically).
            q = 0
            for t in range(p):
                v = new_loop[t]
                if q > 0 and new_loop[q - 1] == v:
                    continue
                new_loop[q] = v
                q += 1
            if q > 1 and new_loop[0] == new_loop[q - 1]:
                q -= 1
            if q >= 3:
                for t in range(q):
                    loops[f, t] = new_loop[t]
                llen[f] = q
            else:
                llen[f] = 0

        # Section polygon: on-plane vertices of surviving facets, ordered by
        # angle around the cut normal.
        nsec = 0
        overflow = False
        for f in range(nf):
            for t in range(llen[f]):
                v = loops[f, t]
                if sval[v] == 0.0 and seen[v] != ci:
                    seen[v] = ci
                    if nsec >= MAXLOOP:
                        overflow = True
                        break
                    sec[nsec] = v
                    nsec += 1
            if overflow:
                break
        if overflow or nf >= MAXF:
            return STATUS_OVERFLOW, verts, nv, loops, llen, fplane, ftag, nf
        if nsec >= 3:
            # Basis in the cut plane: e1 = cross(n, axis), e2 = cross(n, e1).
            ax = 0
            amin = abs(nx)
            if abs(ny) < amin:
                ax = 1
                amin = abs(ny)
            if abs(nz) < amin:
                ax = 2
            if ax == 0:
                e1x, e1y, e1z = 0.0, nz, -ny
            elif ax == 1:
                e1x, e1y, e1z = -nz, 0.0, nx
            else:
                e1x, e1y, e1z = ny, -nx, 0.0
            en = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
            e1x /= en
            e1y /= en
            e1z /= en
            e2x = ny * e1z - nz * e1y
            e2y = nz * e1x - nx * e1z
            e2z = nx * e1y - ny * e1x
            cx = 0.0
            cy = 0.0
            cz = 0.0
            for t in range(nsec):
                v = sec[t]
                cx += verts[v, 0]
                cy += verts[v, 1]
                cz += verts[v, 2]
            cx /= nsec
            cy /= nsec
            cz /= nsec
            for t in range(nsec):
                v = sec[t]
                rx = verts[v, 0] - cx
                ry = verts[v, 1] - cy
                rz = verts[v, 2] - cz
                sec_angle[t] = math.atan2(
                    rx * e2x + ry * e2y + rz * e2z, rx * e1x + ry * e1y + rz * e1z
                )
            ordering = np.argsort(sec_angle[:nsec])
            for t in range(nsec):
                loops[nf, t] = sec[ordering[t]]
            llen[nf] = nsec
            fplane[nf, 0] = nx
            fplane[nf, 1] = ny
            fplane[nf, 2] = nz
            fplane[nf, 3] = coff
            ftag[nf] = ci
            nf += 1

        # Refresh aliveness and the circumradius about the seed.
        for v in range(nv):
            alive[v] = False
        R2 = 0.0
        for f in range(nf):
            for t in range(llen[f]):
                alive[loops[f, t]] = True
        for v in range(nv):
            if alive[v]:
                d2 = 0.0
                for c in range(3):
                    d2 += (verts[v, c] - y[c]) ** 2
                if d2 > R2:
                    R2 = d2

    if empty:
        return STATUS_EMPTY, verts, nv, loops, llen, fplane, ftag, nf

    status = STATUS_OK
    if not exhausted:
        r_cover = 0.0
        for i in range(nc):
            if cand_dist[i] > r_cover:
                r_cover = cand_dist[i]
        R = math.sqrt(R2)
        P = R2 - w_self
        if not (r_cover >= R and (r_cover - R) * (r_cover - R) - w_max > P):
            status = STATUS_NEED_MORE
    return status, verts, nv, loops, llen, fplane, ftag, nf


@njit(cache=True, nogil=True)
def cell_measures(verts, loops, llen, nf, y):
    """Volume, centroid, second moment about ``y``, and per-facet areas.

    Fan decomposition about the vertex mean; volume and centroid are exact,
    the quadratic moment uses a degree-2 quadrature per tetrahedron (exact
    for the quadratic integrand).
    """
    qx = 0.0
    qy = 0.0
    qz = 0.0
    count = 0
    counted = np.zeros(verts.shape[0], np.bool_)
    for f in range(nf):
        for t in range(llen[f]):
            v = loops[f, t]
            if not counted[v]:
                counted[v] = True
                qx += verts[v, 0]
                qy += verts[v, 1]
                qz += verts[v, 2]
                count += 1
    areas = np.zeros(nf)
    if count == 0:
        return 0.0, qx, qy, qz, 0.0, areas
    qx /= count
    qy /= count
    qz /= count

    volume = 0.0
    cenx = 0.0
    ceny = 0.0
    cenz = 0.0
    moment = 0.0
    for f in range(nf):
        m = llen[f]
        if m < 3:
            continue
        a = loops[f, 0]
        crx = 0.0
        cry = 0.0
        crz = 0.0
        vol_f = 0.0
        cfx = 0.0
        cfy = 0.0
        cfz = 0.0
        mom_f = 0.0
        for t in range(1, m - 1):
            b = loops[f, t]
            cc = loops[f, t + 1]
            abx = verts[b, 0] - verts[a, 0]
            aby = verts[b, 1] - verts[a, 1]
            abz = verts[b, 2] - verts[a, 2]
            acx = verts[cc, 0] - verts[a, 0]
            acy = verts[cc, 1] - verts[a, 1]
            acz = verts[cc, 2] - verts[a, 2]
            crx += aby * acz - abz * acy
            cry += abz * acx - abx * acz
            crz += abx * acy - aby * acx
            # Tetrahedron (q, a, b, c).
            ux = verts[a, 0] - qx
            uy = verts[a, 1] - qy
            uz = verts[a, 2] - qz
            vx = verts[b, 0] - qx
            vy = verts[b, 1] - qy
            vz = verts[b, 2] - qz
            wx = verts[cc, 0] - qx
            wy = verts[cc, 1] - qy
            wz = verts[cc, 2] - qz
            vt = (
                ux * (vy * wz - vz * wy)
                - uy * (vx * wz - vz * wx)
                + uz * (vx * wy - vy * wx)
            ) / 6.0
            vol_f += vt
            cfx += vt * (qx + verts[a, 0] + verts[b, 0] + verts[cc, 0]) * 0.25
            cfy += vt * (qy + verts[a, 1] + verts[b, 1] + verts[cc, 1]) * 0.25
            cfz += vt * (qz + verts[a, 2] + verts[b, 2] + verts[cc, 2]) * 0.25
            sx = qx + verts[a, 0] + verts[b, 0] + verts[cc, 0]
            sy = qy + verts[a, 1] + verts[b, 1] + verts[cc, 1]
            sz = qz + verts[a, 2] + verts[b, 2] + verts[cc, 2]
            acc = 0.0
            for k in range(4):
                if k == 0:
                    kx, ky, kz = qx, qy, qz
                elif k == 1:
                    kx, ky, kz = verts[a, 0], verts[a, 1], verts[a, 2]
                elif k == 2:
                    kx, ky, kz = verts[b, 0], verts[b, 1], verts[b, 2]
                else:
                    kx, ky, kz = verts[cc, 0], verts[cc, 1], verts[cc, 2]
                px = _QA * kx + _QB * (sx - kx) - y[0]
                py = _QA * ky + _QB * (sy - ky) - y[1]
                pz = _QA * kz + _QB * (sz - kz) - y[2]
                acc += px * px + py * py + pz * pz
            mom_f += vt * acc * 0.25
        areas[f] = 0.5 * math.sqrt(crx * crx + cry * cry + crz * crz)
        if vol_f >= 0.0:
            volume += vol_f
            cenx += cfx
            ceny += cfy
            cenz += cfz
            moment += mom_f
        else:
            volume -= vol_f
            cenx -= cfx
            ceny -= cfy
            cenz -= cfz
            moment -= mom_f
    if volume > 0.0:
        cenx /= volume
        ceny /= volume
        cenz /= volume
    return volume, cenx, ceny, cenz, moment, areas


@njit(cache=True, nogil=True)
def cell_secure(verts, loops, llen, ftag, nf, areas, y, w_self, w_max, shell_half, sliver_tol):
    """Security check: no surviving box facet, and every image outside the
    searched shells has minimum possible power over the cell exceeding the
    seed's maximum power."""
    R2 = 0.0
    margin = 1e300
    for f in range(nf):
        m = llen[f]
        if m < 3:
            continue
        if ftag[f] == BOX_FACET and areas[f] > sliver_tol:
            return False
        for t in range(m):
            v = loops[f, t]
            d2 = 0.0
            for c in range(3):
                d2 += (verts[v, c] - y[c]) ** 2
                gap = shell_half[c] - abs(verts[v, c])
                if gap < margin:
                    margin = gap
            if d2 > R2:
                R2 = d2
    if margin < 0.0:
        return False
    return margin * margin - w_max > R2 - w_self


@njit(cache=True, parallel=True)
def build_diagram_batch(
    positions,
    weights,
    images,
    w_img,
    knn_idx,
    knn_dist,
    self_ids,
    exhausted,
    box_half,
    shell_half,
    w_max,
    snap_tol,
    sliver_tol,
    max_ifaces,
):
    """Build every cell of a diagram in one parallel pass.

    Per cell: status, volume, centroid, quadratic moment about the seed,
    live-facet count, and the tagged interface list (global image row, area,
    seed-image distance).  Cells whose status is not STATUS_OK/STATUS_EMPTY
    are redone by the driver on its slower certified path.
    """
    n = positions.shape[0]
    status = np.empty(n, np.int32)
    volumes = np.zeros(n)
    centroids = np.full((n, 3), np.nan)
    moments = np.zeros(n)
    face_counts = np.zeros(n, np.int32)
    nif = np.zeros(n, np.int32)
    if_row = np.empty((n, max_ifaces), np.int64)
    if_area = np.empty((n, max_ifaces))
    if_delta = np.empty((n, max_ifaces))

    for i in prange(n):
        y = positions[i]
        st, verts, nv, loops, llen, fplane, ftag, nf = build_cell(
            y,
            weights[i],
            box_half,
            images[knn_idx[i]],
            w_img[knn_idx[i]],
            knn_dist[i],
            knn_idx[i] == self_ids[i],
            exhausted,
            w_max,
            snap_tol,
        )
        if st == STATUS_EMPTY:
            status[i] = st
            continue
        if st != STATUS_OK:
            status[i] = st
            continue
        vol, cx, cy, cz, mom, areas = cell_measures(verts, loops, llen, nf, y)
        if not cell_secure(
            verts, loops, llen, ftag, nf, areas, y, weights[i], w_max, shell_half, sliver_tol
        ):
            status[i] = STATUS_INSECURE
            continue
        count = 0
        k = 0
        bad = False
        for f in range(nf):
            if llen[f] < 3 or areas[f] <= sliver_tol:
                continue
            count += 1
            if ftag[f] >= 0:
                if k >= max_ifaces:
                    bad = True
                    break
                row = knn_idx[i, ftag[f]]
                if_row[i, k] = row
                if_area[i, k] = areas[f]
                dd = 0.0
                for c in range(3):
                    dd += (images[row, c] - y[c]) ** 2
                if_delta[i, k] = math.sqrt(dd)
                k += 1
        if bad:
            status[i] = STATUS_OVERFLOW
            continue
        status[i] = STATUS_OK
        volumes[i] = vol
        centroids[i, 0] = cx
        centroids[i, 1] = cy
        centroids[i, 2] = cz
        moments[i] = mom
        face_counts[i] = count
        nif[i] = k
    return status, volumes, centroids, moments, face_counts, nif, if_row, if_area, if_delta
