"""Flat-array BVH over triangles with numba kernels.

Ray queries traverse a median-split BVH stored as parallel arrays; the
triangle data is re-packed in leaf order so leaf loops stream contiguous
memory. Closest-triangle queries are brute force: they are only used on
scan-sized inputs where exactness (including the lowest-index tie rule)
matters more than scaling.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .util import apply_thread_cap

_LEAF_SIZE = 8
_STACK = 128


@njit(cache=True)
def _build(tri_lo, tri_hi, cent):
    m = cent.shape[0]
    order = np.arange(m, dtype=np.int64)
    cap = 2 * m + 2
    node_lo = np.empty((cap, 3), np.float64)
    node_hi = np.empty((cap, 3), np.float64)
    child = np.full((cap, 2), -1, np.int64)
    span = np.zeros((cap, 2), np.int64)  # leaf: [start, end) into order

    stack = np.empty((cap, 3), np.int64)  # node, lo, hi
    stack[0] = (0, 0, m)
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, lo, hi = stack[sp]
        for a in range(3):
            mn = np.inf
            mx = -np.inf
            for i in range(lo, hi):
                t = order[i]
                if tri_lo[t, a] < mn:
                    mn = tri_lo[t, a]
                if tri_hi[t, a] > mx:
                    mx = tri_hi[t, a]
            node_lo[node, a] = mn
            node_hi[node, a] = mx

        axis = 0
        best_ext = -1.0
        for a in range(3):
            mn = np.inf
            mx = -np.inf
            for i in range(lo, hi):
                v = cent[order[i], a]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            if mx - mn > best_ext:
                best_ext = mx - mn
                axis = a

        if hi - lo <= _LEAF_SIZE or best_ext <= 0.0:
            span[node, 0] = lo
            span[node, 1] = hi
            continue

        keys = np.empty(hi - lo, np.float64)
        for i in range(lo, hi):
            keys[i - lo] = cent[order[i], axis]
        perm = np.argsort(keys)
        tmp = order[lo:hi].copy()
        for i in range(hi - lo):
            order[lo + i] = tmp[perm[i]]

        mid = (lo + hi) // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        child[node, 0] = l
        child[node, 1] = r
        stack[sp] = (l, lo, mid)
        sp += 1
        stack[sp] = (r, mid, hi)
        sp += 1

    return node_lo[:n_nodes].copy(), node_hi[:n_nodes].copy(), child[:n_nodes].copy(), span[:n_nodes].copy(), order


@njit(cache=True, inline="always")
def _slab_hit(lo, hi, ox, oy, oz, ix, iy, iz, tmin, tmax):
    t0 = (lo[0] - ox) * ix
    t1 = (hi[0] - ox) * ix
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    t0 = (lo[1] - oy) * iy
    t1 = (hi[1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    t0 = (lo[2] - oz) * iz
    t1 = (hi[2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    return tmin <= tmax


@njit(cache=True, error_model="numpy")
def _ray_nearest(node_lo, node_hi, child, span, order, tv0, te1, te2,
                 ox, oy, oz, dx, dy, dz, tmin):
    ix = 1.0 / dx
    iy = 1.0 / dy
    iz = 1.0 / dz
    best_t = np.inf
    best = -1
    bu = 0.0
    bv = 0.0
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab_hit(node_lo[node], node_hi[node], ox, oy, oz, ix, iy, iz, tmin, best_t):
            continue
        if child[node, 0] < 0:
            for i in range(span[node, 0], span[node, 1]):
                e1 = te1[i]
                e2 = te2[i]
                px = dy * e2[2] - dz * e2[1]
                py = dz * e2[0] - dx * e2[2]
                pz = dx * e2[1] - dy * e2[0]
                det = e1[0] * px + e1[1] * py + e1[2] * pz
                if det > -1e-300 and det < 1e-300:
                    continue
                inv = 1.0 / det
                sx = ox - tv0[i, 0]
                sy = oy - tv0[i, 1]
                sz = oz - tv0[i, 2]
                u = (sx * px + sy * py + sz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = sy * e1[2] - sz * e1[1]
                qy = sz * e1[0] - sx * e1[2]
                qz = sx * e1[1] - sy * e1[0]
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
                if t > tmin and t < best_t:
                    best_t = t
                    best = i
                    bu = u
                    bv = v
        else:
            stack[sp] = child[node, 0]
            sp += 1
            stack[sp] = child[node, 1]
            sp += 1
    if best < 0:
        return np.inf, -1, 0.0, 0.0
    return best_t, order[best], bu, bv


@njit(cache=True, error_model="numpy")
def _parity(node_lo, node_hi, child, span, order, tv0, te1, te2,
            ox, oy, oz, dx, dy, dz, t_eps, merge_eps, bary_eps):
    """Count strict-interior crossings with t > t_eps; flag degeneracies."""
    ix = 1.0 / dx
    iy = 1.0 / dy
    iz = 1.0 / dz
    ts = np.empty(128, np.float64)
    n_hits = 0
    degenerate = False
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab_hit(node_lo[node], node_hi[node], ox, oy, oz, ix, iy, iz, t_eps, np.inf):
            continue
        if child[node, 0] < 0:
            for i in range(span[node, 0], span[node, 1]):
                e1 = te1[i]
                e2 = te2[i]
                px = dy * e2[2] - dz * e2[1]
                py = dz * e2[0] - dx * e2[2]
                pz = dx * e2[1] - dy * e2[0]
                det = e1[0] * px + e1[1] * py + e1[2] * pz
                if det > -1e-300 and det < 1e-300:
                    continue
                inv = 1.0 / det
                sx = ox - tv0[i, 0]
                sy = oy - tv0[i, 1]
                sz = oz - tv0[i, 2]
                u = (sx * px + sy * py + sz * pz) * inv
                if u < -bary_eps or u > 1.0 + bary_eps:
                    continue
                qx = sy * e1[2] - sz * e1[1]
                qy = sz * e1[0] - sx * e1[2]
                qz = sx * e1[1] - sy * e1[0]
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < -bary_eps or u + v > 1.0 + bary_eps:
                    continue
                t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
                if t <= t_eps:
                    continue
                interior = (u > bary_eps) and (v > bary_eps) and (u + v < 1.0 - bary_eps)
                if not interior:
                    degenerate = True
                    continue
                if n_hits >= 128:
                    degenerate = True
                    continue
                ts[n_hits] = t
                n_hits += 1
        else:
            stack[sp] = child[node, 0]
            sp += 1
            stack[sp] = child[node, 1]
            sp += 1
    # two crossings at (numerically) the same depth cannot be resolved
    for i in range(n_hits):
        for j in range(i + 1, n_hits):
            d = ts[i] - ts[j]
            if -merge_eps < d < merge_eps:
                degenerate = True
    return n_hits, degenerate


@njit(cache=True, parallel=True)
def _batch_contains(node_lo, node_hi, child, span, order, tv0, te1, te2,
                    points, dirs, t_eps, merge_eps, bary_eps):
    n = points.shape[0]
    inside = np.zeros(n, np.uint8)
    failed = np.zeros(n, np.uint8)
    for i in prange(n):
        ok = False
        for k in range(dirs.shape[0]):
            cnt, degen = _parity(node_lo, node_hi, child, span, order, tv0, te1, te2,
                                 points[i, 0], points[i, 1], points[i, 2],
                                 dirs[k, 0], dirs[k, 1], dirs[k, 2],
                                 t_eps, merge_eps, bary_eps)
            if not degen:
                inside[i] = cnt & 1
                ok = True
                break
        if not ok:
            failed[i] = 1
    return inside, failed


@njit(cache=True, parallel=True)
def _batch_ray_nearest(node_lo, node_hi, child, span, order, tv0, te1, te2,
                       origins, dirs, tmin):
    n = origins.shape[0]
    t_out = np.empty(n, np.float64)
    tri_out = np.empty(n, np.int64)
    for i in prange(n):
        t, tri, _, _ = _ray_nearest(node_lo, node_hi, child, span, order, tv0, te1, te2,
                                    origins[i, 0], origins[i, 1], origins[i, 2],
                                    dirs[i, 0], dirs[i, 1], dirs[i, 2], tmin)
        t_out[i] = t
        tri_out[i] = tri
    return t_out, tri_out


@njit(cache=True, inline="always")
def _closest_on_triangle(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz):
    # Ericson, Real-Time Collision Detection, ClosestPtPointTriangle
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        w = d1 / (d1 - d3)
        return ax + w * abx, ay + w * aby, az + w * abz
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True, parallel=True)
def _closest_triangles(vertices, triangles, points):
    n = points.shape[0]
    tri_out = np.empty(n, np.int64)
    d_out = np.empty(n, np.float64)
    for i in prange(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        best = -1
        best_d2 = np.inf
        for t in range(triangles.shape[0]):
            a = vertices[triangles[t, 0]]
            b = vertices[triangles[t, 1]]
            c = vertices[triangles[t, 2]]
            qx, qy, qz = _closest_on_triangle(a[0], a[1], a[2], b[0], b[1], b[2],
                                              c[0], c[1], c[2], px, py, pz)
            d2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
            if d2 < best_d2:  # strict: exact ties keep the lowest index
                best_d2 = d2
                best = t
        tri_out[i] = best
        d_out[i] = np.sqrt(best_d2)
    return tri_out, d_out


class TriangleBvh:
    """Immutable ray-query accelerator for an indexed triangle set."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        apply_thread_cap()
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        v = self.vertices
        t = self.triangles
        p0 = v[t[:, 0]]
        p1 = v[t[:, 1]]
        p2 = v[t[:, 2]]
        tri_lo = np.minimum(np.minimum(p0, p1), p2)
        tri_hi = np.maximum(np.maximum(p0, p1), p2)
        cent = (p0 + p1 + p2) / 3.0
        (self._node_lo, self._node_hi, self._child, self._span,
         self._order) = _build(tri_lo, tri_hi, np.ascontiguousarray(cent))
        self._tv0 = np.ascontiguousarray(p0[self._order])
        self._te1 = np.ascontiguousarray(p1[self._order] - p0[self._order])
        self._te2 = np.ascontiguousarray(p2[self._order] - p0[self._order])

    def _args(self):
        return (self._node_lo, self._node_hi, self._child, self._span,
                self._order, self._tv0, self._te1, self._te2)

    def ray_nearest(self, origin, direction, tmin: float):
        """Nearest hit with t > tmin: (t, triangle index, u, v), or t = inf."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        return _ray_nearest(*self._args(), o[0], o[1], o[2], d[0], d[1], d[2], tmin)

    def batch_ray_nearest(self, origins, directions, tmin: float):
        return _batch_ray_nearest(*self._args(),
                                  np.ascontiguousarray(origins, dtype=np.float64),
                                  np.ascontiguousarray(directions, dtype=np.float64),
                                  tmin)

    def parity(self, point, direction, t_eps: float, merge_eps: float, bary_eps: float = 1e-9):
        p = np.asarray(point, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        return _parity(*self._args(), p[0], p[1], p[2], d[0], d[1], d[2],
                       t_eps, merge_eps, bary_eps)

    def batch_contains(self, points, dirs, t_eps: float, merge_eps: float, bary_eps: float = 1e-9):
        """Parity inside test per point, retrying across the direction pool.

        Returns (inside uint8, failed uint8); failed marks points whose every
        direction hit a degenerate crossing.
        """
        return _batch_contains(*self._args(),
                               np.ascontiguousarray(points, dtype=np.float64),
                               np.ascontiguousarray(dirs, dtype=np.float64),
                               t_eps, merge_eps, bary_eps)


def closest_triangles(vertices, triangles, points):
    """Brute-force nearest triangle per query point: (tri index, distance).

    Exact ties resolve to the lowest triangle index.
    """
    apply_thread_cap()
    return _closest_triangles(np.ascontiguousarray(vertices, dtype=np.float64),
                              np.ascontiguousarray(triangles, dtype=np.int64),
                              np.ascontiguousarray(points, dtype=np.float64))
