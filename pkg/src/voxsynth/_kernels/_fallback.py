"""Pure-numpy closest-point kernels.

The arithmetic mirrors ``_bvh.pyx`` operation for operation (same
association order, no fused multiply-add), so both backends return
bit-identical distances. Queries are vectorized over (point, triangle)
pairs instead of looping per point.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 18


def _dot(ux, uy, uz, vx, vy, vz):
    return ux * vx + uy * vy + uz * vz


def closest_pairs(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Closest point on triangle ``(a[i], b[i], c[i])`` to ``p[i]``, for every row.

    Region classification over vertices, edges and the face interior.
    Returns ``(d2, q)``.
    """
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    cx, cy, cz = c[:, 0], c[:, 1], c[:, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = _dot(abx, aby, abz, apx, apy, apz)
    d2 = _dot(acx, acy, acz, apx, apy, apz)
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
    d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
    d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = len(ax)
    qx, qy, qz = np.empty(n), np.empty(n), np.empty(n)
    done = np.zeros(n, dtype=bool)

    def put(mask, x, y, z):
        m = mask & ~done
        qx[m], qy[m], qz[m] = x[m], y[m], z[m]
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), ax, ay, az)
        put((d3 >= 0) & (d4 <= d3), bx, by, bz)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), ax + v * abx, ay + v * aby, az + v * abz)
        put((d6 >= 0) & (d5 <= d6), cx, cy, cz)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), ax + w * acx, ay + w * acy, az + w * acz)
        e43, e56 = d4 - d3, d5 - d6
        w = e43 / (e43 + e56)
        put((va <= 0) & (e43 >= 0) & (e56 >= 0), bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        put(~done, ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w)
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz, np.stack([qx, qy, qz], axis=1)


def _reduce(n_points, pt, d2, q, tri, best_d2, best_q, best_t):
    """Fold candidate (point, d2, q, tri) rows into the running lexicographic (d2, tri) minimum."""
    if len(pt) == 0:
        return
    order = np.lexsort((tri, d2, pt))
    pt, d2, q, tri = pt[order], d2[order], q[order], tri[order]
    first = np.ones(len(pt), dtype=bool)
    first[1:] = pt[1:] != pt[:-1]
    pt, d2, q, tri = pt[first], d2[first], q[first], tri[first]
    better = (d2 < best_d2[pt]) | ((d2 == best_d2[pt]) & (tri < best_t[pt]))
    pt, d2, q, tri = pt[better], d2[better], q[better], tri[better]
    best_d2[pt], best_q[pt], best_t[pt] = d2, q, tri


def brute_closest(points, a, b, c):
    """Exhaustive scan over all triangles for each point."""
    n, m = len(points), len(a)
    best_d2 = np.full(n, np.inf)
    best_q = np.zeros((n, 3))
    best_t = np.full(n, -1, dtype=np.int64)
    step = max(1, _CHUNK // max(m, 1))
    tri_ids = np.arange(m)
    for s in range(0, n, step):
        pt = np.repeat(np.arange(s, min(n, s + step)), m)
        tri = np.tile(tri_ids, len(pt) // m)
        d2, q = closest_pairs(points[pt], a[tri], b[tri], c[tri])
        _reduce(n, pt, d2, q, tri, best_d2, best_q, best_t)
    return best_d2, best_q, best_t


def _box_d2(p, lo, hi):
    g = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    return g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1] + g[:, 2] * g[:, 2]


def _eval_leaves(points, pt, node, a, b, c, perm, start, count, best_d2, best_q, best_t):
    cnt = count[node]
    rep = np.repeat(np.arange(len(pt)), cnt)
    offs = np.arange(len(rep)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    k = start[node][rep] + offs
    pp = pt[rep]
    d2, q = closest_pairs(points[pp], a[k], b[k], c[k])
    _reduce(len(points), pp, d2, q, perm[k], best_d2, best_q, best_t)


def bvh_closest(points, a, b, c, perm, lo, hi, left, right, start, count, slack):
    """BVH traversal; triangle arrays are in BVH leaf order and ``perm`` maps back.

    A greedy nearest-child descent seeds each point's bound, then a pruned
    breadth-first sweep visits every node that could still hold a closer
    or tying triangle.
    """
    n = len(points)
    best_d2 = np.full(n, np.inf)
    best_q = np.zeros((n, 3))
    best_t = np.full(n, -1, dtype=np.int64)
    pts_all = np.arange(n)
    node = np.zeros(n, dtype=np.int64)
    while True:
        inner = count[node] == 0
        if not inner.any():
            break
        l, r = left[node[inner]], right[node[inner]]
        p = points[inner]
        go_left = _box_d2(p, lo[l], hi[l]) <= _box_d2(p, lo[r], hi[r])
        node[inner] = np.where(go_left, l, r)
    _eval_leaves(points, pts_all, node, a, b, c, perm, start, count, best_d2, best_q, best_t)

    pt, nd = pts_all, np.zeros(n, dtype=np.int64)
    while len(pt):
        box = _box_d2(points[pt], lo[nd], hi[nd])
        lim = np.sqrt(best_d2[pt]) + slack
        keep = ~(box > lim * lim)
        pt, nd = pt[keep], nd[keep]
        leaf = count[nd] > 0
        if leaf.any():
            _eval_leaves(points, pt[leaf], nd[leaf], a, b, c, perm, start, count, best_d2, best_q, best_t)
        pt, nd = pt[~leaf], nd[~leaf]
        pt = np.concatenate([pt, pt])
        nd = np.concatenate([left[nd], right[nd]])
    return best_d2, best_q, best_t
