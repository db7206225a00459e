# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled closest-point queries against triangle soups.

Same region-classification arithmetic as ``_fallback.py``, evaluated in C.
Build with ``-ffp-contract=off`` so results match the numpy path bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


cdef inline double _dot(double ux, double uy, double uz, double vx, double vy, double vz) nogil:
    return ux * vx + uy * vy + uz * vz


cdef inline double _closest(double px, double py, double pz,
                            double ax, double ay, double az,
                            double bx, double by, double bz,
                            double cx, double cy, double cz,
                            double* q) nogil:
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = _dot(abx, aby, abz, apx, apy, apz)
    cdef double d2 = _dot(acx, acy, acz, apx, apy, apz)
    cdef double bpx = px - bx, bpy = py - by, bpz = pz - bz
    cdef double d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
    cdef double d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
    cdef double cpx = px - cx, cpy = py - cy, cpz = pz - cz
    cdef double d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
    cdef double d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
    cdef double vc = d1 * d4 - d3 * d2
    cdef double vb = d5 * d2 - d1 * d6
    cdef double va = d3 * d6 - d5 * d4
    cdef double v, w, e43, e56, denom, dx, dy, dz
    if d1 <= 0 and d2 <= 0:
        q[0] = ax; q[1] = ay; q[2] = az
    elif d3 >= 0 and d4 <= d3:
        q[0] = bx; q[1] = by; q[2] = bz
    elif vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        q[0] = ax + v * abx; q[1] = ay + v * aby; q[2] = az + v * abz
    elif d6 >= 0 and d5 <= d6:
        q[0] = cx; q[1] = cy; q[2] = cz
    elif vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        q[0] = ax + w * acx; q[1] = ay + w * acy; q[2] = az + w * acz
    else:
        e43 = d4 - d3
        e56 = d5 - d6
        if va <= 0 and e43 >= 0 and e56 >= 0:
            w = e43 / (e43 + e56)
            q[0] = bx + w * (cx - bx); q[1] = by + w * (cy - by); q[2] = bz + w * (cz - bz)
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            q[0] = ax + abx * v + acx * w; q[1] = ay + aby * v + acy * w; q[2] = az + abz * v + acz * w
    dx = px - q[0]
    dy = py - q[1]
    dz = pz - q[2]
    return dx * dx + dy * dy + dz * dz


cdef inline double _box_d2(double px, double py, double pz, const double[:, ::1] lo,
                           const double[:, ::1] hi, Py_ssize_t n) nogil:
    cdef double g, s = 0.0
    cdef int k
    cdef double pk
    for k in range(3):
        pk = px if k == 0 else (py if k == 1 else pz)
        g = lo[n, k] - pk
        if g < 0.0:
            g = 0.0
        if pk - hi[n, k] > g:
            g = pk - hi[n, k]
        s = s + g * g
    return s


def brute_closest(const double[:, ::1] points, const double[:, ::1] a,
                  const double[:, ::1] b, const double[:, ::1] c):
    cdef Py_ssize_t n = points.shape[0], m = a.shape[0], i, t
    d2_out = np.empty(n)
    q_out = np.empty((n, 3))
    tri_out = np.empty(n, dtype=np.int64)
    cdef double[::1] d2v = d2_out
    cdef double[:, ::1] qv = q_out
    cdef long long[::1] tv = tri_out
    cdef double q[3]
    cdef double best, d
    cdef double bq0 = 0, bq1 = 0, bq2 = 0
    cdef long long bt
    with nogil:
        for i in range(n):
            best = INFINITY
            bt = -1
            for t in range(m):
                d = _closest(points[i, 0], points[i, 1], points[i, 2],
                             a[t, 0], a[t, 1], a[t, 2], b[t, 0], b[t, 1], b[t, 2],
                             c[t, 0], c[t, 1], c[t, 2], q)
                if d < best:
                    best = d
                    bt = t
                    bq0 = q[0]; bq1 = q[1]; bq2 = q[2]
            d2v[i] = best
            tv[i] = bt
            qv[i, 0] = bq0; qv[i, 1] = bq1; qv[i, 2] = bq2
    return d2_out, q_out, tri_out


def bvh_closest(const double[:, ::1] points, const double[:, ::1] a,
                const double[:, ::1] b, const double[:, ::1] c,
                const long long[::1] perm, const double[:, ::1] lo, const double[:, ::1] hi,
                const long long[::1] left, const long long[::1] right,
                const long long[::1] start, const long long[::1] count, double slack):
    cdef Py_ssize_t n = points.shape[0], n_nodes = lo.shape[0], i, k, s, e
    d2_out = np.empty(n)
    q_out = np.empty((n, 3))
    tri_out = np.empty(n, dtype=np.int64)
    cdef double[::1] d2v = d2_out
    cdef double[:, ::1] qv = q_out
    cdef long long[::1] tv = tri_out
    stack_arr = np.empty(2 * n_nodes + 2, dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    cdef Py_ssize_t top
    cdef long long node, l, r, t, bt
    cdef double q[3]
    cdef double best, d, box, lim, gl, gr, px, py, pz
    cdef double bq0 = 0, bq1 = 0, bq2 = 0
    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            best = INFINITY
            bt = -1
            top = 0
            stack[0] = 0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                box = _box_d2(px, py, pz, lo, hi, node)
                lim = sqrt(best) + slack
                if box > lim * lim:
                    continue
                if count[node] > 0:
                    s = start[node]
                    e = s + count[node]
                    for k in range(s, e):
                        d = _closest(px, py, pz, a[k, 0], a[k, 1], a[k, 2], b[k, 0], b[k, 1], b[k, 2],
                                     c[k, 0], c[k, 1], c[k, 2], q)
                        t = perm[k]
                        if d < best or (d == best and t < bt):
                            best = d
                            bt = t
                            bq0 = q[0]; bq1 = q[1]; bq2 = q[2]
                    continue
                l = left[node]
                r = right[node]
                gl = _box_d2(px, py, pz, lo, hi, l)
                gr = _box_d2(px, py, pz, lo, hi, r)
                if gl <= gr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
            d2v[i] = best
            tv[i] = bt
            qv[i, 0] = bq0; qv[i, 1] = bq1; qv[i, 2] = bq2
    return d2_out, q_out, tri_out
