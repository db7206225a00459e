"""Marching-cubes surface extraction from binary masks, and ASCII PLY I/O.

The 256-entry case table is generated rather than transcribed. Each cube
face contributes oriented segments between its crossing edges; on the two
ambiguous face configurations the inside corners are kept apart. Because a
shared face sees the same four corners from both neighbouring cells, the
two cells emit the same segments in opposite directions, so the assembled
surface is closed and consistently oriented wherever the foreground does
not touch the grid boundary.
"""
from __future__ import annotations

import math
import os
from functools import lru_cache
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Volume

# corner c sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1) in (x, y, z)
CORNERS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)
EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
_EDGE_INDEX = {e: i for i, e in enumerate(EDGES)}
# axis along which each edge runs
EDGE_AXIS = np.array([(a ^ b).bit_length() - 1 for a, b in EDGES], dtype=np.int64)
EDGE_BASE = np.array([CORNERS[a] for a, _ in EDGES], dtype=np.int64)

# faces as (axis, side, corners in cyclic order)
_FACES = []
for _axis in range(3):
    for _side in (0, 1):
        ring = [c for c in range(8) if CORNERS[c][_axis] == _side]
        u, w = [a for a in range(3) if a != _axis]
        ring.sort(key=lambda c: np.arctan2(CORNERS[c][w] - 0.5, CORNERS[c][u] - 0.5))
        _FACES.append((_axis, _side, ring))


def _edge(a: int, b: int) -> int:
    return _EDGE_INDEX[(min(a, b), max(a, b))]


def _face_segments(case: int, axis: int, side: int, ring: list[int]) -> list[tuple[int, int]]:
    inside = [(case >> c) & 1 for c in ring]
    normal = np.zeros(3)
    normal[axis] = 1.0 if side else -1.0
    mid = {}
    segs = []
    # each inside corner with outside ring-neighbours is cut off by a segment;
    # runs of adjacent inside corners share one segment
    n = len(ring)
    if all(inside) or not any(inside):
        return []
    # walk runs of inside corners around the ring
    start = next(i for i in range(n) if inside[i] and not inside[i - 1])
    i = start
    visited = 0
    while visited < n:
        if inside[i % n] and not inside[(i - 1) % n]:
            j = i
            run = []
            while inside[j % n]:
                run.append(ring[j % n])
                j += 1
            e_in = _edge(ring[(i - 1) % n], ring[i % n])
            e_out = _edge(ring[(j - 1) % n], ring[j % n])
            segs.append((e_in, e_out, run))
            visited += j - i
            i = j
        else:
            i += 1
            visited += 1
    out = []
    for e0, e1, run in segs:
        for e in (e0, e1):
            a, b = EDGES[e]
            mid[e] = 0.5 * (CORNERS[a] + CORNERS[b])
        p_in = CORNERS[run].mean(axis=0)
        a, b = mid[e0], mid[e1]
        if np.dot(np.cross(b - a, p_in - a), normal) < 0:
            out.append((e0, e1))
        else:
            out.append((e1, e0))
    return out


def _case_triangles(case: int) -> list[tuple[int, int, int]]:
    nxt: dict[int, int] = {}
    for axis, side, ring in _FACES:
        for a, b in _face_segments(case, axis, side, ring):
            if a in nxt:
                raise AssertionError("inconsistent face segments")
            nxt[a] = b
    tris = []
    while nxt:
        first = min(nxt)
        loop = [first]
        cur = nxt.pop(first)
        while cur != first:
            loop.append(cur)
            cur = nxt.pop(cur)
        tris.extend(_triangulate(loop))
    return tris


def _edge_mid(e: int) -> tuple[float, float, float]:
    a, b = EDGES[e]
    return tuple(0.5 * float(CORNERS[a][k] + CORNERS[b][k]) for k in range(3))


def _share_face(e0: int, e1: int) -> bool:
    p, q = _edge_mid(e0), _edge_mid(e1)
    return any(p[k] == q[k] and p[k] in (0.0, 1.0) for k in range(3))


def _tri_area(p, q, r) -> float:
    u = [q[k] - p[k] for k in range(3)]
    w = [r[k] - p[k] for k in range(3)]
    c = (u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0])
    return 0.5 * math.sqrt(c[0] ** 2 + c[1] ** 2 + c[2] ** 2)


def _triangulate(loop: list[int]) -> list[tuple[int, int, int]]:
    """Least-area triangulation of a loop without on-face diagonals.

    A diagonal whose endpoints share a cube face would also be available to
    the neighbouring cell, so both cells could emit it and the edge would be
    used four times. Interior diagonals are private to the cell.
    """
    n = len(loop)
    pts = [_edge_mid(e) for e in loop]

    def ok(i: int, j: int) -> bool:
        return (j - i) % n in (1, n - 1) or not _share_face(loop[i], loop[j])

    @lru_cache(maxsize=None)
    def best(i: int, j: int):
        # optimal triangulation of the sub-polygon loop[i..j]
        if j - i < 2:
            return 0.0, ()
        out = None
        for k in range(i + 1, j):
            if not (ok(i, k) and ok(k, j)):
                continue
            left, right = best(i, k), best(k, j)
            if left is None or right is None:
                continue
            cost = left[0] + right[0] + _tri_area(pts[i], pts[k], pts[j])
            if out is None or cost < out[0] - 1e-12:
                out = (cost, left[1] + right[1] + ((i, k, j),))
        return out

    res = best(0, n - 1)
    if res is None:
        raise AssertionError("loop has no valid triangulation")
    return [(loop[i], loop[k], loop[j]) for i, k, j in res[1]]


def _build_table() -> np.ndarray:
    cases = [_case_triangles(c) for c in range(256)]
    width = max(len(t) for t in cases)
    table = np.full((256, width, 3), -1, dtype=np.int64)
    for c, tris in enumerate(cases):
        if tris:
            table[c, : len(tris)] = tris
    return table


TRI_TABLE = _build_table()
TRI_COUNT = (TRI_TABLE[:, :, 0] >= 0).sum(axis=1)


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64, mm
    triangles: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return self.n_triangles == 0

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def surface_area(self) -> float:
        return float(self.triangle_areas().sum())

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for outward-facing triangles."""
        a, b, c = self.corners()
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def edge_use_counts(self) -> dict[tuple[int, int], int]:
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {(int(a), int(b)): int(n) for (a, b), n in zip(keys, counts)}

    def is_watertight(self) -> bool:
        return bool(self.n_triangles) and all(n == 2 for n in self.edge_use_counts().values())

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edge_use_counts()) + self.n_triangles

    def translated(self, t) -> "Mesh":
        return Mesh(self.vertices + np.asarray(t, dtype=np.float64), self.triangles)


def marching_cubes(m: Volume, isolevel: float = 0.5) -> Mesh:
    """Surface of ``{mask > isolevel}`` with vertices in mm and outward normals.

    Vertices sit where grid edges cross the isolevel (edge midpoints for a
    {0, 1} mask). They are numbered by a global edge key in increasing order,
    which makes the vertex list independent of cell visiting order.
    """
    arr = np.asarray(m.array, dtype=np.float64)
    nz, ny, nx = arr.shape
    if min(nz, ny, nx) < 2:
        raise ValueError("mask dims must be >= 2 per axis")
    inside = (arr > isolevel).astype(np.int64)
    # transpose to (x, y, z) index order to match corner offsets
    f = inside.transpose(2, 1, 0)
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        case |= f[dx: nx - 1 + dx, dy: ny - 1 + dy, dz: nz - 1 + dz] << c
    cells = np.argwhere(TRI_COUNT[case] > 0)
    if len(cells) == 0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    ccase = case[cells[:, 0], cells[:, 1], cells[:, 2]]
    tri_local = TRI_TABLE[ccase]  # (cells, width, 3)
    valid = tri_local[:, :, 0] >= 0
    cell_of_tri = np.repeat(np.arange(len(cells)), valid.sum(axis=1))
    local = tri_local[valid]  # (T, 3) local edge ids
    base = cells[cell_of_tri][:, None, :] + EDGE_BASE[local]  # lower endpoint (x, y, z)
    axis = EDGE_AXIS[local]
    gkey = ((axis * nx + base[..., 0]) * ny + base[..., 1]) * nz + base[..., 2]
    keys, inverse = np.unique(gkey.reshape(-1), return_inverse=True)
    kz = keys % nz
    ky = (keys // nz) % ny
    kx = (keys // (nz * ny)) % nx
    ka = keys // (nz * ny * nx)
    p0 = np.stack([kx, ky, kz], axis=1).astype(np.float64)
    p1 = p0.copy()
    p1[np.arange(len(keys)), ka] += 1.0
    v0 = arr[p0[:, 2].astype(int), p0[:, 1].astype(int), p0[:, 0].astype(int)]
    v1 = arr[p1[:, 2].astype(int), p1[:, 1].astype(int), p1[:, 0].astype(int)]
    frac = (isolevel - v0) / (v1 - v0)
    idx = p0 + frac[:, None] * (p1 - p0)
    verts = np.asarray(m.origin, dtype=np.float64) + idx * np.asarray(m.spacing, dtype=np.float64)
    return Mesh(verts, inverse.reshape(-1, 3))


_PLY_HEADER = (
    "ply\nformat ascii 1.0\nelement vertex {nv}\nproperty float x\nproperty float y\n"
    "property float z\nelement face {nf}\nproperty list uchar int vertex_indices\nend_header\n"
)


def write_ply(mesh: Mesh, path: str | os.PathLike) -> None:
    """ASCII PLY; coordinates are rounded to float32 and printed with 9 significant digits."""
    v32 = mesh.vertices.astype(np.float32)
    lines = [_PLY_HEADER.format(nv=mesh.n_vertices, nf=mesh.n_triangles)]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in v32.tolist()]
    lines += [f"3 {a} {b} {c}\n" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("".join(lines))


def read_ply(path: str | os.PathLike) -> Mesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    nv = nf = None
    i = 1
    while i < len(lines) and lines[i].strip() != "end_header":
        parts = lines[i].split()
        if parts[:1] == ["format"] and parts[1:2] != ["ascii"]:
            raise ValueError("only ASCII PLY is supported")
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        i += 1
    if nv is None or nf is None or i == len(lines):
        raise ValueError("incomplete PLY header")
    body = lines[i + 1:]
    if len(body) < nv + nf:
        raise ValueError("truncated PLY body")
    verts = np.array([[float(x) for x in ln.split()[:3]] for ln in body[:nv]], dtype=np.float64).reshape(-1, 3)
    tris = []
    for ln in body[nv: nv + nf]:
        parts = [int(x) for x in ln.split()]
        if parts[0] != 3 or len(parts) != 4:
            raise ValueError("only triangle faces are supported")
        tris.append(parts[1:])
    return Mesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))
