"""Landmark-based validation of reconstructed surfaces.

Rigid pre-alignment (centroid + principal axes), point-to-surface ICP with
exact closest points, and a per-level distance report.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .reconstruct import Mesh

LEAF_SIZE = 8
ICP_ITERS = 100
ICP_TOL = 1e-6


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Landmark:
    level: str
    name: str
    point: tuple[float, float, float]

    def __post_init__(self):
        if not self.level:
            raise ValidationError("landmark level must be non-empty")
        if not all(math.isfinite(c) for c in self.point):
            raise ValidationError("landmark coordinates must be finite")


def read_landmarks(path: str | os.PathLike) -> list[Landmark]:
    """Parse ``level,name,x_mm,y_mm,z_mm`` rows (header required)."""
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["level", "name", "x_mm", "y_mm", "z_mm"]:
        raise ValidationError("landmark file needs header level,name,x_mm,y_mm,z_mm")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise ValidationError(f"malformed landmark row at line {lineno}")
        try:
            xyz = tuple(float(c) for c in row[2:])
        except ValueError:
            raise ValidationError(f"non-numeric coordinate at line {lineno}") from None
        out.append(Landmark(row[0].strip(), row[1].strip(), xyz))
    if not out:
        raise ValidationError("no landmarks")
    return out


def write_landmarks(landmarks, path: str | os.PathLike) -> None:
    """Write ``Landmark`` objects or ``(level, name, (x, y, z))`` tuples as CSV."""
    lines = ["level,name,x_mm,y_mm,z_mm"]
    for lm in landmarks:
        level, name, point = (lm.level, lm.name, lm.point) if isinstance(lm, Landmark) else lm
        lines.append(",".join([level, name] + [repr(float(c)) for c in point]))
    Path(path).write_text("\n".join(lines) + "\n")


def group_by_level(landmarks: list[Landmark]) -> dict[str, list[Landmark]]:
    """Levels in order of first appearance."""
    groups: dict[str, list[Landmark]] = {}
    for lm in landmarks:
        groups.setdefault(lm.level, []).append(lm)
    return groups


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValidationError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """``self`` after ``first``."""
        return RigidTransform(self.rotation @ first.rotation, self.rotation @ first.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    @staticmethod
    def from_euler_deg(angles, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        ax, ay, az = np.deg2rad(np.asarray(angles, dtype=np.float64))
        rx = np.array([[1, 0, 0], [0, math.cos(ax), -math.sin(ax)], [0, math.sin(ax), math.cos(ax)]])
        ry = np.array([[math.cos(ay), 0, math.sin(ay)], [0, 1, 0], [-math.sin(ay), 0, math.cos(ay)]])
        rz = np.array([[math.cos(az), -math.sin(az), 0], [math.sin(az), math.cos(az), 0], [0, 0, 1]])
        return RigidTransform(_orthonormalize(rz @ ry @ rx), translation)

    @staticmethod
    def parse(text: str) -> "RigidTransform":
        """12 numbers: row-major 3x3 rotation then translation."""
        vals = [float(x) for x in text.replace(",", " ").split()]
        if len(vals) != 12:
            raise ValidationError("transform needs 12 numbers (9 rotation + 3 translation)")
        return RigidTransform(np.array(vals[:9]).reshape(3, 3), vals[9:])


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    return u @ vt


class SurfaceIndex:
    """BVH over a mesh's triangles for exact closest-point queries."""

    def __init__(self, mesh: Mesh):
        if mesh.is_empty():
            raise ValidationError("empty mesh")
        self.mesh = mesh
        a, b, c = mesh.corners()
        tri_lo = np.minimum(np.minimum(a, b), c)
        tri_hi = np.maximum(np.maximum(a, b), c)
        cent = (a + b + c) / 3.0
        perm = np.arange(len(a))
        lo, hi, left, right, start, count = [], [], [], [], [], []
        # iterative top-down build; each entry is (node id, begin, end) in perm
        lo.append(None); hi.append(None); left.append(-1); right.append(-1); start.append(0); count.append(0)
        todo = [(0, 0, len(a))]
        while todo:
            node, s, e = todo.pop()
            idx = perm[s:e]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if e - s <= LEAF_SIZE:
                start[node], count[node] = s, e - s
                continue
            ext = cent[idx].max(axis=0) - cent[idx].min(axis=0)
            axis = int(np.argmax(ext))
            order = np.argsort(cent[idx, axis], kind="stable")
            perm[s:e] = idx[order]
            mid = s + (e - s) // 2
            for child, cs, ce in ((0, s, mid), (1, mid, e)):
                cid = len(lo)
                lo.append(None); hi.append(None); left.append(-1); right.append(-1); start.append(0); count.append(0)
                (left if child == 0 else right)[node] = cid
                todo.append((cid, cs, ce))
        self.perm = perm
        self.a = np.ascontiguousarray(a[perm])
        self.b = np.ascontiguousarray(b[perm])
        self.c = np.ascontiguousarray(c[perm])
        self.lo = np.ascontiguousarray(np.array(lo))
        self.hi = np.ascontiguousarray(np.array(hi))
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        scale = float(np.abs(mesh.vertices).max()) + 1.0
        # pruning slack absorbs rounding in box vs triangle distances
        self.slack = 1e-9 * scale
        self._a0, self._b0, self._c0 = (np.ascontiguousarray(x) for x in (a, b, c))

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def query(self, points, backend=None):
        """``(distances, closest_points, triangle_ids)`` for each point."""
        impl = backend or _kernels
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        d2, q, tri = impl.bvh_closest(pts, self.a, self.b, self.c, self.perm, self.lo, self.hi,
                                      self.left, self.right, self.start, self.count, self.slack)
        return np.sqrt(d2), q, tri

    def brute_force(self, points, backend=None):
        impl = backend or _kernels
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        d2, q, tri = impl.brute_closest(pts, self._a0, self._b0, self._c0)
        return np.sqrt(d2), q, tri


def point_to_surface_distance(p, mesh: Mesh | SurfaceIndex) -> float:
    index = mesh if isinstance(mesh, SurfaceIndex) else SurfaceIndex(mesh)
    return float(index.query(np.asarray(p, dtype=np.float64).reshape(1, 3))[0][0])


def _principal_frame(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and right-handed principal axes (columns, largest variance first).

    The first two axes point toward positive third central moment; the third
    is their cross product.
    """
    c = pts.mean(axis=0)
    x = pts - c
    cov = x.T @ x / len(pts)
    w, v = np.linalg.eigh(cov)
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise ValidationError("degenerate (collinear) point set")
    axes = v[:, ::-1].copy()
    for k in range(2):
        if np.sum((x @ axes[:, k]) ** 3) < 0:
            axes[:, k] = -axes[:, k]
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return c, axes


# proper sign flips of a principal frame; the identity (third-moment frame) comes first
_SIGN_FLIPS = (np.diag([1.0, 1.0, 1.0]), np.diag([-1.0, -1.0, 1.0]),
               np.diag([-1.0, 1.0, -1.0]), np.diag([1.0, -1.0, -1.0]))


def prealign_candidates(points, mesh: Mesh) -> list[RigidTransform]:
    """Centroid + principal-axes alignments, third-moment frame first."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise ValidationError("need at least 3 points")
    cp, ep = _principal_frame(pts)
    cm, em = _principal_frame(mesh.vertices[np.unique(mesh.triangles)])
    out = []
    for flip in _SIGN_FLIPS:
        r = _orthonormalize(em @ flip @ ep.T)
        out.append(RigidTransform(r, cm - r @ cp))
    return out


def rigid_prealign(points, mesh: Mesh) -> RigidTransform:
    """Map the point cloud's centroid and principal axes onto the mesh vertices'.

    Axis signs follow the third-moment test.
    """
    return prealign_candidates(points, mesh)[0]


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation + translation taking ``src`` onto ``dst``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    if not np.any(np.abs(h) > 0) and np.allclose(src, cs):
        raise ValidationError("degenerate correspondences")
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    r = _orthonormalize(r)
    return RigidTransform(r, cd - r @ cs)


@dataclass
class IcpResult:
    transform: RigidTransform
    distances: np.ndarray
    history: list[float]  # mean distance before iteration 1, then after each accepted iteration
    iterations: int

    @property
    def mean_distance(self) -> float:
        return float(self.distances.mean())


def icp(points, mesh: Mesh | SurfaceIndex, max_iter: int = ICP_ITERS, tol: float = ICP_TOL,
        init: RigidTransform | None = None) -> IcpResult:
    """Point-to-surface ICP with Kabsch updates.

    An update that would raise the mean distance is rejected and ends the
    loop, so ``history`` never increases.
    """
    index = mesh if isinstance(mesh, SurfaceIndex) else SurfaceIndex(mesh)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("no points")
    if np.allclose(pts, pts[0]):
        raise ValidationError("degenerate correspondences")
    xf = init or RigidTransform()
    cur = xf.apply(pts)
    dist, q, _ = index.query(cur)
    history = [float(dist.mean())]
    it = 0
    while it < max_iter:
        step = kabsch(cur, q)
        cand_xf = step.compose(xf)
        cand = cand_xf.apply(pts)
        cdist, cq, _ = index.query(cand)
        new_mean = float(cdist.mean())
        if new_mean > history[-1]:
            break
        it += 1
        xf, cur, dist, q = cand_xf, cand, cdist, cq
        improvement = history[-1] - new_mean
        history.append(new_mean)
        if improvement < tol:
            break
    return IcpResult(xf, dist, history, it)


def register(points, mesh: Mesh | SurfaceIndex, max_iter: int = ICP_ITERS, tol: float = ICP_TOL,
             prealign_mesh: Mesh | None = None, multistart: bool = True,
             try_identity: bool = False) -> IcpResult:
    """Pre-align, then ICP.

    The third-moment sign test is unreliable along weakly skewed axes when
    the points are sparse, so with ``multistart`` ICP runs from each of the
    four principal-frame sign choices and the lowest final mean distance
    wins (earlier candidates win ties). ``try_identity`` adds the
    unmoved points as a last start, for landmarks already given in the
    mesh's frame.
    """
    index = mesh if isinstance(mesh, SurfaceIndex) else SurfaceIndex(mesh)
    cands = prealign_candidates(points, prealign_mesh or index.mesh)
    if not multistart:
        cands = cands[:1]
    if try_identity:
        cands = cands + [RigidTransform()]
    best = None
    for init in cands:
        res = icp(points, index, max_iter, tol, init=init)
        if best is None or res.mean_distance < best.mean_distance:
            best = res
    return best


@dataclass
class LevelResult:
    level: str
    n_landmarks: int
    mean_mm: float | None
    transform: RigidTransform | None = None


@dataclass
class LevelReport:
    rows: list[LevelResult]

    def measured(self) -> list[float]:
        return [r.mean_mm for r in self.rows if r.mean_mm is not None]

    @property
    def mean(self) -> float | None:
        m = self.measured()
        return float(np.mean(m)) if m else None

    @property
    def sd(self) -> float | None:
        m = self.measured()
        if len(m) < 2:
            return 0.0 if m else None
        return float(np.std(m, ddof=1))

    def format_table(self) -> str:
        """Aligned text table: one row per level, then the summary row."""
        lines = [f"{'Level':<16}{'Point-to-surface mean distance (mm)':>38}"]
        for r in self.rows:
            val = "N/A" if r.mean_mm is None else f"{r.mean_mm:.2f}"
            lines.append(f"{r.level:<16}{val:>38}")
        summary = "N/A" if self.mean is None else f"{self.mean:.2f} ± {self.sd:.2f}"
        lines.append(f"{'Mean ± S.D':<16}{summary:>38}")
        return "\n".join(lines) + "\n"

    def format_csv(self) -> str:
        lines = ["level,mean_mm"]
        for r in self.rows:
            lines.append(f"{r.level},{'N/A' if r.mean_mm is None else repr(r.mean_mm)}")
        lines.append(f"mean,{'N/A' if self.mean is None else repr(self.mean)}")
        lines.append(f"sd,{'N/A' if self.sd is None else repr(self.sd)}")
        return "\n".join(lines) + "\n"

    def write(self, stem: str | os.PathLike) -> tuple[Path, Path]:
        stem = Path(stem)
        txt, csv_path = stem.with_suffix(".txt"), stem.with_suffix(".csv")
        txt.write_text(self.format_table())
        csv_path.write_text(self.format_csv())
        return txt, csv_path


def _level_region(mesh: Mesh, pts: np.ndarray, margin: float) -> Mesh | None:
    lo, hi = pts.min(axis=0) - margin, pts.max(axis=0) + margin
    cent = sum(mesh.corners()) / 3.0
    keep = np.all((cent >= lo) & (cent <= hi), axis=1)
    if keep.sum() < 3:
        return None
    return Mesh(mesh.vertices, mesh.triangles[keep])


def per_level_report(landmarks: list[Landmark], mesh: Mesh, levels: list[str] | None = None,
                     icp_iters: int = ICP_ITERS, tol: float = ICP_TOL, region_margin_mm: float = 10.0,
                     init_transform: RigidTransform | None = None, prealign: bool = True,
                     multistart: bool = True) -> LevelReport:
    """Register each level's landmarks independently and report mean distances.

    Pre-alignment matches the landmarks against the part of the mesh inside
    their padded bounding box (the level's region); with ``multistart`` the
    landmarks' own placement is tried as a start as well. ``levels`` fixes the row
    order and may name levels with no landmarks, which report "N/A". An
    explicit ``init_transform`` replaces pre-alignment for every level.
    """
    index = SurfaceIndex(mesh)
    groups = group_by_level(landmarks)
    order = list(levels) if levels is not None else list(groups)
    rows = []
    for level in order:
        lms = groups.get(level, [])
        if not lms:
            rows.append(LevelResult(level, 0, None))
            continue
        pts = np.array([lm.point for lm in lms], dtype=np.float64)
        if init_transform is not None or not prealign:
            res = icp(pts, index, icp_iters, tol, init=init_transform)
        else:
            region = _level_region(mesh, pts, region_margin_mm) or mesh
            try:
                res = register(pts, index, icp_iters, tol, prealign_mesh=region, multistart=multistart,
                               try_identity=multistart)
            except ValidationError:
                # too few or collinear landmarks: no principal frame, start from identity
                res = icp(pts, index, icp_iters, tol)
        rows.append(LevelResult(level, len(pts), res.mean_distance, res.transform))
    return LevelReport(rows)
