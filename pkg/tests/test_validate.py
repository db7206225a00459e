import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import blob_mesh, offset_landmarks, plane_mesh, sample_surface
from oracles import point_triangle_distance
from voxsynth.reconstruct import Mesh
from voxsynth.validate import (
    Landmark,
    LevelReport,
    LevelResult,
    RigidTransform,
    SurfaceIndex,
    ValidationError,
    group_by_level,
    icp,
    kabsch,
    per_level_report,
    point_to_surface_distance,
    read_landmarks,
    register,
    rigid_prealign,
    write_landmarks,
)

TRI = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), np.array([[0, 1, 2]]))
BLOB = blob_mesh()
BLOB_INDEX = SurfaceIndex(BLOB)


def random_motion(rng, max_deg=30.0, max_mm=20.0):
    return RigidTransform.from_euler_deg(rng.uniform(-max_deg, max_deg, 3), rng.uniform(-max_mm, max_mm, 3))


# -- landmarks ---------------------------------------------------------------------
def test_read_single_row(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("level,name,x_mm,y_mm,z_mm\nT2,anterior,1.0,2.0,3.0\n")
    (lm,) = read_landmarks(p)
    assert lm == Landmark("T2", "anterior", (1.0, 2.0, 3.0))


def test_read_errors(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("level,name,x_mm,y_mm,z_mm\n")
    with pytest.raises(ValidationError, match="no landmarks"):
        read_landmarks(p)
    p.write_text("level,name,x_mm,y_mm,z_mm\nT2,a,1,2\n")
    with pytest.raises(ValidationError, match="line 2"):
        read_landmarks(p)
    p.write_text("level,name,x_mm,y_mm,z_mm\nT2,a,1,2,zz\n")
    with pytest.raises(ValidationError, match="non-numeric"):
        read_landmarks(p)
    p.write_text("lvl,x\n")
    with pytest.raises(ValidationError, match="header"):
        read_landmarks(p)
    with pytest.raises(ValidationError):
        Landmark("", "a", (0.0, 0.0, 0.0))


def test_74_row_fixture_has_ten_levels(tmp_path):
    levels = [f"T{i}" for i in range(2, 12)]
    per = [8, 8, 8, 8, 7, 7, 7, 7, 7, 7]
    rows = [(lv, f"p{k}", (float(i), float(k), 0.5)) for i, (lv, n) in enumerate(zip(levels, per)) for k in range(n)]
    assert len(rows) == 74
    write_landmarks(rows, tmp_path / "l.csv")
    lms = read_landmarks(tmp_path / "l.csv")
    groups = group_by_level(lms)
    assert list(groups) == levels
    assert [len(g) for g in groups.values()] == per


def test_landmark_write_read_exact(tmp_path):
    pts = [Landmark("T4", "x", (0.1, -1e-7, 123.456789012345))]
    write_landmarks(pts, tmp_path / "l.csv")
    assert read_landmarks(tmp_path / "l.csv") == pts


# -- distances ---------------------------------------------------------------------
def test_distance_examples():
    assert point_to_surface_distance((0.25, 0.25, 0.0), TRI) == 0.0
    assert point_to_surface_distance((0.25, 0.25, 1.0), TRI) == 1.0
    assert point_to_surface_distance((2.0, 0.0, 0.0), TRI) == 1.0
    assert point_to_surface_distance((1.0, 1.0, 0.0), TRI) == pytest.approx(math.sqrt(0.5))
    with pytest.raises(ValidationError, match="empty mesh"):
        SurfaceIndex(Mesh(np.zeros((0, 3)), np.zeros((0, 3))))


@given(st.lists(st.floats(-3, 3), min_size=12, max_size=12))
def test_single_triangle_matches_oracle(xs):
    a, b, c, p = (np.array(xs[i:i + 3]) for i in range(0, 12, 3))
    if np.linalg.norm(np.cross(b - a, c - a)) < 1e-3:
        return
    mesh = Mesh(np.stack([a, b, c]), np.array([[0, 1, 2]]))
    d = point_to_surface_distance(p, mesh)
    assert abs(d - point_triangle_distance(p, a, b, c)) < 1e-9


def test_bvh_equals_brute_force():
    rng = np.random.default_rng(0)
    v = BLOB.vertices
    pts = rng.uniform(v.min(0) - 5, v.max(0) + 5, (1000, 3))
    d, q, tri = BLOB_INDEX.query(pts)
    db, qb, trib = BLOB_INDEX.brute_force(pts)
    assert np.array_equal(d, db) and np.array_equal(q, qb) and np.array_equal(tri, trib)
    # closest points lie on the reported triangles
    a, b, c = BLOB.corners()
    for i in range(0, 1000, 97):
        assert point_triangle_distance(q[i], a[tri[i]], b[tri[i]], c[tri[i]]) < 1e-9


@settings(max_examples=10)
@given(st.integers(0, 10 ** 6))
def test_distance_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    m = random_motion(rng)
    pts = rng.uniform(0, 40, (20, 3))
    moved = SurfaceIndex(Mesh(m.apply(BLOB.vertices), BLOB.triangles))
    d0 = BLOB_INDEX.query(pts)[0]
    d1 = moved.query(m.apply(pts))[0]
    assert np.abs(d0 - d1).max() < 1e-9


# -- transforms ----------------------------------------------------------------------
def test_rigid_transform_algebra():
    rng = np.random.default_rng(1)
    a, b = random_motion(rng), random_motion(rng)
    p = rng.normal(size=(5, 3))
    assert np.allclose(b.compose(a).apply(p), b.apply(a.apply(p)))
    assert np.allclose(a.inverse().apply(a.apply(p)), p)
    with pytest.raises(ValidationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    t = RigidTransform.parse("1 0 0 0 1 0 0 0 1 4 5 6")
    assert t.translation.tolist() == [4, 5, 6]
    with pytest.raises(ValidationError):
        RigidTransform.parse("1 2 3")


def test_kabsch_recovers_motion():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(10, 3))
    m = random_motion(rng)
    fit = kabsch(src, m.apply(src))
    assert np.abs(fit.rotation - m.rotation).max() < 1e-12
    assert np.abs(fit.translation - m.translation).max() < 1e-12


# -- prealignment ----------------------------------------------------------------------
def test_prealign_identity_and_translation():
    v = BLOB.vertices
    t = rigid_prealign(v, BLOB)
    assert np.abs(t.rotation - np.eye(3)).max() < 1e-6 and np.abs(t.translation).max() < 1e-6
    t = rigid_prealign(v + [5.0, 0.0, 0.0], BLOB)
    assert np.abs(t.rotation - np.eye(3)).max() < 1e-6
    assert np.allclose(t.translation, [-5.0, 0.0, 0.0], atol=1e-6)
    with pytest.raises(ValidationError, match="collinear"):
        rigid_prealign(np.outer(np.arange(5.0), [1, 2, 3]), BLOB)


def test_prealign_plus_icp_inverts_motion():
    rng = np.random.default_rng(3)
    v = BLOB.vertices
    for _ in range(3):
        m = random_motion(rng)
        res = register(m.apply(v), BLOB_INDEX)
        back = res.transform.compose(m)
        assert np.abs(back.rotation - np.eye(3)).max() < 1e-6
        assert np.abs(back.translation).max() < 1e-6


# -- ICP ------------------------------------------------------------------------------
def test_on_surface_points_converge_immediately():
    pts = sample_surface(BLOB, 100, np.random.default_rng(4))
    res = icp(pts, BLOB_INDEX)
    assert res.history[0] < 1e-9 and res.mean_distance < 1e-9 and res.iterations <= 1


def test_icp_degenerate():
    with pytest.raises(ValidationError, match="degenerate"):
        icp(np.ones((4, 3)), BLOB_INDEX)


@settings(max_examples=8)
@given(st.integers(0, 10 ** 6))
def test_icp_history_monotone(seed):
    rng = np.random.default_rng(seed)
    pts = sample_surface(BLOB, 150, rng)
    res = register(random_motion(rng).apply(pts), BLOB_INDEX)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-12)
    assert res.iterations <= 100


def test_icp_from_small_offset_monotone():
    rng = np.random.default_rng(5)
    pts = sample_surface(BLOB, 150, rng)
    start = RigidTransform.from_euler_deg((4, -3, 2), (1.0, -0.5, 0.7))
    res = icp(start.apply(pts), BLOB_INDEX)
    assert np.all(np.diff(res.history) <= 1e-12)
    assert res.mean_distance < 1e-3


def test_icp_point_order_invariance():
    rng = np.random.default_rng(6)
    pts = random_motion(rng, 10, 5).apply(sample_surface(BLOB, 80, rng))
    perm = rng.permutation(len(pts))
    a, b = register(pts, BLOB_INDEX), register(pts[perm], BLOB_INDEX)
    assert np.abs(a.transform.rotation - b.transform.rotation).max() < 1e-9
    assert np.abs(a.transform.translation - b.transform.translation).max() < 1e-9
    assert np.allclose(a.distances[perm], b.distances, atol=1e-9)


# -- report ---------------------------------------------------------------------------
def test_plane_fixture_levels():
    lms = offset_landmarks("T2", 1.0, (-20.0, -10.0)) + offset_landmarks("T3", 2.0, (15.0, 20.0))
    rep = per_level_report(lms, plane_mesh(), levels=["T2", "T3", "T4"])
    means = [r.mean_mm for r in rep.rows]
    assert abs(means[0] - 1.0) < 1e-9 and abs(means[1] - 2.0) < 1e-9 and means[2] is None
    assert abs(rep.mean - 1.5) < 1e-9 and abs(rep.sd - math.sqrt(0.5)) < 1e-9
    table = rep.format_table().splitlines()
    assert table[0].startswith("Level") and table[0].endswith("Point-to-surface mean distance (mm)")
    assert table[1].split() == ["T2", "1.00"] and table[2].split() == ["T3", "2.00"]
    assert table[3].split() == ["T4", "N/A"]
    assert table[4].startswith("Mean ± S.D") and table[4].endswith("1.50 ± 0.71")
    assert len({len(l) for l in table}) == 1


def test_on_surface_landmarks_every_level():
    rng = np.random.default_rng(7)
    pts = sample_surface(BLOB, 40, rng)
    lms = [Landmark(f"T{2 + i // 10}", f"p{i}", tuple(p)) for i, p in enumerate(pts)]
    rep = per_level_report(lms, BLOB)
    assert [r.level for r in rep.rows] == ["T2", "T3", "T4", "T5"]
    assert max(rep.measured()) < 1e-6 and rep.sd < 1e-6


def test_report_csv_and_write(tmp_path):
    rep = LevelReport([LevelResult("T2", 3, 1.25), LevelResult("T3", 0, None), LevelResult("T4", 3, 2.5)])
    assert rep.format_csv().splitlines() == [
        "level,mean_mm", "T2,1.25", "T3,N/A", "T4,2.5", "mean,1.875", f"sd,{float(np.std([1.25, 2.5], ddof=1))!r}"]
    txt, csv = rep.write(tmp_path / "r")
    assert txt.read_text() == rep.format_table() and csv.read_text() == rep.format_csv()
    empty = LevelReport([LevelResult("T9", 0, None)])
    assert empty.format_table().splitlines()[-1].endswith("N/A")
    single = LevelReport([LevelResult("T2", 3, 0.5)])
    assert single.sd == 0.0


def test_init_transform_override():
    lms = offset_landmarks("T2", 1.0)
    shift = RigidTransform(np.eye(3), (0.0, 0.0, 0.25))
    rep = per_level_report(lms, plane_mesh(), init_transform=shift)
    assert rep.rows[0].mean_mm == pytest.approx(1.0, abs=1e-9)
