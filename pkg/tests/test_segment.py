import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import flood_fill_components, median_loop, otsu_exhaustive
from voxsynth.phantom import PhantomSpec, generate_phantom_pair
from voxsynth.segment import (
    DegenerateSlice,
    between_class_variance,
    dice,
    histogram,
    keep_largest_components,
    median_smooth,
    otsu_threshold,
    segment_slices,
    segment_volume,
    write_mask,
)
from voxsynth.volume import Volume, read_metaimage_header

# window that drops the CT background and keeps soft tissue and bone
CT_WINDOW = (-0.5, 1.0)


def mask_volume(a):
    return Volume(np.asarray(a, dtype=np.float32))


# -- otsu ------------------------------------------------------------------------
def test_bimodal_half_and_half():
    s = np.zeros((8, 8))
    s[:, 4:] = 1
    t = otsu_threshold(s, 256, (0.0, 1.0))
    ref, _ = otsu_exhaustive(s, 256, (0.0, 1.0))
    assert t == pytest.approx(ref, abs=1e-12)
    # every interior edge separates perfectly; the lowest wins
    assert t == pytest.approx(1 / 256, abs=1e-12)
    assert np.array_equal(s > t, s == 1)


def test_constant_slice_is_degenerate():
    with pytest.raises(DegenerateSlice, match="degenerate slice"):
        otsu_threshold(np.full((4, 4), 0.3))
    with pytest.raises(DegenerateSlice):
        otsu_threshold(np.array([[0.0, 5.0]]), window=(1.0, 2.0))


@pytest.mark.parametrize("seed", range(100))
def test_random_slices_match_exhaustive_search(seed):
    s = np.random.default_rng(seed).random((16, 16))
    ref, _ = otsu_exhaustive(s)
    assert otsu_threshold(s) == pytest.approx(ref, abs=1e-12)


@given(st.integers(0, 10 ** 6), st.floats(0.0, 0.4), st.floats(0.6, 1.0), st.sampled_from([8, 32, 256]))
def test_windowed_matches_exhaustive(seed, lo, hi, bins):
    s = np.random.default_rng(seed).random((12, 12))
    inside = s[(s >= lo) & (s <= hi)]
    if np.unique(inside).size < 2:
        return
    ref, _ = otsu_exhaustive(s, bins, (lo, hi))
    assert otsu_threshold(s, bins, (lo, hi)) == pytest.approx(ref, abs=1e-12)


def test_bimodal_fixture_splits_modes():
    rng = np.random.default_rng(4)
    low, high = rng.normal(-0.5, 0.05, 200), rng.normal(0.6, 0.05, 56)
    s = np.concatenate([low, high]).reshape(16, 16)
    t = otsu_threshold(s)
    # all splits inside the empty gap tie, so the lowest edge above the low mode wins
    assert low.max() <= t < high.min()
    assert t - low.max() < (s.max() - s.min()) / 256
    assert t == pytest.approx(otsu_exhaustive(s)[0], abs=1e-12)


def test_histogram_and_variance_pieces():
    counts, edges = histogram(np.array([0.0, 0.5, 1.0]), 2, 0.0, 1.0)
    assert counts.tolist() == [1, 2] and edges.tolist() == [0.0, 0.5, 1.0]
    # one split at 0.5: classes {0.25} x1 and {0.75} x2
    assert between_class_variance(counts, edges).tolist() == pytest.approx([(1 / 3) * (2 / 3) * 0.25])


# -- per-slice segmentation --------------------------------------------------------
def test_two_level_volume_exact():
    rng = np.random.default_rng(1)
    bone = rng.random((6, 7, 8)) < 0.3
    bone[:, 0, 0], bone[:, 0, 1] = True, False
    v = Volume(np.where(bone, 0.8, -0.8).astype(np.float32))
    assert np.array_equal(segment_volume(v).array > 0, bone)


def test_constant_volume_is_background():
    r = segment_slices(Volume(np.full((3, 4, 4), 0.2, dtype=np.float32)))
    assert r.mask.array.sum() == 0
    assert [t for _, t in r.thresholds] == [None, None, None]


def test_slices_are_independent():
    rng = np.random.default_rng(2)
    a = rng.random((5, 9, 9)).astype(np.float32)
    stacked = segment_volume(Volume(a), (0.1, 0.9)).array
    for k in range(5):
        one = segment_volume(Volume(a[k:k + 1]), (0.1, 0.9)).array[0]
        assert np.array_equal(stacked[k], one)


def test_threshold_report(tmp_path):
    a = np.zeros((2, 4, 4), dtype=np.float32)
    a[1, :, 2:] = 1
    r = segment_slices(Volume(a))
    r.write_thresholds(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "slice_index,threshold" and lines[1] == "0,"
    assert float(lines[2].split(",")[1]) == r.thresholds[1][1]


def test_noise_free_ct_phantom_dice_one():
    for seed in range(3):
        spec = PhantomSpec(noise_sigma=0.0, seed=seed, curvature_amplitude=0.5 + seed)
        _, ct, truth = generate_phantom_pair(spec)
        seg = segment_volume(ct, CT_WINDOW)
        assert dice(seg, truth) == 1.0


@given(st.integers(0, 10 ** 6), st.floats(-0.5, 0.3), st.floats(0.05, 0.3))
def test_shrinking_window_never_adds_out_of_window_voxels(seed, lo, shrink):
    a = np.random.default_rng(seed).uniform(-1, 1, (3, 8, 8)).astype(np.float32)
    wide, narrow = (lo, 0.9), (lo + shrink, 0.9 - shrink)
    m = segment_volume(Volume(a), narrow).array > 0
    assert not np.any(m & ((a < narrow[0]) | (a > narrow[1])))
    assert not np.any((segment_volume(Volume(a), wide).array > 0) & (a > wide[1]))


# -- median smoothing --------------------------------------------------------------
def test_isolated_voxel_removed_and_half_space_kept():
    m = np.zeros((5, 5, 5))
    m[2, 2, 2] = 1
    assert median_smooth(mask_volume(m)).array.sum() == 0
    h = np.zeros((8, 8, 8))
    h[:, :, 4:] = 1
    out = median_smooth(mask_volume(h)).array
    inner = (slice(1, -1), slice(1, -1))
    assert np.array_equal(out[inner][:, :, 1:-1], h[inner][:, :, 1:-1])
    with pytest.raises(ValueError):
        median_smooth(mask_volume(h), 0)


@given(st.integers(0, 10 ** 6), st.floats(0.2, 0.8), st.sampled_from([1, 2]))
def test_median_matches_loop_and_stays_close(seed, p, r):
    m = (np.random.default_rng(seed).random((6, 5, 7)) < p).astype(np.float32)
    out = median_smooth(mask_volume(m), r).array
    assert np.array_equal(out, median_loop(m, r))
    assert set(np.unique(out)) <= {0.0, 1.0}
    # every new foreground voxel has an original one within radius
    for z, y, x in zip(*np.nonzero(out)):
        assert m[max(z - r, 0):z + r + 1, max(y - r, 0):y + r + 1, max(x - r, 0):x + r + 1].any()


# -- connected components ----------------------------------------------------------
def test_component_examples():
    m = np.zeros((10, 10, 10))
    m[:5, :5, :4] = 1  # 100 voxels
    m[8, 8, 5:] = 1  # 5 voxels
    assert keep_largest_components(mask_volume(m), 1).array.sum() == 100
    one = np.zeros((4, 4, 4))
    one[1:3, 1:3, 1:3] = 1
    assert np.array_equal(keep_largest_components(mask_volume(one), 1).array, one)
    assert keep_largest_components(mask_volume(np.zeros((3, 3, 3))), 2).array.sum() == 0
    # diagonal neighbours are separate components under 6-connectivity
    d = np.zeros((2, 2, 2))
    d[0, 0, 0] = d[1, 1, 1] = 1
    assert keep_largest_components(mask_volume(d), 1).array.sum() == 1
    with pytest.raises(ValueError):
        keep_largest_components(mask_volume(d), 0)


def _oracle_keep(m, n):
    comps = flood_fill_components(m)
    order = sorted(range(len(comps)), key=lambda i: (-len(comps[i]), i))
    out = np.zeros(m.shape)
    for i in order[:n]:
        for idx in comps[i]:
            out[idx] = 1
    return out


@given(st.integers(0, 10 ** 6), st.floats(0.1, 0.5), st.integers(1, 4))
def test_components_match_flood_fill_and_idempotent(seed, p, n):
    m = (np.random.default_rng(seed).random((6, 6, 6)) < p).astype(np.float32)
    once = keep_largest_components(mask_volume(m), n)
    assert np.array_equal(once.array, _oracle_keep(m, n))
    assert np.array_equal(keep_largest_components(once, n).array, once.array)


def test_dice_and_mask_io(tmp_path):
    a = np.zeros((2, 2, 2))
    a[0] = 1
    b = np.zeros((2, 2, 2))
    b[0, 0] = 1
    assert dice(a, b) == pytest.approx(2 * 2 / 6)
    assert dice(np.zeros(3), np.zeros(3)) == 1.0
    write_mask(mask_volume(a), tmp_path / "m.mhd")
    assert read_metaimage_header(tmp_path / "m.mhd")["ElementType"] == "MET_SHORT"
