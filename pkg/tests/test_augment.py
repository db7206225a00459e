import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxsynth.augment import (
    AugmentSpec,
    augment_dataset,
    augment_directory,
    augment_volume,
    contrast_stretch,
    copy_params,
    displacement_field,
    elastic_deform,
    gaussian_noise,
    rotate3d,
)
from voxsynth.volume import Volume, VolumeError, read_metaimage, write_metaimage


def smooth_volume(n=16, seed=0):
    rng = np.random.default_rng(seed)
    z, y, x = np.mgrid[:n, :n, :n] / n
    f = sum(rng.normal() * np.sin(2 * np.pi * (a * x + b * y + c * z) + rng.uniform(0, 6))
            for a, b, c in rng.integers(0, 2, size=(4, 3)))
    return Volume(f.astype(np.float32))


def test_zero_rotation_is_identity():
    v = smooth_volume()
    assert np.abs(rotate3d(v, (0, 0, 0)).array - v.array).max() <= 1e-6


def test_rotate_90_about_z_is_index_permutation():
    a = np.random.default_rng(1).random((6, 6, 6)).astype(np.float32)
    out = rotate3d(Volume(a), (0, 0, 90)).array
    # backward map of a +90 degree turn about z: src(x, y) = (y, n-1-x)
    n = a.shape[2]
    perm = np.empty_like(a)
    for x in range(n):
        for y in range(n):
            perm[:, y, x] = a[:, n - 1 - x, y]
    assert np.abs(out - perm).max() <= 1e-4


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_rotate_back_on_linear_field(axis):
    # trilinear interpolation reproduces affine fields exactly, so the round
    # trip error on interior voxels is pure rounding
    n = 20
    z, y, x = np.mgrid[:n, :n, :n].astype(np.float64)
    v = Volume((0.03 * x - 0.05 * y + 0.02 * z).astype(np.float32))
    ang = [0.0, 0.0, 0.0]
    ang[axis] = 7.0
    back = rotate3d(rotate3d(v, ang), [-a for a in ang])
    inner = (slice(5, -5),) * 3
    err = np.abs(back.array[inner].astype(np.float64) - v.array[inner])
    assert err.max() < 2 * np.spacing(np.float32(np.abs(v.array).max()))


def test_rotation_fills_with_minimum():
    v = Volume(np.random.default_rng(2).uniform(-1, 1, (8, 8, 8)).astype(np.float32))
    out = rotate3d(v, (0, 0, 45))
    assert out.array[0, 0, 0] == v.array.min()
    assert out.dims == v.dims


def test_noise_examples():
    v = Volume(np.zeros((64, 64, 64), dtype=np.float32))
    assert gaussian_noise(v, 0.0, 3) is v
    a, b = gaussian_noise(v, 0.01, 3), gaussian_noise(v, 0.01, 3)
    assert a.array.tobytes() == b.array.tobytes()
    x = a.array.astype(np.float64)
    assert abs(x.mean()) < 4 * 0.01 / np.sqrt(64 ** 3)
    assert abs(x.std() - 0.01) <= 0.02 * 0.01
    with pytest.raises(ValueError):
        gaussian_noise(v, -1, 0)


def test_elastic_examples():
    v = smooth_volume(12)
    assert np.abs(elastic_deform(v, 4, 0.0, 1).array - v.array).max() <= 1e-6
    a, b = elastic_deform(v, 4, 1.5, 9), elastic_deform(v, 4, 1.5, 9)
    assert np.array_equal(a.array, b.array)
    assert not np.array_equal(a.array, v.array)
    with pytest.raises(ValueError):
        elastic_deform(v, 1, 1.0, 0)


@given(st.integers(2, 6), st.floats(0.1, 3.0), st.integers(0, 2 ** 32))
def test_displacement_smoothness(grid, mag, seed):
    d = displacement_field((9, 7, 11), (1, 1, 1), grid, mag, seed)
    bound = 2 * mag / grid
    for ax in (1, 2, 3):
        assert np.abs(np.diff(d, axis=ax)).max() <= bound * (1 + 1e-9)
    assert np.abs(d).max() <= mag + 1e-12


def test_contrast_stretch_examples():
    v = smooth_volume(10)
    assert np.abs(contrast_stretch(v, (0, 100)).array - v.array).max() <= 1e-6
    with pytest.raises(VolumeError, match="degenerate intensity range"):
        contrast_stretch(Volume(np.ones((3, 3, 3))), (1, 99))
    rng = np.random.default_rng(5)
    bi = np.concatenate([rng.normal(-0.5, 0.1, 500), rng.normal(0.5, 0.1, 500)]).reshape(10, 10, 10)
    v = Volume(bi.astype(np.float32))
    out = contrast_stretch(v, (10, 90)).array.ravel()
    src = v.array.ravel()
    order = np.argsort(src, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)
    lo_mode, hi_mode = src < 0, src >= 0
    assert out[lo_mode].mean() < src[lo_mode].mean()
    assert out[hi_mode].mean() > src[hi_mode].mean()


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(multiplier=-1)
    with pytest.raises(ValueError):
        AugmentSpec(stretch_pcts=(50, 50))
    with pytest.raises(ValueError):
        AugmentSpec(noise_sigma=-0.1)


def test_dataset_counts_and_determinism():
    vols = [smooth_volume(6, s) for s in range(3)]
    assert augment_dataset(vols, AugmentSpec(multiplier=0)) == vols
    spec = AugmentSpec(multiplier=2, seed=11)
    a, b = augment_dataset(vols, spec), augment_dataset(vols, spec)
    assert len(a) == 3 + 6
    assert all(x.array.tobytes() == y.array.tobytes() for x, y in zip(a, b))
    assert a[:3] == vols
    # copy k of input i sits at 3 + 2*i + k
    again = augment_volume(vols[1], spec, copy_params(spec, 1, 1))
    assert again == a[3 + 2 * 1 + 1]
    with pytest.raises(ValueError):
        augment_dataset([], spec)


def test_corpus_size_arithmetic():
    vols = [smooth_volume(4, s) for s in range(24)]
    out = augment_dataset(vols, AugmentSpec(multiplier=45, elastic_grid=2))
    assert len(out) == 24 + 1080 == 1104


@given(st.integers(0, 2 ** 40), st.integers(0, 50), st.integers(0, 50))
def test_copy_params_within_bounds(seed, i, k):
    spec = AugmentSpec(rotation_max_deg=(5, 10, 15), stretch_pcts=(2, 97), seed=seed)
    p = copy_params(spec, i, k)
    assert all(abs(a) <= m for a, m in zip(p.angles_deg, spec.rotation_max_deg))
    assert 0 <= p.stretch_pcts[0] <= 2 and 97 <= p.stretch_pcts[1] <= 100
    assert p == copy_params(spec, i, k)


@given(st.integers(0, 1000))
def test_shape_and_finiteness(seed):
    v = smooth_volume(8, seed % 7)
    spec = AugmentSpec(multiplier=1, seed=seed, elastic_grid=3)
    out = augment_volume(v, spec, copy_params(spec, 0, 0))
    assert out.dims == v.dims and out.spacing == v.spacing and out.origin == v.origin
    assert np.all(np.isfinite(out.array))


def test_directory_naming(tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    for s in range(2):
        write_metaimage(smooth_volume(6, s), src / f"case{s}.mhd")
    out = augment_directory(sorted(src.glob("*.mhd")), AugmentSpec(multiplier=2), tmp_path / "out")
    assert [p.name for p in out] == ["case0.mhd", "case0_aug0.mhd", "case0_aug1.mhd",
                                     "case1.mhd", "case1_aug0.mhd", "case1_aug1.mhd"]
    assert read_metaimage(out[0]) == read_metaimage(src / "case0.mhd")
