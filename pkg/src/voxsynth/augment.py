"""Seeded offline augmentation: rotation, elastic warp, Gaussian noise, contrast stretch."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .volume import Volume, VolumeError, read_metaimage, sample_trilinear, write_metaimage

ROTATION_MAX_DEG = 10.0


@dataclass(frozen=True)
class AugmentSpec:
    rotation_max_deg: tuple[float, float, float] = (ROTATION_MAX_DEG,) * 3
    noise_sigma: float = 0.01
    elastic_grid: int = 8
    elastic_sigma_mm: float = 1.0
    stretch_pcts: tuple[float, float] = (1.0, 99.0)
    multiplier: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.multiplier < 0:
            raise ValueError("multiplier must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.stretch_pcts
        if not 0 <= lo < hi <= 100:
            raise ValueError("stretch percentiles need 0 <= lo < hi <= 100")
        if self.elastic_grid < 2 or self.elastic_sigma_mm < 0:
            raise ValueError("elastic_grid must be >= 2 and elastic_sigma_mm >= 0")
        if any(a < 0 for a in self.rotation_max_deg):
            raise ValueError("rotation bounds must be >= 0")


def _seed_entropy(*parts: int) -> list[int]:
    words = []
    for p in parts:
        p = int(p)
        if p < 0:
            raise ValueError("seeds must be non-negative")
        words += [p & 0xFFFFFFFF, (p >> 32) & 0xFFFFFFFF]
    return words


def seeded_rng(*parts: int) -> np.random.Generator:
    """PCG64 stream keyed by a tuple of non-negative integers (SeedSequence hash)."""
    return np.random.default_rng(np.random.SeedSequence(_seed_entropy(*parts)))


def rotation_matrix(angles_deg) -> np.ndarray:
    """``Rz @ Ry @ Rx`` acting on (x, y, z) column vectors."""
    ax, ay, az = (math.radians(a) for a in angles_deg)
    rx = np.array([[1, 0, 0], [0, math.cos(ax), -math.sin(ax)], [0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0, math.sin(ay)], [0, 1, 0], [-math.sin(ay), 0, math.cos(ay)]])
    rz = np.array([[math.cos(az), -math.sin(az), 0], [math.sin(az), math.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _index_grid(shape):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")


def rotate3d(v: Volume, angles_deg) -> Volume:
    """Rotate about the volume centre in physical space; outside samples take the minimum."""
    if all(a == 0 for a in angles_deg):
        return v
    r = rotation_matrix(angles_deg)
    arr = v.array
    nz, ny, nx = arr.shape
    sx, sy, sz = v.spacing
    z, y, x = _index_grid(arr.shape)
    # physical offsets from the centre, (x, y, z) order
    p = np.stack([(x - (nx - 1) / 2) * sx, (y - (ny - 1) / 2) * sy, (z - (nz - 1) / 2) * sz])
    # backward mapping: source = R^T @ destination
    q = np.einsum("ji,j...->i...", r, p)
    xi = q[0] / sx + (nx - 1) / 2
    yi = q[1] / sy + (ny - 1) / 2
    zi = q[2] / sz + (nz - 1) / 2
    out = sample_trilinear(arr, zi, yi, xi, fill=float(arr.min()))
    return v.with_array(out.astype(np.float32))


def gaussian_noise(v: Volume, sigma: float, seed: int) -> Volume:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return v
    rng = seeded_rng(seed)
    noise = rng.standard_normal(v.array.shape) * sigma
    return v.with_array((v.array.astype(np.float64) + noise).astype(np.float32))


def displacement_field(shape, spacing, grid: int, magnitude_mm: float, seed: int) -> np.ndarray:
    """Dense (3, nz, ny, nx) displacement in mm, components ordered (x, y, z).

    Control points every ``grid`` voxels carry N(0, magnitude^2) draws
    truncated to +-magnitude, so neighbouring voxels differ by at most
    ``2 * magnitude / grid`` per component.
    """
    nz, ny, nx = shape
    rng = seeded_rng(seed)
    ctrl_shape = tuple(int(math.ceil((n - 1) / grid)) + 1 if n > 1 else 1 for n in shape)
    ctrl = np.clip(rng.standard_normal((3,) + ctrl_shape) * magnitude_mm, -magnitude_mm, magnitude_mm)
    z, y, x = _index_grid(shape)
    return np.stack([sample_trilinear(ctrl[c], z / grid, y / grid, x / grid) for c in range(3)])


def elastic_deform(v: Volume, grid: int, magnitude_mm: float, seed: int) -> Volume:
    """Backward warp by a smooth random displacement field (clamped sampling at borders)."""
    if grid < 2:
        raise ValueError("grid must be >= 2 voxels")
    if magnitude_mm < 0:
        raise ValueError("magnitude must be >= 0")
    if magnitude_mm == 0:
        return v
    arr = v.array
    d = displacement_field(arr.shape, v.spacing, grid, magnitude_mm, seed)
    sx, sy, sz = v.spacing
    z, y, x = _index_grid(arr.shape)
    out = sample_trilinear(arr, z + d[2] / sz, y + d[1] / sy, x + d[0] / sx)
    return v.with_array(out.astype(np.float32))


def contrast_stretch(v: Volume, pcts: tuple[float, float]) -> Volume:
    """Map the ``[P_lo, P_hi]`` percentile window onto the volume's own ``[min, max]``."""
    lo, hi = pcts
    if not 0 <= lo < hi <= 100:
        raise ValueError("percentiles need 0 <= lo < hi <= 100")
    a = v.array.astype(np.float64)
    p_lo, p_hi = np.percentile(a, [lo, hi])
    if p_hi <= p_lo:
        raise VolumeError("degenerate intensity range")
    vmin, vmax = a.min(), a.max()
    out = np.clip(vmin + (a - p_lo) * (vmax - vmin) / (p_hi - p_lo), vmin, vmax)
    return v.with_array(out.astype(np.float32))


@dataclass(frozen=True)
class CopyParams:
    angles_deg: tuple[float, float, float]
    elastic_seed: int
    noise_seed: int
    stretch_pcts: tuple[float, float]


def copy_params(spec: AugmentSpec, i: int, k: int) -> CopyParams:
    """Random parameters for copy ``k`` of input ``i``, keyed by ``(spec.seed, i, k)``."""
    rng = seeded_rng(spec.seed, i, k)
    angles = tuple(float(rng.uniform(-m, m)) if m > 0 else 0.0 for m in spec.rotation_max_deg)
    elastic_seed = int(rng.integers(0, 2 ** 63))
    noise_seed = int(rng.integers(0, 2 ** 63))
    lo, hi = spec.stretch_pcts
    # stretch window drawn inside the outer bounds [0, lo] and [hi, 100]
    p = (float(rng.uniform(0.0, lo)) if lo > 0 else 0.0, float(rng.uniform(hi, 100.0)) if hi < 100 else 100.0)
    return CopyParams(angles, elastic_seed, noise_seed, p)


def augment_volume(v: Volume, spec: AugmentSpec, params: CopyParams) -> Volume:
    out = rotate3d(v, params.angles_deg)
    out = elastic_deform(out, spec.elastic_grid, spec.elastic_sigma_mm, params.elastic_seed)
    out = gaussian_noise(out, spec.noise_sigma, params.noise_seed)
    return contrast_stretch(out, params.stretch_pcts)


def augment_dataset(inputs: Sequence[Volume], spec: AugmentSpec) -> list[Volume]:
    """Inputs first, then ``multiplier`` copies of each input ordered by (input, copy)."""
    if not inputs:
        raise ValueError("no input volumes")
    out = list(inputs)
    for i, v in enumerate(inputs):
        for k in range(spec.multiplier):
            out.append(augment_volume(v, spec, copy_params(spec, i, k)))
    return out


def augment_directory(paths: Sequence[str | os.PathLike], spec: AugmentSpec, output_dir: str | os.PathLike) -> list[Path]:
    """Write each source as ``<stem>.mhd`` and its copies as ``<stem>_aug<k>.mhd``."""
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, p in enumerate(sorted(Path(x) for x in paths)):
        v = read_metaimage(p)
        dst = out_dir / f"{p.stem}.mhd"
        write_metaimage(v, dst)
        written.append(dst)
        for k in range(spec.multiplier):
            dst = out_dir / f"{p.stem}_aug{k}.mhd"
            write_metaimage(augment_volume(v, spec, copy_params(spec, i, k)), dst, element_type="MET_FLOAT")
            written.append(dst)
    return written
