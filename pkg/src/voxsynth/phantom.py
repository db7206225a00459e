"""Synthetic MR/CT spine phantoms with known bone geometry.

A column of ellipsoidal "vertebrae" runs along z, displaced laterally in x
by a sinusoidal centerline, inside a straight soft-tissue cylinder that
spans the same z range. The same label map is rendered under an MR-like
intensity map (bone darker than soft tissue) and a CT-like one (bone
brightest).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import Volume

BACKGROUND, SOFT, BONE = 0, 1, 2

MR_INTENSITIES = (-1.0, 0.5, 0.25)
CT_INTENSITIES = (-1.0, 0.0, 0.8)


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (32, 16, 16)
    n_vertebra_blobs: int = 3
    curvature_amplitude: float = 3.0
    mr_intensity_map: tuple[float, float, float] = MR_INTENSITIES
    ct_intensity_map: tuple[float, float, float] = CT_INTENSITIES
    seed: int = 0
    noise_sigma: float = 0.02
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    vertebra_radius: tuple[float, float] = (3.0, 3.0)
    soft_margin: float = 2.0

    def __post_init__(self):
        for name, m in (("mr", self.mr_intensity_map), ("ct", self.ct_intensity_map)):
            if len(set(m)) != 3:
                raise PhantomError(f"{name} intensity map values must be distinct")
        mr_bg, mr_soft, mr_bone = self.mr_intensity_map
        ct_bg, ct_soft, ct_bone = self.ct_intensity_map
        if not (mr_bone < mr_soft and ct_bone > ct_soft):
            raise PhantomError("MR bone must be darker and CT bone brighter than soft tissue")
        if self.n_vertebra_blobs < 1:
            raise PhantomError("need at least one vertebra")
        if self.noise_sigma < 0:
            raise PhantomError("noise_sigma must be >= 0")


def _geometry(spec: PhantomSpec, phase: float):
    nx, ny, nz = spec.dims
    ax, ay = spec.vertebra_radius
    amp = abs(spec.curvature_amplitude)
    margin = 1
    length = nz - 2 * margin
    pitch = length / spec.n_vertebra_blobs
    # overlap neighbours slightly so every slice of the column cuts bone
    az = 0.55 * pitch
    soft_rx = ax + amp + spec.soft_margin
    soft_ry = ay + spec.soft_margin
    if 2 * soft_rx + 1 > nx or 2 * soft_ry + 1 > ny or length < 2 or az < 0.75:
        raise PhantomError(f"vertebrae do not fit dims {spec.dims}")
    cx0, cy0 = nx / 2.0, ny / 2.0
    centers = []
    for i in range(spec.n_vertebra_blobs):
        zc = margin + (i + 0.5) * pitch
        xc = cx0 + spec.curvature_amplitude * math.sin(math.pi * (zc - margin) / length + phase)
        centers.append((xc, cy0, zc))
    return centers, (ax, ay, az), (soft_rx, soft_ry), (margin, nz - margin), (cx0, cy0)


def label_map(spec: PhantomSpec, phase: float = 0.0) -> np.ndarray:
    """Integer labels (nz, ny, nx): 0 background, 1 soft tissue, 2 bone."""
    nx, ny, nz = spec.dims
    centers, (ax, ay, az), (rx, ry), (z_lo, z_hi), (cx0, cy0) = _geometry(spec, phase)
    z, y, x = np.meshgrid(np.arange(nz) + 0.5, np.arange(ny) + 0.5, np.arange(nx) + 0.5, indexing="ij")
    labels = np.zeros((nz, ny, nx), dtype=np.uint8)
    soft = (((x - cx0) / rx) ** 2 + ((y - cy0) / ry) ** 2 <= 1.0) & (z >= z_lo) & (z <= z_hi)
    labels[soft] = SOFT
    for xc, yc, zc in centers:
        bone = ((x - xc) / ax) ** 2 + ((y - yc) / ay) ** 2 + ((z - zc) / az) ** 2 <= 1.0
        labels[bone] = BONE
    return labels


def analytic_bone_volume(spec: PhantomSpec) -> float:
    """Sum of ellipsoid volumes in voxels, ignoring overlap between neighbours."""
    _, (ax, ay, az), *_ = _geometry(spec, 0.0)
    return spec.n_vertebra_blobs * 4.0 / 3.0 * math.pi * ax * ay * az


def _render(labels: np.ndarray, intensities, sigma: float, rng: np.random.Generator) -> np.ndarray:
    lut = np.asarray(intensities, dtype=np.float64)
    out = lut[labels]
    if sigma > 0:
        out = out + rng.standard_normal(out.shape) * sigma
    return np.clip(out, -1.0, 1.0)


def generate_phantom_pair(spec: PhantomSpec) -> tuple[Volume, Volume, Volume]:
    """Return ``(mr, ct, bone_mask)`` sharing one geometry.

    The two renderings get independent texture noise; the mask is 1 on bone.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5F1E]))
    labels = label_map(spec)
    mr = _render(labels, spec.mr_intensity_map, spec.noise_sigma, rng)
    ct = _render(labels, spec.ct_intensity_map, spec.noise_sigma, rng)
    mask = (labels == BONE).astype(np.float32)
    return (Volume(mr, spec.spacing), Volume(ct, spec.spacing),
            Volume(mask, spec.spacing, source_dtype=np.dtype("<i2")))


def corpus_specs(n: int, seed: int, dims=(32, 16, 16), amp_range=(0.5, 4.0), **kw) -> list[PhantomSpec]:
    """``n`` specs with seeded curvature amplitudes, e.g. for one training domain."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    specs = []
    for i in range(n):
        amp = float(rng.uniform(*amp_range))
        specs.append(PhantomSpec(dims=dims, curvature_amplitude=amp, seed=seed * 100_003 + i, **kw))
    return specs


def index_to_physical(spec: PhantomSpec, u) -> np.ndarray:
    """Continuous label-map coordinates (x, y, z; voxel i spans [i, i+1]) to mm."""
    return (np.asarray(u, dtype=np.float64) - 0.5) * np.asarray(spec.spacing, dtype=np.float64)


def phantom_landmarks(spec: PhantomSpec, per_level: int = 6, first_level: int = 2) -> list[tuple[str, str, tuple[float, float, float]]]:
    """Points on each vertebra's equator, labelled T<first_level>, T<first_level+1>, ...

    At a vertebra's mid-height its neighbours never reach (they are one
    pitch away and extend 0.55 pitch), so every point lies on the bone
    surface. Coordinates are in mm in the volumes' frame.
    """
    centers, (ax, ay, _), *_ = _geometry(spec, 0.0)
    out = []
    for i, (xc, yc, zc) in enumerate(centers):
        for k in range(per_level):
            t = 2.0 * math.pi * k / per_level
            u = (xc + ax * math.cos(t), yc + ay * math.sin(t), zc)
            out.append((f"T{first_level + i}", f"p{k}", tuple(float(c) for c in index_to_physical(spec, u))))
    return out
