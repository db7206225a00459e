"""Bone segmentation: windowed per-slice Otsu, binary median smoothing, component cleanup."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import Volume, write_metaimage

DEFAULT_BINS = 256
# relative slack when comparing between-class variances, so float noise
# in the cumulative sums cannot break exact ties
TIE_RTOL = 1e-12


class DegenerateSlice(ValueError):
    pass


def _window_values(values: np.ndarray, window: tuple[float, float] | None) -> tuple[np.ndarray, float, float]:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if window is None:
        lo, hi = float(values.min()), float(values.max())
    else:
        lo, hi = float(window[0]), float(window[1])
        if not lo < hi:
            raise ValueError("window needs lo < hi")
        values = values[(values >= lo) & (values <= hi)]
    if values.size == 0 or np.unique(values).size < 2:
        raise DegenerateSlice("degenerate slice: fewer than 2 distinct values in window")
    return values, lo, hi


def histogram(values: np.ndarray, bins: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Counts over ``bins`` equal-width bins on ``[lo, hi]`` and the bin edges."""
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    return np.bincount(idx, minlength=bins).astype(np.float64), edges


def between_class_variance(counts: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """``w0 * w1 * (mu0 - mu1)**2`` for a split at each interior edge ``edges[1:-1]``.

    Class means use bin centres. Splits leaving a class empty score 0.
    """
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = counts.sum()
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * centers)[:-1]
    n1 = total - n0
    s1 = (counts * centers).sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / n0
        mu1 = s1 / n1
        var = (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2
    return np.where((n0 > 0) & (n1 > 0), var, 0.0)


def otsu_threshold(slice_: np.ndarray, bins: int = DEFAULT_BINS, window: tuple[float, float] | None = None) -> float:
    """Bin edge maximizing the between-class variance; foreground is ``value > t``.

    Values outside ``window`` do not enter the histogram. Exact ties go to the
    lowest edge.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    values, lo, hi = _window_values(slice_, window)
    counts, edges = histogram(values, bins, lo, hi)
    var = between_class_variance(counts, edges)
    best = var.max()
    k = int(np.flatnonzero(var >= best * (1 - TIE_RTOL))[0])
    return float(edges[k + 1])


@dataclass
class SegmentationResult:
    mask: Volume
    thresholds: list[tuple[int, float | None]]

    def write_thresholds(self, path: str | os.PathLike) -> None:
        lines = ["slice_index,threshold"]
        lines += [f"{i},{'' if t is None else repr(t)}" for i, t in self.thresholds]
        Path(path).write_text("\n".join(lines) + "\n")


def segment_slices(v: Volume, window: tuple[float, float] | None = None, bins: int = DEFAULT_BINS) -> SegmentationResult:
    """Per-axial-slice Otsu. The threshold list holds ``None`` for degenerate slices."""
    arr = v.array
    mask = np.zeros(arr.shape, dtype=np.float32)
    thresholds: list[tuple[int, float | None]] = []
    for k in range(arr.shape[0]):
        sl = arr[k]
        try:
            t = otsu_threshold(sl, bins, window)
        except DegenerateSlice:
            thresholds.append((k, None))
            continue
        fg = sl > t
        if window is not None:
            fg &= sl <= window[1]
        mask[k] = fg
        thresholds.append((k, t))
    return SegmentationResult(Volume(mask, v.spacing, v.origin, np.dtype("<i2")), thresholds)


def segment_volume(v: Volume, window: tuple[float, float] | None = None, bins: int = DEFAULT_BINS) -> Volume:
    """Binary mask from independent Otsu thresholds on every axial (z) slice."""
    return segment_slices(v, window, bins).mask


def median_smooth(m: Volume, radius: int = 1) -> Volume:
    """Binary majority vote over the ``(2r+1)^3`` neighbourhood, zero outside the grid."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    size = 2 * radius + 1
    fg = (m.array > 0.5).astype(np.int32)
    counts = ndimage.convolve(fg, np.ones((size, size, size), dtype=np.int32), mode="constant", cval=0)
    out = (counts * 2 > size ** 3).astype(np.float32)
    return Volume(out, m.spacing, m.origin, np.dtype("<i2"))


def label_components(m: Volume) -> tuple[np.ndarray, int]:
    """6-connected labels (1..n, in raster order of first voxel) and their count."""
    structure = ndimage.generate_binary_structure(3, 1)
    labels, n = ndimage.label(m.array > 0.5, structure=structure)
    return labels, n


def keep_largest_components(m: Volume, n: int = 1, connectivity: int = 6) -> Volume:
    """Keep the ``n`` largest 6-connected components; ties favour the lower label."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if connectivity != 6:
        raise ValueError("only 6-connectivity is supported")
    labels, count = label_components(m)
    if count == 0:
        return Volume(np.zeros_like(m.array), m.spacing, m.origin, np.dtype("<i2"))
    sizes = np.bincount(labels.reshape(-1))[1:]
    # stable sort on -size keeps lower labels first among equal sizes
    keep = np.argsort(-sizes, kind="stable")[:n] + 1
    out = np.isin(labels, keep).astype(np.float32)
    return Volume(out, m.spacing, m.origin, np.dtype("<i2"))


def dice(a: Volume | np.ndarray, b: Volume | np.ndarray) -> float:
    a = (a.array if isinstance(a, Volume) else np.asarray(a)) > 0.5
    b = (b.array if isinstance(b, Volume) else np.asarray(b)) > 0.5
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (a & b).sum() / denom)


def write_mask(m: Volume, path: str | os.PathLike) -> None:
    write_metaimage(m, path, element_type="MET_SHORT")
