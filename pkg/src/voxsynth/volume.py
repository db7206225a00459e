"""3D scalar volumes: MetaImage I/O, cropping, resampling, normalization, gradients.

A :class:`Volume` stores its samples as a C-ordered ``(nz, ny, nx)`` array so
the flattened buffer is x-fastest, which is the MetaImage raw layout.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INTERNAL_DTYPE = np.float32

_ELEMENT_TYPES = {"MET_FLOAT": np.dtype("<f4"), "MET_SHORT": np.dtype("<i2")}
_HEADER_KEYS = (
    "ObjectType", "NDims", "BinaryData", "BinaryDataByteOrderMSB", "DimSize",
    "ElementSpacing", "Offset", "ElementType", "ElementDataFile",
)
_AXIS_INDEX = {"x": 2, "y": 1, "z": 0}


class VolumeError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    start: tuple[int, int, int]
    extent: tuple[int, int, int]

    def __post_init__(self):
        if len(self.start) != 3 or len(self.extent) != 3:
            raise VolumeError("region start and extent need three components")
        if any(e < 1 for e in self.extent):
            raise VolumeError(f"region extent must be positive, got {self.extent}")
        if any(s < 0 for s in self.start):
            raise VolumeError(f"region start must be non-negative, got {self.start}")

    def compose(self, inner: "Region") -> "Region":
        """Region of ``inner`` (relative to this region) in parent coordinates."""
        return Region(tuple(a + b for a, b in zip(self.start, inner.start)), inner.extent)


@dataclass(frozen=True, eq=False)
class Volume:
    array: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    source_dtype: np.dtype = field(default=np.dtype("<f4"))

    def __post_init__(self):
        arr = np.asarray(self.array)
        if arr.ndim != 3:
            raise VolumeError("volume array must be 3D (nz, ny, nx)")
        if min(arr.shape) < 1:
            raise VolumeError("volume dims must be >= 1")
        arr = np.ascontiguousarray(arr, dtype=INTERNAL_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise VolumeError("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not (s > 0 and np.isfinite(s)) for s in spacing):
            raise VolumeError(f"spacing must be three positive numbers, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise VolumeError("origin needs three components")
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "source_dtype", np.dtype(self.source_dtype))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        nz, ny, nx = self.array.shape
        return (nx, ny, nz)

    @property
    def data(self) -> np.ndarray:
        """Flat x-fastest view of the samples."""
        return self.array.reshape(-1)

    def with_array(self, array: np.ndarray) -> "Volume":
        return Volume(array, self.spacing, self.origin, self.source_dtype)

    def physical_extent(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.dims, self.spacing))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.spacing == other.spacing and self.origin == other.origin
                and np.array_equal(self.array, other.array))

    @classmethod
    def from_xyz(cls, data_xyz: np.ndarray, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "Volume":
        """Build from an array indexed ``[x, y, z]``."""
        return cls(np.asarray(data_xyz).transpose(2, 1, 0), spacing, origin)


def _fmt_exact(values) -> str:
    out = []
    for v in values:
        v = float(v)
        if v.is_integer() and abs(v) < 1e16:
            out.append(str(int(v)))
        else:
            out.append(repr(v))
    return " ".join(out)


def write_metaimage(v: Volume, path: str | os.PathLike, element_type: str | None = None) -> None:
    """Write ``<stem>.mhd`` plus ``<stem>.raw`` next to it.

    Float volumes are written as MET_FLOAT unless the volume came from a
    MET_SHORT file (or ``element_type`` says otherwise).
    """
    path = Path(path)
    if element_type is None:
        element_type = "MET_SHORT" if v.source_dtype == np.dtype("<i2") else "MET_FLOAT"
    if element_type not in _ELEMENT_TYPES:
        raise VolumeError(f"unsupported element type {element_type}")
    raw_path = path.with_suffix(".raw")
    dtype = _ELEMENT_TYPES[element_type]
    arr = v.array
    if dtype.kind == "i":
        rounded = np.rint(arr)
        info = np.iinfo(dtype)
        if np.any(rounded < info.min) or np.any(rounded > info.max):
            raise VolumeError("values out of range for MET_SHORT")
        arr = rounded
    header = {
        "ObjectType": "Image",
        "NDims": "3",
        "BinaryData": "True",
        "BinaryDataByteOrderMSB": "False",
        "DimSize": " ".join(str(n) for n in v.dims),
        "ElementSpacing": _fmt_exact(v.spacing),
        "Offset": _fmt_exact(v.origin),
        "ElementType": element_type,
        "ElementDataFile": raw_path.name,
    }
    try:
        raw_path.write_bytes(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        path.write_text("".join(f"{k} = {header[k]}\n" for k in _HEADER_KEYS))
    except OSError as exc:
        raise VolumeError(f"cannot write {path}: {exc}") from exc


def read_metaimage_header(path: str | os.PathLike) -> dict[str, str]:
    header: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise VolumeError(f"{path}:{lineno}: malformed header line {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _HEADER_KEYS:
            raise VolumeError(f"{path}:{lineno}: unknown header key {key!r}")
        header[key] = value
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise VolumeError(f"{path}: missing header keys {missing}")
    return header


def read_metaimage(path: str | os.PathLike) -> Volume:
    path = Path(path)
    h = read_metaimage_header(path)
    if h["ObjectType"] != "Image" or h["NDims"] != "3":
        raise VolumeError("only 3D Image objects are supported")
    if h["BinaryData"] != "True" or h["BinaryDataByteOrderMSB"] != "False":
        raise VolumeError("only little-endian binary data is supported")
    if h["ElementType"] not in _ELEMENT_TYPES:
        raise VolumeError(f"unsupported element type {h['ElementType']}")
    dtype = _ELEMENT_TYPES[h["ElementType"]]
    try:
        dims = tuple(int(s) for s in h["DimSize"].split())
        spacing = tuple(float(s) for s in h["ElementSpacing"].split())
        origin = tuple(float(s) for s in h["Offset"].split())
    except ValueError as exc:
        raise VolumeError(f"{path}: non-numeric header value: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise VolumeError(f"{path}: DimSize, ElementSpacing and Offset need 3 values")
    raw = path.parent / h["ElementDataFile"]
    if not raw.exists():
        raise VolumeError(f"raw data file {raw} not found")
    buf = raw.read_bytes()
    expected = dims[0] * dims[1] * dims[2]
    if len(buf) != expected * dtype.itemsize:
        raise VolumeError(
            f"data size mismatch: header declares {expected} voxels, file holds {len(buf) / dtype.itemsize:g}")
    arr = np.frombuffer(buf, dtype=dtype).reshape(dims[2], dims[1], dims[0])
    return Volume(arr.astype(INTERNAL_DTYPE), spacing, origin, dtype)


def crop(v: Volume, r: Region) -> Volume:
    if any(s + e > n for s, e, n in zip(r.start, r.extent, v.dims)):
        raise VolumeError(f"region {r} out of bounds for dims {v.dims}")
    (x0, y0, z0), (ex, ey, ez) = r.start, r.extent
    sub = v.array[z0:z0 + ez, y0:y0 + ey, x0:x0 + ex]
    origin = tuple(o + s * sp for o, s, sp in zip(v.origin, r.start, v.spacing))
    return Volume(sub.copy(), v.spacing, origin, v.source_dtype)


def sample_trilinear(arr: np.ndarray, z: np.ndarray, y: np.ndarray, x: np.ndarray, fill: float | None = None) -> np.ndarray:
    """Trilinear lookup at fractional index coordinates of a ``(nz, ny, nx)`` array.

    With ``fill=None`` coordinates are clamped to the grid; otherwise points
    outside ``[0, n-1]`` on any axis take the value ``fill``.
    """
    shape = arr.shape
    coords = [np.asarray(c, dtype=np.float64) for c in (z, y, x)]
    outside = None
    if fill is not None:
        outside = np.zeros(np.broadcast(*coords).shape, dtype=bool)
        for c, n in zip(coords, shape):
            outside |= (c < -1e-9) | (c > n - 1 + 1e-9)
    lo, frac = [], []
    for c, n in zip(coords, shape):
        c = np.clip(c, 0.0, n - 1)
        i0 = np.minimum(np.floor(c).astype(np.intp), max(n - 2, 0))
        lo.append(i0)
        frac.append(c - i0)
    a = arr.astype(np.float64, copy=False)
    out = 0.0
    (z0, y0, x0), (fz, fy, fx) = lo, frac
    for dz in (0, 1):
        wz = fz if dz else 1 - fz
        zi = np.minimum(z0 + dz, shape[0] - 1)
        for dy in (0, 1):
            wy = fy if dy else 1 - fy
            yi = np.minimum(y0 + dy, shape[1] - 1)
            for dx in (0, 1):
                wx = fx if dx else 1 - fx
                xi = np.minimum(x0 + dx, shape[2] - 1)
                out = out + wz * wy * wx * a[zi, yi, xi]
    out = np.asarray(out)
    if outside is not None and outside.any():
        out = np.where(outside, fill, out)
    return out


def resample_trilinear(v: Volume, target_dims: tuple[int, int, int]) -> Volume:
    """Resample to ``target_dims`` (nx, ny, nz) keeping the physical extent."""
    target_dims = tuple(int(t) for t in target_dims)
    if len(target_dims) != 3 or min(target_dims) < 1:
        raise VolumeError(f"target dims must be >= 1, got {target_dims}")
    if target_dims == v.dims:
        return v.with_array(v.array.copy())
    spacing = tuple(e / t for e, t in zip(v.physical_extent(), target_dims))
    # output voxel centres mapped back to input index space
    axes = []
    for n_in, n_out in zip(v.dims, target_dims):
        axes.append((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5)
    ax_x, ax_y, ax_z = axes
    zz, yy, xx = np.meshgrid(ax_z, ax_y, ax_x, indexing="ij")
    out = sample_trilinear(v.array, zz, yy, xx)
    origin = tuple(o - 0.5 * s_in + 0.5 * s_out for o, s_in, s_out in zip(v.origin, v.spacing, spacing))
    return Volume(out.astype(INTERNAL_DTYPE), spacing, origin, v.source_dtype)


def normalize_intensity(v: Volume, lo_pct: float = 0.0, hi_pct: float = 100.0) -> Volume:
    """Map the ``[P_lo, P_hi]`` percentile window affinely onto ``[-1, 1]`` and clamp."""
    if not (0 <= lo_pct < hi_pct <= 100):
        raise VolumeError("need 0 <= lo_pct < hi_pct <= 100")
    a = v.array.astype(np.float64)
    p_lo, p_hi = np.percentile(a, [lo_pct, hi_pct])
    if not p_hi > p_lo:
        raise VolumeError("degenerate intensity range")
    out = np.clip((a - p_lo) / (p_hi - p_lo) * 2.0 - 1.0, -1.0, 1.0)
    return Volume(out.astype(INTERNAL_DTYPE), v.spacing, v.origin)


def gradient(v: Volume, axis: str) -> Volume:
    """Index-space finite differences along ``axis`` ('x', 'y' or 'z').

    Central differences inside, one-sided differences on the two boundary
    faces; voxel spacing is not applied.
    """
    if axis not in _AXIS_INDEX:
        raise VolumeError(f"axis must be one of x, y, z; got {axis!r}")
    ax = _AXIS_INDEX[axis]
    if v.array.shape[ax] < 2:
        raise VolumeError(f"gradient needs at least 2 voxels along {axis}")
    g = np.gradient(v.array.astype(np.float64), axis=ax, edge_order=1)
    return Volume(g.astype(INTERNAL_DTYPE), v.spacing, v.origin)
