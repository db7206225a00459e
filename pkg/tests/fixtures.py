"""Geometry fixtures shared by the registration, kernel and acceptance tests."""
from pathlib import Path

import numpy as np

from voxsynth.reconstruct import Mesh, marching_cubes
from voxsynth.validate import Landmark
from voxsynth.volume import Volume


def blob_mesh() -> Mesh:
    """Three overlapping balls: no rotational symmetry, anisotropic spacing, offset origin."""
    n = 40
    z, y, x = np.mgrid[:n, :n, :n].astype(float)
    m = (((x - 15) ** 2 + (y - 18) ** 2 + (z - 20) ** 2 <= 64)
         | ((x - 24) ** 2 + (y - 20) ** 2 + (z - 14) ** 2 <= 25)
         | ((x - 20) ** 2 + (y - 27) ** 2 + (z - 26) ** 2 <= 12))
    return marching_cubes(Volume(m.astype(np.float32), (0.8, 0.9, 1.1), (3.0, -2.0, 5.0)))


def sample_surface(mesh: Mesh, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` area-weighted uniform samples on the mesh surface."""
    a, b, c = mesh.corners()
    area = mesh.triangle_areas()
    t = rng.choice(len(area), k, p=area / area.sum())
    u = rng.random((k, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    return a[t] + u[:, :1] * (b[t] - a[t]) + u[:, 1:] * (c[t] - a[t])


def plane_mesh(half: float = 50.0, n: int = 10) -> Mesh:
    """Square grid in z = 0 spanning [-half, half]^2."""
    g = np.linspace(-half, half, n + 1)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    verts = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    tris = []
    for i in range(n):
        for j in range(n):
            v00, v01 = i * (n + 1) + j, i * (n + 1) + j + 1
            v10, v11 = v00 + n + 1, v01 + n + 1
            tris += [(v00, v10, v11), (v00, v11, v01)]
    return Mesh(verts, np.array(tris))


def offset_landmarks(level: str, offset: float, centre=(0.0, 0.0)) -> list[Landmark]:
    """Pairs mirrored across the plane at +-offset, so every point sits exactly ``offset`` away.

    The pairs share x, y; the best rigid fit to their projections is the
    identity, so ICP leaves them where pre-alignment put them.
    """
    cx, cy = centre
    xy = [(12.0, 0.0), (-9.0, 4.0), (0.0, -7.0), (5.0, 9.0)]
    out = []
    for k, (x, y) in enumerate(xy):
        for s, tag in ((1, "a"), (-1, "b")):
            out.append(Landmark(level, f"p{k}{tag}", (cx + x, cy + y, s * offset)))
    return out


SMALL_PHANTOM_INI = """\
[pipeline]
seed = {seed}

[data]
output_dir = {out}

[phantom]
dims = 8 8 8
n_mr = 3
n_ct = 3
n_test = 1
n_vertebra_blobs = 2
vertebra_radius = 1.5 1.5
soft_margin = 1
curvature_min = 0
curvature_max = 0.5
"""

SMALL_PIPELINE_INI = """\
[pipeline]
seed = {seed}

[data]
mr_dir = {corpus}/phantom/mr
ct_dir = {corpus}/phantom/ct
test_dir = {corpus}/phantom/test
output_dir = {out}

[augment]
multiplier = 1

[train]
steps = {steps}

[segment]
median_radius = 0
keep_components = 1
"""


def write_small_configs(root, seed: int = 0, steps: int = 1):
    """Configs for an 8^3 phantom corpus and a pipeline run over it; returns their paths."""
    root = Path(root)
    corpus, out = root / "corpus", root / "run"
    ph = root / "phantom.ini"
    ph.write_text(SMALL_PHANTOM_INI.format(seed=seed, out=corpus))
    pipe = root / "pipeline.ini"
    pipe.write_text(SMALL_PIPELINE_INI.format(seed=seed, corpus=corpus, out=out, steps=steps))
    return ph, pipe
