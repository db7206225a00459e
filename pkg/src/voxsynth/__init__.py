"""Unpaired MR to CT volume synthesis, bone segmentation, surface reconstruction and surface-distance validation."""
from importlib.metadata import PackageNotFoundError, version

from ._kernels import BACKEND
from .cyclegan import CycleGAN, TrainConfig, train, translate
from .phantom import PhantomSpec, generate_phantom_pair
from .reconstruct import Mesh, marching_cubes, read_ply, write_ply
from .segment import dice, segment_volume
from .validate import per_level_report, read_landmarks, register
from .volume import Volume, read_metaimage, write_metaimage

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "BACKEND", "CycleGAN", "Mesh", "PhantomSpec", "TrainConfig", "Volume",
    "dice", "generate_phantom_pair", "marching_cubes", "per_level_report", "read_landmarks",
    "read_metaimage", "read_ply", "register", "segment_volume", "train", "translate",
    "write_metaimage", "write_ply",
]
