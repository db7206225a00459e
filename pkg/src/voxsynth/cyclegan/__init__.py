"""Two-generator / two-discriminator unpaired volume translation."""
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .networks import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .optim import Adam
from .training import (
    CycleGAN,
    HistoryBuffer,
    TrainConfig,
    TrainingDiverged,
    derive_rng,
    train,
    train_arrays,
    translate,
)


def build_generator(cfg: GeneratorConfig = GeneratorConfig(), rng=None) -> Generator:
    return Generator(cfg, rng)


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig(), rng=None) -> Discriminator:
    return Discriminator(cfg, rng)


__all__ = [
    "Adam", "CheckpointError", "CycleGAN", "Discriminator", "DiscriminatorConfig", "Generator",
    "GeneratorConfig", "HistoryBuffer", "TrainConfig", "TrainingDiverged", "build_discriminator",
    "build_generator", "derive_rng", "load_checkpoint", "read_checkpoint", "save_checkpoint", "train",
    "train_arrays", "translate",
]
