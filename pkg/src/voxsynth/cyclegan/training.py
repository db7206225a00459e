"""Unpaired CycleGAN training: forward/backward cycles, updates, history buffers."""
from __future__ import annotations

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import losses as L
from ..autograd import Tensor, no_grad
from ..volume import Volume, read_metaimage
from .networks import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .optim import Adam

log = logging.getLogger(__name__)

NETWORK_NAMES = ("g_mr2ct", "g_ct2mr", "d_mr", "d_ct")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 1
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    history_buffer: int = 16
    patch_size: tuple[int, int, int] | None = None
    saturating_generator_loss: bool = False
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.history_buffer < 0 or self.checkpoint_every < 1:
            raise ValueError("batch_size, checkpoint_every must be >= 1 and history_buffer >= 0")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def _seed_words(seed: int) -> list[int]:
    seed = int(seed)
    return [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *path)`` via SeedSequence hashing."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_seed_words(seed) + [int(p) for p in path])))


def uniform_index(rng: np.random.Generator, n: int) -> int:
    # draw through random() so the generator never caches half a 64-bit word
    return min(int(rng.random() * n), n - 1)


class HistoryBuffer:
    """Pool of past fake volumes for discriminator updates."""

    def __init__(self, size: int):
        self.size = size
        self.items: list[np.ndarray] = []

    def query(self, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            return fake
        if len(self.items) < self.size:
            self.items.append(fake.copy())
            return fake
        if rng.random() < 0.5:
            i = uniform_index(rng, self.size)
            old = self.items[i]
            self.items[i] = fake.copy()
            return old
        return fake


class CycleGAN:
    """The four networks, their optimizers, history buffers and the RNG."""

    def __init__(self, cfg: TrainConfig = TrainConfig(), zero_init: bool = False):
        self.cfg = cfg
        init = [None if zero_init else derive_rng(cfg.seed, 1, i) for i in range(4)]
        self.g_mr2ct = Generator(cfg.generator, init[0])
        self.g_ct2mr = Generator(cfg.generator, init[1])
        self.d_mr = Discriminator(cfg.discriminator, init[2])
        self.d_ct = Discriminator(cfg.discriminator, init[3])
        betas = (cfg.beta1, cfg.beta2)
        gen_params = OrderedDict()
        for prefix, net in (("g_mr2ct", self.g_mr2ct), ("g_ct2mr", self.g_ct2mr)):
            for k, p in net.params.items():
                gen_params[f"{prefix}.{k}"] = p
        disc_params = OrderedDict()
        for prefix, net in (("d_mr", self.d_mr), ("d_ct", self.d_ct)):
            for k, p in net.params.items():
                disc_params[f"{prefix}.{k}"] = p
        self.opt_g = Adam(gen_params, cfg.learning_rate, betas)
        self.opt_d = Adam(disc_params, cfg.learning_rate, betas)
        self.pool_ct = HistoryBuffer(cfg.history_buffer)
        self.pool_mr = HistoryBuffer(cfg.history_buffer)
        self.rng = derive_rng(cfg.seed, 2)
        self.step = 0

    # -- bookkeeping ------------------------------------------------------
    def networks(self) -> dict[str, "Generator | Discriminator"]:
        return {"g_mr2ct": self.g_mr2ct, "g_ct2mr": self.g_ct2mr, "d_mr": self.d_mr, "d_ct": self.d_ct}

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        out.update(self.opt_g.params)
        out.update(self.opt_d.params)
        return out

    def generator(self, direction: str) -> Generator:
        if direction in ("mr2ct", "mr->ct", "mr→ct"):
            return self.g_mr2ct
        if direction in ("ct2mr", "ct->mr", "ct→mr"):
            return self.g_ct2mr
        raise ValueError(f"unknown direction {direction!r}")

    # -- one optimization step -------------------------------------------
    def train_step(self, batch_mr: np.ndarray, batch_ct: np.ndarray) -> L.LossReport:
        """Forward cycle, backward cycle, generator update, discriminator update."""
        cfg = self.cfg
        mr = Tensor(np.asarray(batch_mr, dtype=np.float32))
        ct = Tensor(np.asarray(batch_ct, dtype=np.float32))
        step = self.step + 1

        # generators: discriminators act as fixed critics
        self.d_mr.set_requires_grad(False)
        self.d_ct.set_requires_grad(False)
        fake_ct = self.g_mr2ct(mr)
        rec_mr = self.g_ct2mr(fake_ct)
        fake_mr = self.g_ct2mr(ct)
        rec_ct = self.g_mr2ct(fake_mr)
        d_ct_fake = self.d_ct(fake_ct)
        d_mr_fake = self.d_mr(fake_mr)
        adv_g = (L.generator_adv_loss(d_ct_fake, cfg.saturating_generator_loss)
                 + L.generator_adv_loss(d_mr_fake, cfg.saturating_generator_loss))
        cyc = L.cycle_loss(ct, rec_ct, mr, rec_mr)
        try:
            gc = L.gc_loss(ct, fake_mr, mr, fake_ct)
        except ValueError as exc:
            # a generator collapsed to a constant output has no gradients to correlate
            raise TrainingDiverged(f"training diverged at step {step}: {exc}") from None
        loss_g = adv_g + cfg.weights.lambda_cycle * cyc + cfg.weights.gamma_gc * gc
        if not np.isfinite(loss_g.data):
            raise TrainingDiverged(f"training diverged at step {step}")
        self.opt_g.zero_grad()
        loss_g.backward()
        self.opt_g.step()
        self.d_mr.set_requires_grad(True)
        self.d_ct.set_requires_grad(True)

        # discriminators: real vs pooled fakes
        pooled_ct = Tensor(self.pool_ct.query(fake_ct.data, self.rng))
        pooled_mr = Tensor(self.pool_mr.query(fake_mr.data, self.rng))
        self.opt_d.zero_grad()
        d_ct_real = self.d_ct(ct)
        d_mr_real = self.d_mr(mr)
        loss_d = (L.discriminator_loss(d_ct_real, self.d_ct(pooled_ct))
                  + L.discriminator_loss(d_mr_real, self.d_mr(pooled_mr)))
        if not np.isfinite(loss_d.data):
            raise TrainingDiverged(f"training diverged at step {step}")
        loss_d.backward()
        self.opt_d.step()
        self.step = step

        with no_grad():
            adv_ct = L.adversarial_loss_ct(d_ct_real.detach(), d_ct_fake.detach())
            adv_mr = L.adversarial_loss_mr(d_mr_real.detach(), d_mr_fake.detach())
        report = L.total_objective(adv_ct.item(), adv_mr.item(), cyc.item(), gc.item(), cfg.weights)
        if not all(np.isfinite(report.values())):
            raise TrainingDiverged(f"training diverged at step {step}")
        return report

    # -- inference --------------------------------------------------------
    def translate_array(self, array: np.ndarray, direction: str) -> np.ndarray:
        g = self.generator(direction)
        with no_grad():
            out = g(Tensor(np.asarray(array, dtype=np.float32)[None, None]))
        return out.data[0, 0]


def translate(v: Volume, model: "CycleGAN | str | os.PathLike", direction: str) -> Volume:
    """Run the selected generator on a normalized volume; geometry is preserved."""
    from .checkpoint import load_checkpoint

    if not isinstance(model, CycleGAN):
        model = load_checkpoint(model)
    g = model.generator(direction)
    g.check_input((1, 1) + v.array.shape)
    out = model.translate_array(v.array, direction)
    return Volume(np.clip(out, -1.0, 1.0), v.spacing, v.origin)


# -- corpus-level training --------------------------------------------------
def list_volumes(directory: str | os.PathLike) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"volume directory {d} does not exist")
    files = sorted(d.glob("*.mhd"))
    if not files:
        raise ValueError(f"no MetaImage volumes in {d}")
    return files


def _random_patch(arr: np.ndarray, patch: tuple[int, int, int] | None, rng: np.random.Generator) -> np.ndarray:
    if patch is None:
        return arr
    px, py, pz = patch
    nz, ny, nx = arr.shape
    if px > nx or py > ny or pz > nz:
        raise ValueError(f"patch {patch} larger than volume {(nx, ny, nz)}")
    if (px, py, pz) == (nx, ny, nz):
        return arr
    z0 = uniform_index(rng, nz - pz + 1)
    y0 = uniform_index(rng, ny - py + 1)
    x0 = uniform_index(rng, nx - px + 1)
    return arr[z0:z0 + pz, y0:y0 + py, x0:x0 + px]


def sample_batch(model: CycleGAN, corpus: Sequence[np.ndarray]) -> np.ndarray:
    cfg = model.cfg
    items = []
    for _ in range(cfg.batch_size):
        arr = corpus[uniform_index(model.rng, len(corpus))]
        items.append(_random_patch(arr, cfg.patch_size, model.rng)[None])
    return np.stack(items).astype(np.float32)


def train_arrays(model: CycleGAN, mr: Sequence[np.ndarray], ct: Sequence[np.ndarray], steps: int,
                 log_path: str | os.PathLike | None = None,
                 checkpoint_dir: str | os.PathLike | None = None,
                 checkpoint_every: int | None = None) -> list[L.LossReport]:
    """Run ``steps`` further training steps on in-memory unpaired corpora."""
    from .checkpoint import save_checkpoint

    if not mr or not ct:
        raise ValueError("both domains need at least one volume")
    every = checkpoint_every or model.cfg.checkpoint_every
    reports = []
    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        new = not log_path.exists() or log_path.stat().st_size == 0
        log_file = log_path.open("a")
        if new:
            log_file.write(L.LossReport.CSV_HEADER + "\n")
    try:
        for _ in range(steps):
            batch_mr = sample_batch(model, mr)
            batch_ct = sample_batch(model, ct)
            report = model.train_step(batch_mr, batch_ct)
            reports.append(report)
            if log_file is not None:
                log_file.write(report.csv_row(model.step) + "\n")
            if model.step % 100 == 0:
                log.info("step %d cycle=%.4f gc=%.4f total=%.4f", model.step, report.cycle, report.gc, report.total)
            if checkpoint_dir is not None and model.step % every == 0:
                save_checkpoint(model, Path(checkpoint_dir) / f"checkpoint_{model.step:06d}.vgan")
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_dir is not None:
        save_checkpoint(model, Path(checkpoint_dir) / "checkpoint_final.vgan")
    return reports


def train(mr_dir: str | os.PathLike, ct_dir: str | os.PathLike, cfg: TrainConfig,
          output_dir: str | os.PathLike, resume: str | os.PathLike | None = None) -> Path:
    """Train on two directories of normalized MetaImage volumes.

    Writes ``train_log.csv`` and checkpoints under ``output_dir`` and returns
    the path of the final checkpoint.
    """
    from .checkpoint import load_checkpoint

    mr = [read_metaimage(p).array for p in list_volumes(mr_dir)]
    ct = [read_metaimage(p).array for p in list_volumes(ct_dir)]
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        model = load_checkpoint(resume, cfg)
    else:
        model = CycleGAN(cfg)
        log_path = out / "train_log.csv"
        if log_path.exists():
            log_path.unlink()
    remaining = cfg.steps - model.step
    if remaining < 1:
        raise ValueError(f"checkpoint already at step {model.step} >= steps {cfg.steps}")
    train_arrays(model, mr, ct, remaining, out / "train_log.csv", out)
    return out / "checkpoint_final.vgan"
