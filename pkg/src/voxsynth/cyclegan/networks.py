"""3D residual encoder-decoder generator and 3D patch discriminator."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..autograd import (
    Tensor,
    conv3d,
    conv3d_transpose,
    default_dtype,
    instance_norm3d,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)

INIT_STD = 0.02
DOWN_K, DOWN_STRIDE, DOWN_PAD = 3, 2, 1
UP_K, UP_STRIDE, UP_PAD = 4, 2, 1
RES_K, RES_PAD = 3, 1
DISC_K, DISC_STRIDE, DISC_PAD = 3, 2, 1
HEAD_K, HEAD_PAD = 3, 1
FULL_K, FULL_PAD = 3, 1


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 16
    n_res_blocks: int = 4
    n_down: int = 2
    output_activation: str = "tanh"
    # full-resolution conv before the encoder and after the decoder; 0 disables
    stem_channels: int = 8

    def __post_init__(self):
        if self.base_channels < 1 or self.n_down < 1 or self.n_res_blocks < 0 or self.stem_channels < 0:
            raise ValueError("invalid generator config")
        if self.output_activation != "tanh":
            raise ValueError("generator output activation must be tanh")

    @property
    def full_res_layers(self) -> bool:
        return self.stem_channels > 0

    def channels(self) -> list[int]:
        """Channel count at each encoder level, encoder input first."""
        first = self.stem_channels if self.full_res_layers else 1
        return [first] + [self.base_channels * 2 ** i for i in range(self.n_down)]

    def decoder_channels(self) -> list[int]:
        return self.channels()[::-1]


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 16
    n_layers: int = 3
    patch_output: bool = True

    def __post_init__(self):
        if self.base_channels < 1 or self.n_layers < 1:
            raise ValueError("invalid discriminator config")

    def channels(self) -> list[int]:
        return [1] + [self.base_channels * 2 ** i for i in range(self.n_layers)]


class Network:
    """Ordered collection of named parameter tensors with a ``forward``."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()

    def _param(self, name: str, shape: tuple[int, ...], rng: np.random.Generator | None, fill: float | None = None) -> Tensor:
        dtype = default_dtype()
        if fill is not None or rng is None:
            data = np.full(shape, 0.0 if fill is None else fill, dtype=dtype)
        else:
            data = (rng.standard_normal(shape) * INIT_STD).astype(dtype)
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> OrderedDict[str, Tensor]:
        return self.params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            a = arrays[name]
            if a.shape != p.shape:
                raise ValueError(f"shape mismatch for {name!r}: {a.shape} vs {p.shape}")
            p.data = np.array(a, dtype=p.dtype, copy=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class Generator(Network):
    """stride-2 encoder -> residual blocks -> transposed-conv decoder -> tanh.

    Pass ``rng=None`` for an all-zero network (its output is tanh(0) = 0).
    """

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), rng: np.random.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels()
        if cfg.full_res_layers:
            self._param("stem.weight", (ch[0], 1, FULL_K, FULL_K, FULL_K), rng)
            self._param("stem.gamma", (ch[0],), rng, fill=1.0 if rng is not None else 0.0)
            self._param("stem.beta", (ch[0],), rng, fill=0.0)
        for i in range(cfg.n_down):
            self._param(f"enc{i}.weight", (ch[i + 1], ch[i], DOWN_K, DOWN_K, DOWN_K), rng)
            self._param(f"enc{i}.gamma", (ch[i + 1],), rng, fill=1.0 if rng is not None else 0.0)
            self._param(f"enc{i}.beta", (ch[i + 1],), rng, fill=0.0)
        c = ch[-1]
        for b in range(cfg.n_res_blocks):
            for j in range(2):
                self._param(f"res{b}.conv{j}.weight", (c, c, RES_K, RES_K, RES_K), rng)
                self._param(f"res{b}.conv{j}.gamma", (c,), rng, fill=1.0 if rng is not None else 0.0)
                self._param(f"res{b}.conv{j}.beta", (c,), rng, fill=0.0)
        dec = cfg.decoder_channels()
        for i in range(cfg.n_down):
            # conv3d_transpose weight layout: (in, out, k, k, k)
            self._param(f"dec{i}.weight", (dec[i], dec[i + 1], UP_K, UP_K, UP_K), rng)
            if i < cfg.n_down - 1 or cfg.full_res_layers:
                self._param(f"dec{i}.gamma", (dec[i + 1],), rng, fill=1.0 if rng is not None else 0.0)
                self._param(f"dec{i}.beta", (dec[i + 1],), rng, fill=0.0)
        if cfg.full_res_layers:
            self._param("head.weight", (1, dec[-1], FULL_K, FULL_K, FULL_K), rng)
        self._param("out.bias", (1,), rng, fill=0.0)

    @staticmethod
    def parameter_count(cfg: GeneratorConfig) -> int:
        ch = cfg.channels()
        count = sum(ch[i + 1] * ch[i] * DOWN_K ** 3 + 2 * ch[i + 1] for i in range(cfg.n_down))
        c = ch[-1]
        count += cfg.n_res_blocks * 2 * (c * c * RES_K ** 3 + 2 * c)
        dec = cfg.decoder_channels()
        for i in range(cfg.n_down):
            count += dec[i] * dec[i + 1] * UP_K ** 3
            if i < cfg.n_down - 1 or cfg.full_res_layers:
                count += 2 * dec[i + 1]
        if cfg.full_res_layers:
            count += ch[0] * FULL_K ** 3 + 2 * ch[0]  # stem
            count += dec[-1] * FULL_K ** 3  # head
        return count + 1

    def check_input(self, shape: tuple[int, ...]) -> None:
        f = 2 ** self.cfg.n_down
        if len(shape) != 5 or shape[1] != 1:
            raise ValueError("generator input must be (N, 1, D, H, W)")
        if any(s % f for s in shape[2:]):
            raise ValueError(f"spatial dims {shape[2:]} must be divisible by {f}")

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x.shape)
        p = self.params
        h = x
        full = self.cfg.full_res_layers
        if full:
            h = conv3d(h, p["stem.weight"], pad=FULL_PAD)
            h = relu(instance_norm3d(h, p["stem.gamma"], p["stem.beta"]))
        for i in range(self.cfg.n_down):
            h = conv3d(h, p[f"enc{i}.weight"], stride=DOWN_STRIDE, pad=DOWN_PAD)
            h = relu(instance_norm3d(h, p[f"enc{i}.gamma"], p[f"enc{i}.beta"]))
        for b in range(self.cfg.n_res_blocks):
            r = conv3d(h, p[f"res{b}.conv0.weight"], pad=RES_PAD)
            r = relu(instance_norm3d(r, p[f"res{b}.conv0.gamma"], p[f"res{b}.conv0.beta"]))
            r = conv3d(r, p[f"res{b}.conv1.weight"], pad=RES_PAD)
            r = instance_norm3d(r, p[f"res{b}.conv1.gamma"], p[f"res{b}.conv1.beta"])
            h = h + r
        last = self.cfg.n_down - 1
        for i in range(self.cfg.n_down):
            if i < last or full:
                h = conv3d_transpose(h, p[f"dec{i}.weight"], stride=UP_STRIDE, pad=UP_PAD)
                h = relu(instance_norm3d(h, p[f"dec{i}.gamma"], p[f"dec{i}.beta"]))
            else:
                h = conv3d_transpose(h, p[f"dec{i}.weight"], p["out.bias"], stride=UP_STRIDE, pad=UP_PAD)
        if full:
            h = conv3d(h, p["head.weight"], p["out.bias"], pad=FULL_PAD)
        return tanh(h)


class Discriminator(Network):
    """``n_layers`` stride-2 conv + leaky ReLU(0.2), then a 1-channel conv + sigmoid."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), rng: np.random.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels()
        for i in range(cfg.n_layers):
            self._param(f"conv{i}.weight", (ch[i + 1], ch[i], DISC_K, DISC_K, DISC_K), rng)
            self._param(f"conv{i}.bias", (ch[i + 1],), rng, fill=0.0)
        self._param("head.weight", (1, ch[-1], HEAD_K, HEAD_K, HEAD_K), rng)
        self._param("head.bias", (1,), rng, fill=0.0)

    @staticmethod
    def receptive_field(cfg: DiscriminatorConfig) -> int:
        """Input extent (voxels per axis) seen by one output voxel."""
        rf, jump = 1, 1
        for _ in range(cfg.n_layers):
            rf += (DISC_K - 1) * jump
            jump *= DISC_STRIDE
        return rf + (HEAD_K - 1) * jump

    def logits(self, x: Tensor) -> Tensor:
        p = self.params
        h = x
        for i in range(self.cfg.n_layers):
            h = leaky_relu(conv3d(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=DISC_STRIDE, pad=DISC_PAD))
        return conv3d(h, p["head.weight"], p["head.bias"], pad=HEAD_PAD)

    def forward(self, x: Tensor) -> Tensor:
        return sigmoid(self.logits(x))
