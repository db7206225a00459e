"""Binary checkpoint format.

    "VGAN" | u32 version | u64 step | u32 count | count x tensor
    u32 count | count x tensor          (optimizer moments)
    u64 x 4                             (PCG64 state hi/lo, inc hi/lo)

    tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 data

All integers and floats are little-endian. The first section holds the
network parameters (``g_mr2ct.enc0.weight`` ...) followed by the fake-volume
history pools (``pool_ct.0`` ...), which a bit-exact resume needs. Moments
are named ``opt_g.m.<param>`` / ``opt_g.v.<param>`` and likewise for
``opt_d``; Adam's step count equals the checkpoint step.
"""
from __future__ import annotations

import io
import os
import re
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .networks import DiscriminatorConfig, GeneratorConfig
from .training import CycleGAN, TrainConfig

MAGIC = b"VGAN"
VERSION = 1
_MASK64 = (1 << 64) - 1


class CheckpointError(ValueError):
    pass


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF or arr.ndim > 0xFF:
        raise CheckpointError(f"tensor {name!r} cannot be encoded")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, n).decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").astype(np.float32).reshape(dims)
    return name, data


def _state_tensors(model: CycleGAN) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict((k, p.data) for k, p in model.named_parameters().items())
    for pool_name, pool in (("pool_ct", model.pool_ct), ("pool_mr", model.pool_mr)):
        for i, item in enumerate(pool.items):
            out[f"{pool_name}.{i}"] = item
    return out


def _moment_tensors(model: CycleGAN) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    for opt_name, opt in (("opt_g", model.opt_g), ("opt_d", model.opt_d)):
        for k in opt.params:
            out[f"{opt_name}.m.{k}"] = opt.m[k]
        for k in opt.params:
            out[f"{opt_name}.v.{k}"] = opt.v[k]
    return out


def _rng_words(rng: np.random.Generator) -> tuple[int, int, int, int]:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError("only PCG64 state can be stored")
    if st.get("has_uint32", 0):
        raise CheckpointError("RNG holds a cached 32-bit half word; state is not 32 bytes")
    s, inc = int(st["state"]["state"]), int(st["state"]["inc"])
    return s >> 64, s & _MASK64, inc >> 64, inc & _MASK64


def checkpoint_bytes(model: CycleGAN) -> bytes:
    buf = io.BytesIO()
    state = _state_tensors(model)
    buf.write(MAGIC)
    buf.write(struct.pack("<IQI", VERSION, model.step, len(state)))
    for k, a in state.items():
        _write_tensor(buf, k, a)
    moments = _moment_tensors(model)
    buf.write(struct.pack("<I", len(moments)))
    for k, a in moments.items():
        _write_tensor(buf, k, a)
    buf.write(struct.pack("<4Q", *_rng_words(model.rng)))
    return buf.getvalue()


def save_checkpoint(model: CycleGAN, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    os.replace(tmp, path)
    return path


def read_checkpoint(path: str | os.PathLike):
    """Raw contents: ``(version, step, tensors, moments, rng_words)``."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError("not a VGAN checkpoint")
        version, step, count = struct.unpack("<IQI", _read_exact(fh, 16))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        tensors = OrderedDict(_read_tensor(fh) for _ in range(count))
        (mcount,) = struct.unpack("<I", _read_exact(fh, 4))
        moments = OrderedDict(_read_tensor(fh) for _ in range(mcount))
        words = struct.unpack("<4Q", _read_exact(fh, 32))
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint")
    return version, step, tensors, moments, words


def infer_config(tensors: "OrderedDict[str, np.ndarray]") -> TrainConfig:
    """Architecture recovered from parameter names and shapes; training fields default."""
    try:
        names = set(tensors)
        n_down = len({m.group(1) for k in names if (m := re.match(r"g_mr2ct\.enc(\d+)\.weight$", k))})
        n_res = len({m.group(1) for k in names if (m := re.match(r"g_mr2ct\.res(\d+)\.conv0\.weight$", k))})
        base = tensors["g_mr2ct.enc0.weight"].shape[0]
        stem = tensors["g_mr2ct.stem.weight"].shape[0] if "g_mr2ct.stem.weight" in names else 0
        n_layers = len({m.group(1) for k in names if (m := re.match(r"d_mr\.conv(\d+)\.weight$", k))})
        d_base = tensors["d_mr.conv0.weight"].shape[0]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks parameter {exc}") from None
    return TrainConfig(generator=GeneratorConfig(base_channels=base, n_res_blocks=n_res, n_down=n_down,
                                                 stem_channels=stem),
                       discriminator=DiscriminatorConfig(base_channels=d_base, n_layers=n_layers))


def load_checkpoint(path: str | os.PathLike, cfg: TrainConfig | None = None) -> CycleGAN:
    """Rebuild a model, its optimizers, history pools and RNG from ``path``.

    Without ``cfg`` the architecture is inferred from the stored shapes.
    A ``cfg`` whose architecture disagrees with the file raises.
    """
    _, step, tensors, moments, words = read_checkpoint(path)
    cfg = cfg or infer_config(tensors)
    model = CycleGAN(cfg, zero_init=True)
    params = model.named_parameters()
    extra = [k for k in tensors if k not in params and not re.match(r"pool_(ct|mr)\.\d+$", k)]
    if extra:
        raise CheckpointError(f"checkpoint/config mismatch: unexpected tensor {extra[0]!r}")
    for k, p in params.items():
        if k not in tensors:
            raise CheckpointError(f"checkpoint/config mismatch: missing tensor {k!r}")
        if tensors[k].shape != p.shape:
            raise CheckpointError(f"checkpoint/config mismatch: {k!r} has shape {tensors[k].shape}, expected {p.shape}")
        p.data = tensors[k].copy()
    for pool_name, pool in (("pool_ct", model.pool_ct), ("pool_mr", model.pool_mr)):
        i = 0
        while f"{pool_name}.{i}" in tensors:
            pool.items.append(tensors[f"{pool_name}.{i}"].copy())
            i += 1
        if len(pool.items) > pool.size:
            raise CheckpointError(f"{pool_name} holds {len(pool.items)} items, buffer size is {pool.size}")
    for opt_name, opt in (("opt_g", model.opt_g), ("opt_d", model.opt_d)):
        for k in opt.params:
            for which, store in (("m", opt.m), ("v", opt.v)):
                key = f"{opt_name}.{which}.{k}"
                if key not in moments or moments[key].shape != store[k].shape:
                    raise CheckpointError(f"checkpoint/config mismatch: bad moment {key!r}")
                store[k] = moments[key].copy()
        opt.t = int(step)
    model.step = int(step)
    s_hi, s_lo, i_hi, i_lo = words
    st = model.rng.bit_generator.state
    st["state"] = {"state": (s_hi << 64) | s_lo, "inc": (i_hi << 64) | i_lo}
    st["has_uint32"], st["uinteger"] = 0, 0
    model.rng.bit_generator.state = st
    return model
