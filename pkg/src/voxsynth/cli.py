"""Command-line driver: one subcommand per stage plus the chained ``pipeline``.

Configuration is an INI file. Every key has a typed default (see
``SCHEMA``); unknown keys, bad values and missing directories are reported
with the offending line number before any work starts.

Randomness: the root seed (``[pipeline] seed`` or ``--seed``) is split into
per-stage seeds by ``stage_seed``, the first 8 bytes (little-endian) of
``sha256("<root>:<stage>")`` masked to 63 bits.

Each command writes its artifacts under the output directory with fixed
names and a ``manifest_<command>.json`` holding the config hash, the seeds
and the SHA-256 of every artifact.

Exit status: 0 on success, 1 on a stage failure, 2 on a config or usage error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

log = logging.getLogger("voxsynth")

EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# -- value parsers ----------------------------------------------------------
def _floats(text: str, n: int | tuple[int, ...]) -> tuple[float, ...]:
    vals = tuple(float(x) for x in text.replace(",", " ").split())
    allowed = (n,) if isinstance(n, int) else n
    if len(vals) not in allowed:
        raise ValueError(f"expected {' or '.join(map(str, allowed))} numbers")
    return vals


def _ints(text: str, n: int) -> tuple[int, ...]:
    vals = tuple(int(x) for x in text.replace(",", " ").split())
    if len(vals) != n:
        raise ValueError(f"expected {n} integers")
    return vals


def _triple(text: str) -> tuple[float, float, float]:
    v = _floats(text, (1, 3))
    return v * 3 if len(v) == 1 else v


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def f(text: str):
        return None if text.strip().lower() in ("", "none") else parse(text)
    return f


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _path(text: str) -> str:
    return text.strip()


_opt_float = _optional(float)
_opt_path = _optional(_path)
_dims = lambda t: _ints(t, 3)  # noqa: E731

# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "pipeline": {"seed": (int, "0")},
    "data": {
        "mr_dir": (_opt_path, ""),
        "ct_dir": (_opt_path, ""),
        "test_dir": (_opt_path, ""),
        "output_dir": (_path, "output"),
        "normalize_lo_pct": (_opt_float, ""),
        "normalize_hi_pct": (_opt_float, ""),
    },
    "phantom": {
        "dims": (_dims, "32 16 16"),
        "n_mr": (int, "20"),
        "n_ct": (int, "20"),
        "n_test": (int, "3"),
        "n_vertebra_blobs": (int, "3"),
        "vertebra_radius": (lambda t: _floats(t, 2), "3 3"),
        "soft_margin": (float, "2"),
        "curvature_min": (float, "0.5"),
        "curvature_max": (float, "4"),
        "noise_sigma": (float, "0.02"),
        "landmarks_per_level": (int, "6"),
    },
    "augment": {
        "rotation_max_deg": (_triple, "10"),
        "noise_sigma": (float, "0.01"),
        "elastic_grid": (int, "8"),
        "elastic_sigma_mm": (float, "1.0"),
        "stretch_lo": (float, "1"),
        "stretch_hi": (float, "99"),
        "multiplier": (int, "1"),
    },
    "train": {
        "steps": (int, "2000"),
        "batch_size": (int, "1"),
        "learning_rate": (float, "2e-4"),
        "beta1": (float, "0.5"),
        "beta2": (float, "0.999"),
        "lambda_cycle": (float, "10"),
        "gamma_gc": (float, "1"),
        "checkpoint_every": (int, "500"),
        "history_buffer": (int, "16"),
        "patch_size": (_optional(_dims), ""),
        "saturating_generator_loss": (_bool, "false"),
        "base_channels": (int, "16"),
        "n_res_blocks": (int, "4"),
        "n_down": (int, "2"),
        "stem_channels": (int, "8"),
        "disc_base_channels": (int, "16"),
        "disc_layers": (int, "3"),
    },
    "segment": {
        "window_lo": (_opt_float, ""),
        "window_hi": (_opt_float, ""),
        "median_radius": (int, "1"),
        "keep_components": (int, "0"),
        "bins": (int, "256"),
    },
    "reconstruct": {"isolevel": (float, "0.5")},
    "validate": {
        "landmarks": (_opt_path, ""),
        "icp_iters": (int, "100"),
        "tol": (float, "1e-6"),
        "init_transform": (_opt_path, ""),
        "region_margin_mm": (float, "10"),
        "levels": (lambda t: tuple(t.split()), ""),
    },
}

_DIR_KEYS = ("mr_dir", "ct_dir", "test_dir")


@dataclass
class Config:
    values: dict[str, dict[str, Any]]
    lines: dict[tuple[str, str], int] = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def where(self, section: str, key: str) -> str:
        line = self.lines.get((section, key))
        if line is None:
            return f"[{section}] {key}"
        return f"{self.source}:{line}: [{section}] {key}"

    @property
    def seed(self) -> int:
        return self.values["pipeline"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["data"]["output_dir"])

    def canonical(self) -> dict[str, dict[str, Any]]:
        """Resolved values with the output location dropped (it never affects content)."""
        out = {s: dict(kv) for s, kv in self.values.items()}
        out["data"].pop("output_dir")
        return out

    def sha256(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    def require(self, section: str, key: str):
        v = self.values[section][key]
        if v is None:
            raise ConfigError(f"{self.where(section, key)} is required for this command")
        return v


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map ``(section, key)`` to its 1-based line number."""
    out: dict[tuple[str, str], int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section is not None and ("=" in s or ":" in s) and not raw[:1].isspace():
            key = s.split("=", 1)[0] if "=" in s else s.split(":", 1)[0]
            out[(section, key.strip().lower())] = n
    return out


def load_config(path: str | None = None, text: str | None = None, *, seed: int | None = None,
                output: str | None = None) -> Config:
    """Parse, type-check and resolve a config; unknown keys and absent directories raise."""
    source = str(path) if path is not None else "<config>"
    if text is None:
        if path is None:
            text = ""
        else:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        # the parser's own messages already carry "[line N]"
        raise ConfigError(" ".join(str(exc).split())) from None
    lines = _key_lines(text)
    cfg = Config({}, lines, source)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{cfg.where(section, key)}: unknown key")
    for section, keys in SCHEMA.items():
        vals = {}
        for key, (parse, default) in keys.items():
            raw = parser.get(section, key, fallback=None) if parser.has_section(section) else None
            try:
                vals[key] = parse(default if raw is None else raw)
            except ValueError as exc:
                raise ConfigError(f"{cfg.where(section, key)}: invalid value {raw!r} ({exc})") from None
        cfg.values[section] = vals
    if seed is not None:
        cfg.values["pipeline"]["seed"] = seed
    if output is not None:
        cfg.values["data"]["output_dir"] = output
    if cfg.seed < 0:
        raise ConfigError(f"{cfg.where('pipeline', 'seed')}: seed must be >= 0")
    base = Path(path).parent if path is not None else Path(".")
    for key in _DIR_KEYS:
        v = cfg.values["data"][key]
        if v is None:
            continue
        p = Path(v) if Path(v).is_absolute() else base / v
        if not p.is_dir():
            raise ConfigError(f"{cfg.where('data', key)}: directory {v} does not exist")
        cfg.values["data"][key] = str(p)
    for key in ("landmarks", "init_transform"):
        v = cfg.values["validate"][key]
        if v is None:
            continue
        p = Path(v) if Path(v).is_absolute() else base / v
        if not p.is_file():
            raise ConfigError(f"{cfg.where('validate', key)}: file {v} does not exist")
        cfg.values["validate"][key] = str(p)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: Config) -> None:
    """Module preconditions, checked eagerly so errors carry line numbers."""
    def fail(section, key, msg):
        raise ConfigError(f"{cfg.where(section, key)}: {msg}")

    def blame(section, exc, hints):
        # point at the first key the module's message names
        msg = str(exc)
        key = next((k for word, k in hints if word in msg), hints[0][1])
        fail(section, key, msg)

    try:
        augment_spec(cfg)
    except ValueError as exc:
        blame("augment", exc, [("multiplier", "multiplier"), ("noise", "noise_sigma"), ("stretch", "stretch_lo"),
                               ("elastic", "elastic_grid"), ("rotation", "rotation_max_deg")])
    try:
        train_config(cfg)
    except ValueError as exc:
        blame("train", exc, [("steps", "steps"), ("learning_rate", "learning_rate"), ("batch", "batch_size"),
                             ("weights", "lambda_cycle"), ("generator", "base_channels"),
                             ("discriminator", "disc_layers")])
    seg = cfg["segment"]
    if (seg["window_lo"] is None) != (seg["window_hi"] is None):
        fail("segment", "window_hi", "window_lo and window_hi must be set together")
    if seg["window_lo"] is not None and not seg["window_lo"] < seg["window_hi"]:
        fail("segment", "window_hi", "window_lo must be < window_hi")
    if seg["median_radius"] < 0:
        fail("segment", "median_radius", "must be >= 0")
    if seg["keep_components"] < 0:
        fail("segment", "keep_components", "must be >= 0")
    if seg["bins"] < 2:
        fail("segment", "bins", "must be >= 2")
    if cfg["validate"]["icp_iters"] < 1:
        fail("validate", "icp_iters", "must be >= 1")
    d = cfg["data"]
    if (d["normalize_lo_pct"] is None) != (d["normalize_hi_pct"] is None):
        fail("data", "normalize_hi_pct", "normalize_lo_pct and normalize_hi_pct must be set together")
    ph = cfg["phantom"]
    for key in ("n_mr", "n_ct", "n_test", "landmarks_per_level"):
        if ph[key] < 1:
            fail("phantom", key, "must be >= 1")
    if not 0 <= ph["curvature_min"] <= ph["curvature_max"]:
        fail("phantom", "curvature_max", "need 0 <= curvature_min <= curvature_max")


# -- seeds, builders --------------------------------------------------------
def stage_seed(root: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(root)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def augment_spec(cfg: Config, stage: str = "augment"):
    from .augment import AugmentSpec

    a = cfg["augment"]
    return AugmentSpec(rotation_max_deg=a["rotation_max_deg"], noise_sigma=a["noise_sigma"],
                       elastic_grid=a["elastic_grid"], elastic_sigma_mm=a["elastic_sigma_mm"],
                       stretch_pcts=(a["stretch_lo"], a["stretch_hi"]), multiplier=a["multiplier"],
                       seed=stage_seed(cfg.seed, stage))


def train_config(cfg: Config):
    from .cyclegan import DiscriminatorConfig, GeneratorConfig, TrainConfig
    from .losses import LossWeights

    t = cfg["train"]
    return TrainConfig(
        steps=t["steps"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
        beta1=t["beta1"], beta2=t["beta2"],
        weights=LossWeights(lambda_cycle=t["lambda_cycle"], gamma_gc=t["gamma_gc"]),
        seed=stage_seed(cfg.seed, "train"), checkpoint_every=t["checkpoint_every"],
        history_buffer=t["history_buffer"], patch_size=t["patch_size"],
        saturating_generator_loss=t["saturating_generator_loss"],
        generator=GeneratorConfig(base_channels=t["base_channels"], n_res_blocks=t["n_res_blocks"],
                                  n_down=t["n_down"], stem_channels=t["stem_channels"]),
        discriminator=DiscriminatorConfig(base_channels=t["disc_base_channels"], n_layers=t["disc_layers"]),
    )


# -- manifest ---------------------------------------------------------------
def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects the artifacts a command writes and emits its manifest."""

    def __init__(self, cfg: Config, command: str):
        self.cfg, self.command = cfg, command
        self.out = cfg.output_dir
        self.artifacts: list[Path] = []
        self.seeds: dict[str, int] = {}

    def add(self, *paths: Path) -> None:
        for p in paths:
            p = Path(p)
            self.artifacts.append(p)
            if p.suffix == ".mhd":
                from .volume import read_metaimage_header

                raw = p.parent / read_metaimage_header(p)["ElementDataFile"]
                self.artifacts.append(raw)

    def manifest(self) -> dict:
        arts = {}
        for p in self.artifacts:
            rel = p.resolve().relative_to(self.out.resolve()).as_posix()
            arts[rel] = sha256_file(p)
        return {"command": self.command, "config_sha256": self.cfg.sha256(), "seed": self.cfg.seed,
                "stage_seeds": dict(sorted(self.seeds.items())), "config": self.cfg.canonical(),
                "artifacts": dict(sorted(arts.items()))}

    def write_manifest(self) -> Path:
        path = self.out / f"manifest_{self.command}.json"
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True, default=list) + "\n")
        return path


# -- stages -----------------------------------------------------------------
def _load_input(cfg: Config, path: str | Path):
    from .volume import normalize_intensity, read_metaimage

    v = read_metaimage(path)
    d = cfg["data"]
    if d["normalize_lo_pct"] is not None:
        v = normalize_intensity(v, d["normalize_lo_pct"], d["normalize_hi_pct"])
    return v


def _volume_files(directory: str | Path) -> list[Path]:
    """``*.mhd`` in a directory, skipping masks."""
    files = sorted(p for p in Path(directory).glob("*.mhd") if not p.stem.endswith("_mask"))
    if not files:
        raise FileNotFoundError(f"no MetaImage volumes in {directory}")
    return files


def stage_phantom(run: Run) -> None:
    from .phantom import corpus_specs, generate_phantom_pair, phantom_landmarks
    from .segment import write_mask
    from .validate import write_landmarks
    from .volume import write_metaimage

    ph = run.cfg["phantom"]
    kw = dict(dims=ph["dims"], amp_range=(ph["curvature_min"], ph["curvature_max"]),
              n_vertebra_blobs=ph["n_vertebra_blobs"], vertebra_radius=ph["vertebra_radius"],
              soft_margin=ph["soft_margin"], noise_sigma=ph["noise_sigma"])
    base = run.out / "phantom"
    jobs = (("mr", ph["n_mr"]), ("ct", ph["n_ct"]), ("test", ph["n_test"]))
    for domain, n in jobs:
        seed = stage_seed(run.cfg.seed, f"phantom.{domain}")
        run.seeds[f"phantom.{domain}"] = seed
        d = base / domain
        d.mkdir(parents=True, exist_ok=True)
        for i, spec in enumerate(corpus_specs(n, seed, **kw)):
            mr, ct, mask = generate_phantom_pair(spec)
            stem = f"{domain}_{i:03d}"
            if domain == "ct":
                write_metaimage(ct, d / f"{stem}.mhd")
                run.add(d / f"{stem}.mhd")
                continue
            write_metaimage(mr, d / f"{stem}.mhd")
            run.add(d / f"{stem}.mhd")
            if domain == "test":
                # ground truth goes one level down so the test directory lists only inputs
                truth = d / "truth"
                truth.mkdir(exist_ok=True)
                write_mask(mask, truth / f"{stem}_mask.mhd")
                write_metaimage(ct, truth / f"{stem}_ct.mhd")
                write_landmarks(phantom_landmarks(spec, ph["landmarks_per_level"]), d / f"{stem}_landmarks.csv")
                run.add(truth / f"{stem}_mask.mhd", truth / f"{stem}_ct.mhd", d / f"{stem}_landmarks.csv")


def stage_augment(run: Run) -> tuple[Path, Path]:
    from .augment import augment_volume, copy_params
    from .volume import write_metaimage

    cfg = run.cfg
    spec = augment_spec(cfg)
    run.seeds["augment"] = spec.seed
    dirs = []
    for domain in ("mr", "ct"):
        src = cfg.require("data", f"{domain}_dir")
        dst = run.out / "augment" / domain
        dst.mkdir(parents=True, exist_ok=True)
        # streams are keyed by (seed, domain, input, copy)
        domain_spec = augment_spec(cfg, f"augment.{domain}")
        for i, p in enumerate(_volume_files(src)):
            v = _load_input(cfg, p)
            write_metaimage(v, dst / f"{p.stem}.mhd", element_type="MET_FLOAT")
            run.add(dst / f"{p.stem}.mhd")
            for k in range(spec.multiplier):
                out = augment_volume(v, domain_spec, copy_params(domain_spec, i, k))
                write_metaimage(out, dst / f"{p.stem}_aug{k}.mhd", element_type="MET_FLOAT")
                run.add(dst / f"{p.stem}_aug{k}.mhd")
        dirs.append(dst)
    return dirs[0], dirs[1]


def stage_train(run: Run, mr_dir: str | Path | None = None, ct_dir: str | Path | None = None,
                resume: str | None = None) -> Path:
    from .cyclegan import CycleGAN, load_checkpoint, train_arrays

    cfg = run.cfg
    tc = train_config(cfg)
    run.seeds["train"] = tc.seed
    mr_dir = mr_dir or cfg.require("data", "mr_dir")
    ct_dir = ct_dir or cfg.require("data", "ct_dir")
    mr = [_load_input(cfg, p).array for p in _volume_files(mr_dir)]
    ct = [_load_input(cfg, p).array for p in _volume_files(ct_dir)]
    out = run.out / "train"
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    if resume is not None:
        model = load_checkpoint(resume, tc)
    else:
        for stale in list(out.glob("checkpoint_*.vgan")) + [log_path]:
            stale.unlink(missing_ok=True)
        model = CycleGAN(tc)
    remaining = tc.steps - model.step
    if remaining < 1:
        raise ValueError(f"checkpoint already at step {model.step} >= steps {tc.steps}")
    train_arrays(model, mr, ct, remaining, log_path, out)
    run.add(log_path, *sorted(out.glob("checkpoint_*.vgan")))
    return out / "checkpoint_final.vgan"


def stage_translate(run: Run, volume: str | Path, direction: str, checkpoint: str | Path | None = None) -> Path:
    from .cyclegan import translate
    from .volume import write_metaimage

    checkpoint = checkpoint or run.out / "train" / "checkpoint_final.vgan"
    if not Path(checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint {checkpoint} not found (run train first)")
    v = _load_input(run.cfg, volume)
    out = translate(v, checkpoint, direction)
    dst = run.out / "translate" / f"{Path(volume).stem}_{direction}.mhd"
    dst.parent.mkdir(parents=True, exist_ok=True)
    write_metaimage(out, dst, element_type="MET_FLOAT")
    run.add(dst)
    return dst


def segment_pipeline(cfg: Config, v):
    """Per-slice Otsu, then the configured median smoothing and component filter."""
    from .segment import keep_largest_components, median_smooth, segment_slices

    s = cfg["segment"]
    window = None if s["window_lo"] is None else (s["window_lo"], s["window_hi"])
    res = segment_slices(v, window, s["bins"])
    mask = res.mask
    if s["median_radius"] > 0:
        mask = median_smooth(mask, s["median_radius"])
    if s["keep_components"] > 0:
        mask = keep_largest_components(mask, s["keep_components"])
    res.mask = mask
    return res


def stage_segment(run: Run, volume: str | Path) -> Path:
    from .segment import write_mask
    from .volume import read_metaimage

    res = segment_pipeline(run.cfg, read_metaimage(volume))
    d = run.out / "segment"
    d.mkdir(parents=True, exist_ok=True)
    stem = Path(volume).stem
    mask_path, csv_path = d / f"{stem}_mask.mhd", d / f"{stem}_thresholds.csv"
    write_mask(res.mask, mask_path)
    res.write_thresholds(csv_path)
    run.add(mask_path, csv_path)
    return mask_path


def stage_reconstruct(run: Run, mask: str | Path) -> Path:
    from .reconstruct import marching_cubes, write_ply
    from .volume import read_metaimage

    mesh = marching_cubes(read_metaimage(mask), run.cfg["reconstruct"]["isolevel"])
    if len(mesh.triangles) == 0:
        raise ValueError(f"mask {mask} is empty; no surface to reconstruct")
    stem = Path(mask).stem
    stem = stem[: -len("_mask")] if stem.endswith("_mask") else stem
    dst = run.out / "reconstruct" / f"{stem}.ply"
    dst.parent.mkdir(parents=True, exist_ok=True)
    write_ply(mesh, dst)
    run.add(dst)
    return dst


def stage_validate(run: Run, mesh_path: str | Path, landmarks: str | Path | None = None) -> Path:
    from .reconstruct import read_ply
    from .validate import RigidTransform, per_level_report, read_landmarks

    v = run.cfg["validate"]
    landmarks = landmarks or run.cfg.require("validate", "landmarks")
    init = None
    if v["init_transform"] is not None:
        init = RigidTransform.parse(Path(v["init_transform"]).read_text())
    report = per_level_report(read_landmarks(landmarks), read_ply(mesh_path), levels=list(v["levels"]) or None,
                              icp_iters=v["icp_iters"], tol=v["tol"], region_margin_mm=v["region_margin_mm"],
                              init_transform=init)
    d = run.out / "validate"
    d.mkdir(parents=True, exist_ok=True)
    txt, csv_path = report.write(d / f"{Path(mesh_path).stem}_report")
    run.add(txt, csv_path)
    return txt


def stage_pipeline(run: Run) -> None:
    cfg = run.cfg
    for key in _DIR_KEYS:
        cfg.require("data", key)
    test_dir = Path(cfg["data"]["test_dir"])
    tests = _volume_files(test_dir)
    landmark_files = {}
    for t in tests:
        lm = cfg["validate"]["landmarks"] or test_dir / f"{t.stem}_landmarks.csv"
        if not Path(lm).is_file():
            raise FileNotFoundError(f"no landmarks for test volume {t.name} (expected {lm})")
        landmark_files[t] = lm
    mr_dir, ct_dir = stage_augment(run)
    ckpt = stage_train(run, mr_dir, ct_dir)
    for t in tests:
        synth = stage_translate(run, t, "mr2ct", ckpt)
        mask = stage_segment(run, synth)
        mesh = stage_reconstruct(run, mask)
        stage_validate(run, mesh, landmark_files[t])


# -- argument handling ------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxsynth", description="MR-to-CT synthesis, segmentation and validation.")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="root seed (overrides [pipeline] seed)")
    p.add_argument("--output", help="output directory (overrides [data] output_dir)")
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread limit (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", help="write a synthetic MR/CT/test corpus with masks and landmarks")
    sub.add_parser("augment", help="augment [data] mr_dir and ct_dir")
    t = sub.add_parser("train", help="train the CycleGAN on [data] mr_dir and ct_dir")
    t.add_argument("--resume", help="checkpoint to continue from")
    t = sub.add_parser("translate", help="translate one volume with a trained checkpoint")
    t.add_argument("volume")
    t.add_argument("--direction", choices=("mr2ct", "ct2mr"), required=True)
    t.add_argument("--checkpoint", help="default: <output>/train/checkpoint_final.vgan")
    t = sub.add_parser("segment", help="per-slice Otsu bone mask and threshold CSV")
    t.add_argument("volume")
    t = sub.add_parser("reconstruct", help="marching-cubes PLY mesh from a mask")
    t.add_argument("mask")
    t = sub.add_parser("validate", help="ICP landmark registration report")
    t.add_argument("mesh")
    t.add_argument("landmarks", nargs="?", help="default: [validate] landmarks")
    sub.add_parser("pipeline", help="augment, train, translate, segment, reconstruct, validate")
    return p


def _dispatch(run: Run, args) -> None:
    c = args.command
    if c == "phantom":
        stage_phantom(run)
    elif c == "augment":
        stage_augment(run)
    elif c == "train":
        stage_train(run, resume=args.resume)
    elif c == "translate":
        stage_translate(run, args.volume, args.direction, args.checkpoint)
    elif c == "segment":
        stage_segment(run, args.volume)
    elif c == "reconstruct":
        stage_reconstruct(run, args.mask)
    elif c == "validate":
        stage_validate(run, args.mesh, args.landmarks)
    elif c == "pipeline":
        stage_pipeline(run)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown command {c}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed, output=args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # optional
        threadpool_limits = None
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, args.command)
    try:
        if threadpool_limits is not None:
            with threadpool_limits(limits=args.threads):
                _dispatch(run, args)
        else:
            _dispatch(run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # stage errors are reported verbatim
        log.debug("stage failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    finally:
        if run.artifacts:
            run.write_manifest()
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
