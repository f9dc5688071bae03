"""INI run configuration with strict key checking.

Every section and key is optional; anything not listed in ``SCHEMA`` is
rejected with a :class:`ConfigError` naming it. Example::

    [run]
    seed = 0

    [data]
    source = synthetic
    num_classes = 10
    samples_per_class = 50
    shape = 64, 64, 3
    base_classes = 5

    [train]
    episodes = 1000
    alpha = 0.01
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .episodic import EpisodeSpec
from .errors import ConfigError
from .losses import LossWeights
from .masking import MaskConfig
from .network import ArchitectureConfig
from .trainer import TrainConfig


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "run": {"seed": int, "out": str},
    "data": {
        "source": str,
        "path": str,
        "num_classes": int,
        "samples_per_class": int,
        "shape": _ints,
        "base_classes": str,
        "workers": int,
    },
    "model": {
        "channels": _ints,
        "embedding_dim": int,
        "bottleneck_channels": int,
        "dropblock_size": int,
        "drop_prob": float,
        "dropblock_stages": int,
        "norm_groups": int,
    },
    "mask": {"block_size": int, "mask_ratio": float},
    "train": {
        "episodes": int,
        "learning_rate": float,
        "alpha": float,
        "beta": float,
        "lam": float,
        "margin": float,
        "n_passes": int,
        "n_way": int,
        "k_shot": int,
        "q_queries": int,
        "recon_batch": _optional_int,
        "freeze_encoder": _bool,
        "checkpoint_every": int,
        "baseline_mode": _bool,
        "recon_reduction": str,
        "grad_clip": float,
    },
    "eval": {"episodes": int, "passes": int, "ways": _ints, "shots": _ints, "q_queries": int, "pools": _words},
    "inspect": {"samples": int},
}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "folder"
    path: Path | None = None
    num_classes: int = 10
    samples_per_class: int = 50
    shape: tuple[int, int, int] = (64, 64, 3)
    base_classes: int | tuple[str, ...] = 5
    workers: int | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "folder"):
            raise ConfigError(f"[data] source must be 'synthetic' or 'folder', got {self.source!r}")
        if self.source == "folder":
            if self.path is None:
                raise ConfigError("[data] path is required when source = folder")
            if not self.path.is_dir():
                raise ConfigError(f"[data] path {str(self.path)!r} is not a directory")
        if len(self.shape) != 3:
            raise ConfigError("[data] shape must be height, width, channels")


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 600
    passes: int = 1
    ways: tuple[int, ...] = (5,)
    shots: tuple[int, ...] = (1, 5)
    q_queries: int = 15
    pools: tuple[str, ...] = ("all", "novel")

    def __post_init__(self):
        if self.episodes < 1 or self.passes < 1:
            raise ConfigError("[eval] episodes and passes must be >= 1")
        if not (self.ways and self.shots and self.pools):
            raise ConfigError("[eval] ways, shots and pools must be non-empty")
        for pool in self.pools:
            if pool not in ("all", "novel", "base"):
                raise ConfigError(f"[eval] unknown pool {pool!r}")

    def requests(self) -> list[tuple[EpisodeSpec, str]]:
        return [
            (EpisodeSpec(way, shot, self.q_queries, recon_batch=0, class_pool=pool), pool)
            for way, shot, pool in itertools.product(self.ways, self.shots, self.pools)
        ]


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: Path | None = None
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=dict)  # ArchitectureConfig fields besides image_shape
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    inspect_samples: int = 4

    @property
    def arch(self) -> ArchitectureConfig:
        """Network configuration for the data shape; built on demand so data-only commands skip it."""
        return ArchitectureConfig(image_shape=self.data.shape, **self.model)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


def _read_sections(parser: configparser.ConfigParser) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values = {}
        for key, raw in parser.items(section):
            conv = SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc
        out[section] = values
    return out


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    """Parse INI text; relative paths resolve against ``base_dir``."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__", inline_comment_prefixes=(";",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    s = _read_sections(parser)
    run, data, model, mask, tr, ev = (s.get(k, {}) for k in ("run", "data", "model", "mask", "train", "eval"))
    base_dir = Path(base_dir)
    seed = run.get("seed", 0)

    data = dict(data)
    if "path" in data:
        p = Path(data["path"]).expanduser()
        data["path"] = p if p.is_absolute() else base_dir / p
    if "base_classes" in data:
        raw = data["base_classes"].strip()
        data["base_classes"] = int(raw) if raw.isdigit() else _words(raw)
    if "shape" in data:
        data["shape"] = tuple(data["shape"])
    data_cfg = DataConfig(**data)

    weight_keys = ("alpha", "beta", "lam", "margin", "n_passes")
    spec_keys = ("n_way", "k_shot", "q_queries", "recon_batch")
    weights = LossWeights(**{k: tr[k] for k in weight_keys if k in tr})
    spec = EpisodeSpec(**{k: tr[k] for k in spec_keys if k in tr})
    rest = {k: v for k, v in tr.items() if k not in weight_keys + spec_keys}
    train = TrainConfig(weights=weights, spec=spec, mask=MaskConfig(**mask), seed=seed, **rest)

    out = run.get("out")
    return RunConfig(
        seed=seed,
        out=(base_dir / out) if out and not Path(out).is_absolute() else (Path(out) if out else None),
        data=data_cfg,
        model=dict(model),
        train=train,
        eval=EvalConfig(**ev),
        inspect_samples=s.get("inspect", {}).get("samples", 4),
    )


def load_config(path: str | Path | None) -> RunConfig:
    """Read a config file; ``None`` yields the all-defaults configuration."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc}") from exc
    return parse_config(text, path.parent)
