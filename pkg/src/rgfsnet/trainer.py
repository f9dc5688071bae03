"""Episodic training, checkpointing and seen/unseen evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch

from .data import DatasetSplit, ImageDataset
from .episodic import EpisodeSpec, predict, run_passes, sample_episode, validate_spec
from .errors import CheckpointError, ConfigError, TrainingError
from .losses import (
    LossReport,
    LossWeights,
    proto_loss,
    recon_loss,
    total_loss,
    triplet_loss,
    variance_loss,
    weighted_total,
)
from .masking import MaskConfig
from .network import ArchitectureConfig, RGFSNet, all_finite, load_state_arrays, state_arrays
from .seeding import derive_seed

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rgfsnet-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_LOG_FIELDS = ("episode", "proto", "triplet", "recon", "variance", "total", "grad_norm")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 1000
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    spec: EpisodeSpec = field(default_factory=EpisodeSpec)
    mask: MaskConfig = field(default_factory=MaskConfig)
    seed: int = 0
    freeze_encoder: bool = False
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    baseline_mode: bool = False  # proto + variance only, decoder never runs
    recon_reduction: str = "mean"
    grad_clip: float = 1e4

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.recon_reduction not in ("mean", "sum"):
            raise ConfigError(f"recon_reduction must be 'mean' or 'sum', got {self.recon_reduction!r}")

    @property
    def effective_weights(self) -> LossWeights:
        if self.baseline_mode:
            return replace(self.weights, beta=0.0, lam=0.0)
        return self.weights

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        d["spec"] = EpisodeSpec(**d["spec"])
        d["mask"] = MaskConfig(**d["mask"])
        return cls(**d)


class Adam:
    """Adam with per-parameter step counts and named moment buffers.

    Parameters whose gradient is ``None`` are skipped entirely, so their
    moments stay zero (frozen encoder, unused decoder in baseline mode).
    """

    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.exp_avg: dict[str, torch.Tensor] = {}
        self.exp_avg_sq: dict[str, torch.Tensor] = {}
        self.steps: dict[str, int] = {}

    def init_state(self, named_params: Iterable[tuple[str, torch.nn.Parameter]]) -> None:
        for name, p in named_params:
            self.exp_avg.setdefault(name, torch.zeros_like(p, memory_format=torch.contiguous_format))
            self.exp_avg_sq.setdefault(name, torch.zeros_like(p, memory_format=torch.contiguous_format))
            self.steps.setdefault(name, 0)

    @torch.no_grad()
    def step(self, named_params: Iterable[tuple[str, torch.nn.Parameter]]) -> None:
        for name, p in named_params:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.exp_avg[name], self.exp_avg_sq[name]
            self.steps[name] += 1
            t = self.steps[name]
            m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
            denom = (v / (1 - self.beta2**t)).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-self.lr / (1 - self.beta1**t))


@dataclass
class TrainState:
    model: RGFSNet
    optimizer: Adam
    config: TrainConfig
    episode_index: int = 0
    rng_cursor: int = 0  # episodes whose seeds have been consumed

    @classmethod
    def fresh(cls, config: TrainConfig, arch: ArchitectureConfig | None = None) -> "TrainState":
        model = RGFSNet(arch or ArchitectureConfig(), seed=derive_seed(config.seed, "init") % (2**31))
        opt = Adam(config.learning_rate)
        state = cls(model, opt, config)
        state.apply_freeze()
        opt.init_state(state.trainable())
        return state

    def apply_freeze(self) -> None:
        for _, p in self.model.named_groups()["encoder"]:
            p.requires_grad_(not self.config.freeze_encoder)

    def trainable(self) -> list[tuple[str, torch.nn.Parameter]]:
        return [(n, p) for n, p in self.model.named_parameters() if p.requires_grad]

    def save(self, path: str | Path) -> Path:
        """Write a versioned zip archive; the target is replaced atomically."""
        path = Path(path)
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "architecture": self.model.config.to_dict(),
            "train_config": self.config.to_dict(),
            "episode_index": self.episode_index,
            "rng_cursor": self.rng_cursor,
            "adam": {
                "lr": self.optimizer.lr,
                "betas": [self.optimizer.beta1, self.optimizer.beta2],
                "eps": self.optimizer.eps,
                "steps": self.optimizer.steps,
            },
            "tensors": {},
        }
        arrays = {f"params/{k}": v for k, v in state_arrays(self.model).items()}
        for k, t in self.optimizer.exp_avg.items():
            arrays[f"exp_avg/{k}"] = t.detach().numpy()
        for k, t in self.optimizer.exp_avg_sq.items():
            arrays[f"exp_avg_sq/{k}"] = t.detach().numpy()
        meta["tensors"] = {k: list(a.shape) for k, a in arrays.items()}

        tmp = path.with_name(path.name + ".tmp")
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("meta.json", json.dumps(meta, indent=2))
            for k, a in arrays.items():
                buf = io.BytesIO()
                np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
                zf.writestr(k + ".npy", buf.getvalue())
        os.replace(tmp, path)
        return path


def load_checkpoint(path: str | Path) -> TrainState:
    """Read a checkpoint fully and validate it before building any state."""
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path} is not an rgfsnet checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"checkpoint version {meta.get('version')} is incompatible with reader version {CHECKPOINT_VERSION}"
                )
            arrays = {}
            for k, shape in meta["tensors"].items():
                a = np.load(io.BytesIO(zf.read(k + ".npy")), allow_pickle=False)
                if list(a.shape) != list(shape):
                    raise CheckpointError(f"tensor {k}: stored shape {a.shape} != declared {shape}")
                arrays[k] = a
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    try:
        arch = ArchitectureConfig.from_dict(meta["architecture"])
        config = TrainConfig.from_dict(meta["train_config"])
        model = RGFSNet(arch)
        load_state_arrays(model, {k[len("params/"):]: a for k, a in arrays.items() if k.startswith("params/")})
    except (ConfigError, TypeError, KeyError) as exc:
        raise CheckpointError(f"checkpoint {path} does not match its architecture: {exc}") from exc
    adam = meta["adam"]
    opt = Adam(adam["lr"], tuple(adam["betas"]), adam["eps"])
    opt.steps = {k: int(v) for k, v in adam["steps"].items()}
    for k in opt.steps:
        opt.exp_avg[k] = torch.from_numpy(arrays[f"exp_avg/{k}"].copy())
        opt.exp_avg_sq[k] = torch.from_numpy(arrays[f"exp_avg_sq/{k}"].copy())
    state = TrainState(model, opt, config, int(meta["episode_index"]), int(meta["rng_cursor"]))
    state.apply_freeze()
    return state


def resume(checkpoint_path: str | Path) -> TrainState:
    return load_checkpoint(checkpoint_path)


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    report: LossReport
    grad_norm: float

    def as_row(self) -> list:
        return self.report.as_row(self.episode) + [self.grad_norm]


def write_loss_csv(rows: Iterable[EpisodeLog], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(LOSS_LOG_FIELDS)
        for r in rows:
            w.writerow([r.episode] + [repr(float(v)) for v in r.as_row()[1:]])


def read_loss_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {k: (int(v) if k == "episode" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]


def _grad_norm(params: list[torch.nn.Parameter]) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads)))


def episode_losses(state: TrainState, dataset: ImageDataset, split: DatasetSplit, episode_index: int):
    """Sample training episode ``episode_index`` and return (loss tensor, LossReport)."""
    cfg = state.config
    spec = replace(cfg.spec, class_pool="base")
    episode = sample_episode(dataset, split, spec, derive_seed(cfg.seed, "train-episode", episode_index))
    result = run_passes(
        state.model,
        episode,
        cfg.weights.n_passes,
        "train",
        base_seed=derive_seed(cfg.seed, "train-pass", episode_index),
        mask=cfg.mask,
        with_recon=not cfg.baseline_mode,
    )
    weights = cfg.effective_weights
    b = result.bundle
    lp = proto_loss(b)
    lv = variance_loss(b)
    lt = triplet_loss(b, weights.margin)
    if result.reconstructions is not None:
        lr = recon_loss(result.recon_targets, result.reconstructions, result.masks, cfg.recon_reduction)
    else:
        lr = torch.zeros((), dtype=lp.dtype)
    loss = weighted_total(lp, lv, lt, lr, weights)
    return loss, total_loss(lp, lv, lt, lr, weights)


def train(
    dataset: ImageDataset,
    split: DatasetSplit,
    config: TrainConfig | None = None,
    arch: ArchitectureConfig | None = None,
    state: TrainState | None = None,
    checkpoint_dir: str | Path | None = None,
    on_episode: Callable[[EpisodeLog], None] | None = None,
) -> tuple[TrainState, list[EpisodeLog]]:
    """Run episodes ``state.episode_index .. config.episodes - 1``.

    Each episode is sampled from the base classes, evaluated with
    ``n_passes`` train-mode passes and followed by exactly one Adam step.
    All randomness is keyed by (seed, episode index), so a resumed state
    reproduces the uninterrupted run.
    """
    if state is None:
        state = TrainState.fresh(config or TrainConfig(), arch)
    cfg = state.config
    validate_spec(dataset, split, replace(cfg.spec, class_pool="base"))
    params = state.trainable()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    logs: list[EpisodeLog] = []
    for ep in range(state.episode_index, cfg.episodes):
        state.model.zero_grad(set_to_none=True)
        try:
            loss, report = episode_losses(state, dataset, split, ep)
            loss.backward()
            norm = _grad_norm([p for _, p in params])
            if not math.isfinite(norm):
                raise TrainingError(f"non-finite gradient norm at episode {ep}")
        except TrainingError:
            # parameters are still those of the last completed episode
            if ckpt_dir is not None:
                state.save(ckpt_dir / "last_good.rgfs")
            raise
        if norm > cfg.grad_clip:
            logger.warning("episode %d: gradient norm %.3g clipped to %.3g", ep, norm, cfg.grad_clip)
            scale = cfg.grad_clip / norm
            for _, p in params:
                if p.grad is not None:
                    p.grad.mul_(scale)
        state.optimizer.step(params)
        if not all_finite(state.model):
            raise TrainingError(f"non-finite parameters after update at episode {ep}")
        state.episode_index = ep + 1
        state.rng_cursor = ep + 1
        log = EpisodeLog(ep, report, norm)
        logs.append(log)
        if on_episode is not None:
            on_episode(log)
        if ckpt_dir is not None and cfg.checkpoint_every and state.episode_index % cfg.checkpoint_every == 0:
            state.save(ckpt_dir / f"ckpt_{state.episode_index:06d}.rgfs")
    if ckpt_dir is not None:
        state.save(ckpt_dir / "final.rgfs")
    return state, logs


@dataclass(frozen=True)
class AccuracyReport:
    pool: str
    n_way: int
    k_shot: int
    episodes: int
    mean_acc: float
    ci95: float

    def to_dict(self) -> dict:
        return asdict(self)


def confidence_interval(accs: np.ndarray) -> float:
    """95% normal-approximation half-width of the mean."""
    if len(accs) < 2:
        return 0.0
    return float(1.96 * np.std(accs, ddof=1) / math.sqrt(len(accs)))


@torch.no_grad()
def evaluate(
    model: RGFSNet,
    dataset: ImageDataset,
    split: DatasetSplit,
    spec: EpisodeSpec | None = None,
    episodes: int = 600,
    n: int = 1,
    seed: int = 0,
    pools: Iterable[str] = ("all", "novel"),
) -> list[AccuracyReport]:
    """Mean episode accuracy per class pool (DropBlock off, pass-mean prediction)."""
    spec = spec or EpisodeSpec()
    reports = []
    for pool in pools:
        pspec = replace(spec, class_pool=pool, recon_batch=0)
        validate_spec(dataset, split, pspec)
        accs = np.empty(episodes)
        for e in range(episodes):
            ep_seed = derive_seed(seed, "eval", pool, pspec.n_way, pspec.k_shot, e)
            episode = sample_episode(dataset, split, pspec, ep_seed)
            result = run_passes(model, episode, n, "eval", base_seed=ep_seed, with_recon=False)
            accs[e] = np.mean(predict(result.bundle) == episode.query_labels)
        reports.append(AccuracyReport(pool, pspec.n_way, pspec.k_shot, episodes, float(accs.mean()), confidence_interval(accs)))
    return reports
