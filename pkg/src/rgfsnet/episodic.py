"""N-way K-shot episodes and the multi-pass stochastic executor."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch

from .data import DatasetSplit, ImageDataset
from .errors import ConfigError
from .losses import PassBundle, make_bundle
from .masking import MaskConfig, generate_block_mask
from .network import Mode, RGFSNet
from .seeding import derive_seed

Pool = Literal["base", "novel", "all"]


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 5
    q_queries: int = 15
    recon_batch: int | None = None  # None -> n_way * k_shot
    class_pool: Pool = "base"

    def __post_init__(self):
        if self.n_way < 2:
            raise ConfigError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ConfigError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.q_queries < 1:
            raise ConfigError(f"q_queries must be >= 1, got {self.q_queries}")
        if self.recon_batch is not None and self.recon_batch < 0:
            raise ConfigError("recon_batch must be >= 0")
        if self.class_pool not in ("base", "novel", "all"):
            raise ConfigError(f"unknown class pool {self.class_pool!r}")

    @property
    def recon_size(self) -> int:
        return self.n_way * self.k_shot if self.recon_batch is None else self.recon_batch


def pool_classes(split: DatasetSplit, pool: Pool) -> tuple[int, ...]:
    if pool == "base":
        return tuple(split.base_classes)
    if pool == "novel":
        return tuple(split.novel_classes)
    if pool == "all":
        return split.all_classes
    raise ConfigError(f"unknown class pool {pool!r}")


def validate_spec(dataset: ImageDataset, split: DatasetSplit, spec: EpisodeSpec) -> tuple[int, ...]:
    classes = pool_classes(split, spec.class_pool)
    if len(classes) < spec.n_way:
        raise ConfigError(
            f"pool too small: {spec.n_way}-way episodes need {spec.n_way} classes, "
            f"{spec.class_pool} pool has {len(classes)}"
        )
    need = spec.k_shot + spec.q_queries
    names = {c.class_id: c.name for c in dataset.manifest.classes}
    for cid in classes:
        have = int(np.sum(dataset.labels == cid))
        if have < need:
            raise ConfigError(f"insufficient samples in class {names.get(cid, cid)!r}: {have} < {need}")
    return classes


@dataclass(frozen=True)
class Episode:
    """Index-based episode over ``dataset``.

    ``support_idx`` is (N, K), ``query_idx`` is (N, q); row j belongs to
    ``class_ids[j]``, which is also the episode-local label j.
    """

    dataset: ImageDataset
    support_idx: np.ndarray
    query_idx: np.ndarray
    recon_idx: np.ndarray
    class_ids: np.ndarray
    seed: int

    @property
    def n_way(self) -> int:
        return len(self.class_ids)

    @property
    def support(self) -> np.ndarray:
        return self.dataset.images[self.support_idx]

    @property
    def query(self) -> np.ndarray:
        return self.dataset.images[self.query_idx]

    @property
    def recon_images(self) -> np.ndarray:
        return self.dataset.images[self.recon_idx]

    @property
    def query_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), self.query_idx.shape[1])

    def to_json(self) -> str:
        src = self.dataset.source_ids
        return json.dumps(
            {
                "seed": self.seed,
                "class_ids": self.class_ids.tolist(),
                "support": [[src[i] for i in row] for row in self.support_idx],
                "query": [[src[i] for i in row] for row in self.query_idx],
                "recon": [src[i] for i in self.recon_idx],
            },
            indent=2,
        )


def sample_episode(dataset: ImageDataset, split: DatasetSplit, spec: EpisodeSpec, seed: int) -> Episode:
    classes = validate_spec(dataset, split, spec)
    g = np.random.default_rng(seed)
    chosen = g.choice(np.asarray(classes), size=spec.n_way, replace=False)
    support, query = [], []
    for cid in chosen:
        picks = g.choice(dataset.indices_of(int(cid)), size=spec.k_shot + spec.q_queries, replace=False)
        support.append(picks[: spec.k_shot])
        query.append(picks[spec.k_shot :])
    pool_idx = np.flatnonzero(np.isin(dataset.labels, classes))
    r = spec.recon_size
    recon = g.choice(pool_idx, size=r, replace=r > len(pool_idx))
    return Episode(dataset, np.stack(support), np.stack(query), recon, chosen.astype(np.int64), seed)


@dataclass
class PassResult:
    bundle: PassBundle
    reconstructions: torch.Tensor | None  # (n, R, H, W, C)
    recon_targets: torch.Tensor | None  # (R, H, W, C)
    masks: torch.Tensor | None  # (R, H, W)


def episode_masks(episode: Episode, mask: MaskConfig) -> np.ndarray:
    """One fresh block mask per reconstruction image, keyed by (episode seed, image index)."""
    h, w, _ = episode.dataset.shape
    return np.stack(
        [
            generate_block_mask((h, w), mask.block_size, mask.mask_ratio, derive_seed(episode.seed, "mask", r)).bits
            for r in range(len(episode.recon_idx))
        ]
    ) if len(episode.recon_idx) else np.zeros((0, h, w), dtype=np.uint8)


def run_passes(
    model: RGFSNet,
    episode: Episode,
    n: int,
    mode: Mode = "train",
    base_seed: int = 0,
    mask: MaskConfig | None = None,
    with_recon: bool = True,
) -> PassResult:
    """Run ``n`` stochastic passes over support, query and masked reconstruction images.

    Pass j uses DropBlock seed ``derive_seed(base_seed, "pass", j)``. All images
    of one pass go through the encoder as a single batch so the embedding and
    reconstruction pathways share that pass's realization. In eval mode the
    passes are identical, so the encoder runs once and its outputs are reused.
    """
    if n < 1:
        raise ConfigError("need at least one pass")
    mask = mask or MaskConfig()
    dtype = next(model.parameters()).dtype
    n_way, k = episode.support_idx.shape
    q = episode.query_idx.shape[1]
    h, w, c = episode.dataset.shape
    images = [episode.support.reshape(-1, h, w, c), episode.query.reshape(-1, h, w, c)]

    targets = masks_t = None
    if with_recon and len(episode.recon_idx):
        bits = episode_masks(episode, mask)
        targets = torch.as_tensor(episode.recon_images, dtype=dtype)
        masks_t = torch.as_tensor(bits, dtype=dtype)
        images.append(np.where(bits[..., None].astype(bool), np.float32(0), episode.recon_images))
    batch = torch.as_tensor(np.concatenate(images), dtype=dtype)
    n_cls = n_way * (k + q)

    supports, queries, recons = [], [], []
    for j in range(n):
        if mode == "eval" and j > 0:
            supports.append(supports[0])
            queries.append(queries[0])
            if targets is not None:
                recons.append(recons[0])
            continue
        z = model.encode(batch, mode, derive_seed(base_seed, "pass", j))
        emb = model.embed(z[:n_cls])
        supports.append(emb[: n_way * k].reshape(n_way, k, -1))
        queries.append(emb[n_way * k :])
        if targets is not None:
            recons.append(model.decode(z[n_cls:]))

    labels = torch.as_tensor(episode.query_labels, dtype=torch.long)
    bundle = make_bundle(torch.stack(supports), torch.stack(queries), labels)
    return PassResult(bundle, torch.stack(recons) if recons else None, targets, masks_t)


def predict(bundle: PassBundle) -> np.ndarray:
    """Argmax of pass-averaged probabilities; ties go to the lowest class index."""
    mean = bundle.mean_probabilities().detach().cpu().numpy()
    return np.argmax(mean, axis=-1)
