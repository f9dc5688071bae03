"""Encoder / bottleneck / decoder / embedding-head network.

Images cross the model boundary channel-last, (B, H, W, C), matching the
datasets. Latent maps stay torch-native channel-first, (B, d, h, w).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

Mode = Literal["train", "eval"]
PARAM_GROUPS = ("encoder", "bottleneck", "decoder", "head")


@dataclass(frozen=True)
class ArchitectureConfig:
    image_shape: tuple[int, int, int] = (64, 64, 3)
    channels: tuple[int, ...] = (32, 64, 128, 128)
    embedding_dim: int = 128
    bottleneck_channels: int = 64
    dropblock_size: int = 3
    drop_prob: float = 0.1
    dropblock_stages: int = 2
    norm_groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))
        object.__setattr__(self, "channels", tuple(int(v) for v in self.channels))
        h, w, _ = self.image_shape
        n = len(self.channels)
        if n < 1:
            raise ConfigError("architecture needs at least one encoder stage")
        if h % 2**n or w % 2**n:
            raise ConfigError(f"image side {h}x{w} not divisible by 2^{n} for {n} stages")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ConfigError(f"drop_prob must lie in [0, 1), got {self.drop_prob}")
        if not 0 <= self.dropblock_stages <= n:
            raise ConfigError(f"dropblock_stages must be in [0, {n}]")
        if self.dropblock_stages and self.dropblock_size > min(self.dropblock_sides):
            raise ConfigError(
                f"dropblock_size {self.dropblock_size} exceeds smallest feature map side {min(self.dropblock_sides)}"
            )
        for c in self.channels + (self.bottleneck_channels,):
            if c % _groups(c, self.norm_groups):
                raise ConfigError(f"channel width {c} incompatible with norm_groups")

    @property
    def num_stages(self) -> int:
        return len(self.channels)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        """(d, h, w)."""
        h, w, _ = self.image_shape
        s = 2**self.num_stages
        return (self.bottleneck_channels, h // s, w // s)

    @property
    def dropblock_sides(self) -> list[int]:
        # DropBlock acts on the pre-pooling map of each of the last stages
        h, w, _ = self.image_shape
        first = self.num_stages - self.dropblock_stages
        return [min(h, w) // 2**i for i in range(first, self.num_stages)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        return cls(**d)


def _groups(channels: int, preferred: int) -> int:
    g = min(preferred, channels)
    while channels % g:
        g -= 1
    return g


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


@dataclass
class DropMaskRecord:
    keep: torch.Tensor
    centers: torch.Tensor
    block_size: int


def sample_drop_mask(
    batch: int,
    height: int,
    width: int,
    block_size: int,
    drop_prob: float,
    generator: torch.Generator | None,
    dtype: torch.dtype = torch.float32,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(keep, centers)``, both (B, 1, H, W).

    Block anchors are drawn at rate
    ``gamma = drop_prob * H * W / (b**2 * (H - b + 1) * (W - b + 1))`` over
    the positions where a full b x b block fits; ``centers`` marks the
    top-left corner of every dropped block.
    """
    b = block_size
    vh, vw = height - b + 1, width - b + 1
    gamma = drop_prob * height * width / (b * b * vh * vw)
    anchors = (torch.rand((batch, 1, vh, vw), generator=generator) < gamma).to(dtype)
    centers = F.pad(anchors, (0, b - 1, 0, b - 1))
    dropped = F.max_pool2d(F.pad(anchors, (b - 1, b - 1, b - 1, b - 1)), kernel_size=b, stride=1)
    return 1.0 - dropped, centers


def dropblock(
    x: torch.Tensor,
    block_size: int,
    drop_prob: float,
    generator: torch.Generator | None = None,
    mode: Mode = "train",
    record: list | None = None,
) -> torch.Tensor:
    """DropBlock on a (B, C, H, W) map; the block pattern is shared across channels.

    Surviving activations are rescaled by ``total / kept``. Identity in eval
    mode or when ``drop_prob == 0``.
    """
    _check_mode(mode)
    if mode == "eval" or drop_prob == 0.0:
        return x
    bsz, _, h, w = x.shape
    if block_size > min(h, w):
        raise ConfigError(f"dropblock block_size {block_size} exceeds feature map {h}x{w}")
    keep, centers = sample_drop_mask(bsz, h, w, block_size, drop_prob, generator, x.dtype)
    if record is not None:
        record.append(DropMaskRecord(keep, centers, block_size))
    kept = keep.sum()
    scale = keep.numel() / kept if kept > 0 else torch.zeros((), dtype=x.dtype)
    return x * keep * scale


class EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, groups: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm = nn.GroupNorm(_groups(cout, groups), cout)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class DecoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, groups: int, last: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)
        self.norm = None if last else nn.GroupNorm(_groups(cout, groups), cout)

    def forward(self, x):
        x = self.deconv(x)
        if self.norm is None:
            return torch.sigmoid(x)
        return F.relu(self.norm(x))


class RGFSNet(nn.Module):
    """Shared encoder feeding a reconstruction decoder and an embedding head."""

    def __init__(self, config: ArchitectureConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config = config or ArchitectureConfig()
        _, _, c = config.image_shape
        widths = (c,) + config.channels
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = nn.ModuleList(
                EncoderStage(a, b, config.norm_groups) for a, b in zip(widths[:-1], widths[1:])
            )
            self.bottleneck = nn.Conv2d(config.channels[-1], config.bottleneck_channels, 1)
            dec_widths = (config.bottleneck_channels,) + tuple(reversed(config.channels[:-1])) + (c,)
            n = len(dec_widths) - 1
            self.decoder = nn.ModuleList(
                DecoderStage(a, b, config.norm_groups, last=i == n - 1)
                for i, (a, b) in enumerate(zip(dec_widths[:-1], dec_widths[1:]))
            )
            self.head = nn.Linear(config.bottleneck_channels, config.embedding_dim)
        self.drop_records: list | None = None

    def _as_tensor(self, images) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        x = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images, dtype=dtype)
        if x.ndim == 3:
            x = x.unsqueeze(0)
        if tuple(x.shape[1:]) != self.config.image_shape:
            raise ConfigError(f"input shape {tuple(x.shape[1:])} does not match model {self.config.image_shape}")
        # standard strides: channels-last input trips a GroupNorm backward crash in some torch builds
        return x.permute(0, 3, 1, 2).clone(memory_format=torch.contiguous_format)

    def encode(self, images, mode: Mode = "eval", pass_seed: int | None = None) -> torch.Tensor:
        """Images (B, H, W, C) -> latent z (B, d, h, w).

        In train mode DropBlock runs in the last ``dropblock_stages`` stages,
        driven by a generator seeded with ``pass_seed``.
        """
        _check_mode(mode)
        cfg = self.config
        x = self._as_tensor(images)
        gen = None
        if mode == "train" and cfg.drop_prob > 0:
            gen = torch.Generator()
            gen.manual_seed(0 if pass_seed is None else int(pass_seed))
        first_drop = cfg.num_stages - cfg.dropblock_stages
        for i, stage in enumerate(self.encoder):
            x = stage(x)
            if i >= first_drop:
                x = dropblock(x, cfg.dropblock_size, cfg.drop_prob, gen, mode, self.drop_records)
            x = F.max_pool2d(x, 2)
        return F.relu(self.bottleneck(x))

    def embed(self, z: torch.Tensor) -> torch.Tensor:
        """Global average pool then affine map: (B, d, h, w) -> (B, D)."""
        return self.head(z.mean(dim=(2, 3)))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """(B, d, h, w) -> reconstruction (B, H, W, C) in [0, 1]."""
        if tuple(z.shape[1:]) != self.config.latent_shape:
            raise ConfigError(f"latent shape {tuple(z.shape[1:])} does not match {self.config.latent_shape}")
        x = z
        for stage in self.decoder:
            x = stage(x)
        return x.permute(0, 2, 3, 1)

    def forward_full(self, images, mode: Mode = "eval", pass_seed: int | None = None):
        z = self.encode(images, mode, pass_seed)
        return self.embed(z), self.decode(z)

    forward = forward_full

    def named_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list] = {g: [] for g in PARAM_GROUPS}
        for name, p in self.named_parameters():
            groups[name.split(".", 1)[0]].append((name, p))
        return groups

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def expected_parameter_count(config: ArchitectureConfig) -> int:
    """Closed-form parameter count (independent of module construction)."""
    c = config.image_shape[2]
    widths = (c,) + config.channels
    total = 0
    for a, b in zip(widths[:-1], widths[1:]):
        total += a * b * 9 + b + 2 * b
    total += config.channels[-1] * config.bottleneck_channels + config.bottleneck_channels
    dec = (config.bottleneck_channels,) + tuple(reversed(config.channels[:-1])) + (c,)
    for i, (a, b) in enumerate(zip(dec[:-1], dec[1:])):
        total += a * b * 16 + b
        if i < len(dec) - 2:
            total += 2 * b
    total += config.bottleneck_channels * config.embedding_dim + config.embedding_dim
    return total


def all_finite(model: nn.Module) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in model.parameters())


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_state_arrays(model: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    """Load named arrays after validating every name and shape."""
    own = model.state_dict()
    missing = sorted(set(own) - set(arrays))
    extra = sorted(set(arrays) - set(own))
    if missing or extra:
        raise ConfigError(f"parameter names differ: missing={missing} unexpected={extra}")
    for k, v in own.items():
        if tuple(arrays[k].shape) != tuple(v.shape):
            raise ConfigError(f"parameter {k}: shape {arrays[k].shape} != {tuple(v.shape)}")
    model.load_state_dict({k: torch.as_tensor(np.ascontiguousarray(a), dtype=own[k].dtype) for k, a in arrays.items()})
