"""Grid-aligned block masks and their application to images."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ImageSample
from .errors import ConfigError


@dataclass(frozen=True)
class MaskConfig:
    block_size: int = 8
    mask_ratio: float = 0.25

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError(f"mask block_size must be >= 1, got {self.block_size}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")


@dataclass(frozen=True)
class BlockMask:
    """Binary (H, W) mask, 1 = occluded."""

    bits: np.ndarray
    block_size: int
    mask_ratio: float
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def num_blocks(self) -> int:
        h, w = self.bits.shape
        return (h // self.block_size) * (w // self.block_size)

    @property
    def block_grid(self) -> np.ndarray:
        """(H/b, W/b) boolean grid of selected blocks."""
        b = self.block_size
        return self.bits[::b, ::b].astype(bool)


@dataclass(frozen=True)
class MaskedImage:
    pixels: np.ndarray
    source: ImageSample | None
    mask: BlockMask


def masked_block_count(num_blocks: int, mask_ratio: float) -> int:
    # round half up, so ratio 0.5 of 3 blocks masks 2
    return int(np.floor(num_blocks * mask_ratio + 0.5))


def generate_block_mask(
    shape: tuple[int, int], block_size: int = 8, mask_ratio: float = 0.25, seed: int = 0
) -> BlockMask:
    """Select ``round(mask_ratio * num_blocks)`` grid blocks without replacement."""
    MaskConfig(block_size, mask_ratio)
    h, w = shape
    if h % block_size or w % block_size:
        raise ConfigError(f"mask block_size {block_size} does not divide image shape {h}x{w}")
    gh, gw = h // block_size, w // block_size
    k = masked_block_count(gh * gw, mask_ratio)
    chosen = np.random.default_rng(seed).choice(gh * gw, size=k, replace=False)
    grid = np.zeros(gh * gw, dtype=np.uint8)
    grid[chosen] = 1
    bits = np.kron(grid.reshape(gh, gw), np.ones((block_size, block_size), dtype=np.uint8))
    bits.flags.writeable = False
    return BlockMask(bits, block_size, mask_ratio, seed)


def mask_pixels(pixels: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """``pixels * (1 - bits)`` broadcast over channels; unmasked values are copied bit-exactly."""
    if pixels.shape[:2] != bits.shape:
        raise ConfigError(f"mask shape {bits.shape} does not match image spatial shape {pixels.shape[:2]}")
    return np.where(bits[..., None].astype(bool), np.zeros((), dtype=pixels.dtype), pixels)


def apply_mask(image: ImageSample | np.ndarray, mask: BlockMask) -> MaskedImage:
    if isinstance(image, ImageSample):
        return MaskedImage(mask_pixels(image.pixels, mask.bits), image, mask)
    return MaskedImage(mask_pixels(np.asarray(image), mask.bits), None, mask)


def write_pgm(mask: BlockMask | np.ndarray, path: str | Path) -> None:
    """Binary PGM (P5), masked pixels white (255)."""
    bits = mask.bits if isinstance(mask, BlockMask) else np.asarray(mask)
    h, w = bits.shape
    data = (bits.astype(bool) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"not an 8-bit binary PGM: {path}")
    w, h = map(int, dims.split())
    return np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)
