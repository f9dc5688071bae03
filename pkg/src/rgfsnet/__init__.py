"""Few-shot scene classification with reconstruction-guided prototypes.

The public API re-exports the main types and operations of each module.
"""

from .data import (
    DatasetManifest,
    DatasetSplit,
    ImageDataset,
    generate_synthetic_dataset,
    load_image_folder,
    make_split,
    save_image_folder,
)
from .episodic import Episode, EpisodeSpec, predict, run_passes, sample_episode
from .errors import CheckpointError, ConfigError, DataError, RGFSError, TrainingError
from .losses import (
    LossReport,
    LossWeights,
    PassBundle,
    make_bundle,
    proto_loss,
    recon_loss,
    total_loss,
    triplet_loss,
    variance_loss,
)
from .masking import BlockMask, MaskConfig, apply_mask, generate_block_mask
from .network import ArchitectureConfig, RGFSNet
from .trainer import AccuracyReport, TrainConfig, TrainState, evaluate, load_checkpoint, resume, train

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "ArchitectureConfig",
    "BlockMask",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "DatasetSplit",
    "Episode",
    "EpisodeSpec",
    "ImageDataset",
    "LossReport",
    "LossWeights",
    "MaskConfig",
    "PassBundle",
    "RGFSError",
    "RGFSNet",
    "TrainConfig",
    "TrainState",
    "TrainingError",
    "apply_mask",
    "evaluate",
    "generate_block_mask",
    "generate_synthetic_dataset",
    "load_checkpoint",
    "load_image_folder",
    "make_bundle",
    "make_split",
    "predict",
    "proto_loss",
    "recon_loss",
    "resume",
    "run_passes",
    "sample_episode",
    "save_image_folder",
    "total_loss",
    "train",
    "triplet_loss",
    "variance_loss",
]
