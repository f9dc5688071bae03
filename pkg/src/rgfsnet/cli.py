"""Command-line entry point: ``rgfsnet {train,eval,synth,inspect-mask}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .config import RunConfig, load_config
from .data import ImageDataset, generate_synthetic_dataset, load_image_folder, make_split, save_image_folder
from .episodic import validate_spec
from .errors import ConfigError, RGFSError
from .masking import apply_mask, generate_block_mask, write_pgm
from .seeding import derive_seed
from .trainer import EpisodeLog, TrainState, evaluate, load_checkpoint, train, write_loss_csv

logger = logging.getLogger("rgfsnet")

# files or directories each command owns inside --out
OUTPUTS = {
    "train": ("loss.csv", "checkpoints", "manifest.json"),
    "eval": ("accuracy.json",),
    "synth": ("images", "synth_manifest.json"),
    "inspect-mask": ("masks",),
}


def _load_dataset(cfg: RunConfig, split: bool = True) -> ImageDataset:
    d = cfg.data
    if d.source == "folder":
        ds = load_image_folder(d.path, d.shape, workers=d.workers)
    else:
        ds = generate_synthetic_dataset(d.num_classes, d.samples_per_class, d.shape, seed=derive_seed(cfg.seed, "data"))
    if not split:
        return ds
    return ds.with_split(make_split(ds.manifest, d.base_classes, seed=derive_seed(cfg.seed, "split")))


def _prepare_out(cfg: RunConfig, command: str, overwrite: bool) -> Path:
    if cfg.out is None:
        raise ConfigError("no output directory: pass --out or set [run] out")
    out = cfg.out
    existing = [out / name for name in OUTPUTS[command] if (out / name).exists()]
    if existing and not overwrite:
        raise ConfigError(f"refusing to overwrite {', '.join(map(str, existing))}; pass --overwrite")
    for p in existing:
        if p.is_dir():
            shutil.rmtree(p)
        else:
            p.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg: RunConfig, overwrite: bool = False) -> int:
    ds = _load_dataset(cfg)
    split = ds.manifest.split
    out = _prepare_out(cfg, "train", overwrite)
    every = max(1, cfg.train.episodes // 20)

    loss_path = out / "loss.csv"
    write_loss_csv([], loss_path)

    def on_episode(log: EpisodeLog) -> None:
        write_loss_csv([log], loss_path, append=True)
        if log.episode % every == 0 or log.episode == cfg.train.episodes - 1:
            logger.info("episode %d total %.4f proto %.4f", log.episode, log.report.total, log.report.proto)

    state = TrainState.fresh(cfg.train, cfg.arch)
    state, _ = train(ds, split, state=state, checkpoint_dir=out / "checkpoints", on_episode=on_episode)

    manifest = {
        "dataset": ds.manifest.to_dict(),
        "architecture": cfg.arch.to_dict(),
        "train_config": cfg.train.to_dict(),
        "episodes_completed": state.episode_index,
        "parameter_count": state.model.parameter_count(),
        "loss_log": "loss.csv",
        "checkpoints": sorted(p.name for p in (out / "checkpoints").iterdir()),
        "skipped_files": list(ds.skipped),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: Path, overwrite: bool = False) -> int:
    ds = _load_dataset(cfg)
    split = ds.manifest.split
    requests = cfg.eval.requests()
    for spec, _ in requests:
        validate_spec(ds, split, spec)
    state = load_checkpoint(checkpoint)
    if tuple(state.model.config.image_shape) != tuple(ds.shape):
        raise ConfigError(
            f"[data] shape {ds.shape} does not match checkpoint image shape {state.model.config.image_shape}"
        )
    out = _prepare_out(cfg, "eval", overwrite)
    records = []
    for spec, pool in requests:
        (rep,) = evaluate(state.model, ds, split, spec, cfg.eval.episodes, cfg.eval.passes, cfg.seed, pools=(pool,))
        logger.info("%s %d-way %d-shot: %.4f +- %.4f", pool, rep.n_way, rep.k_shot, rep.mean_acc, rep.ci95)
        records.append(rep.to_dict())
    (out / "accuracy.json").write_text(json.dumps(records, indent=2))
    return 0


def cmd_synth(cfg: RunConfig, overwrite: bool = False) -> int:
    d = cfg.data
    ds = generate_synthetic_dataset(d.num_classes, d.samples_per_class, d.shape, seed=derive_seed(cfg.seed, "data"))
    out = _prepare_out(cfg, "synth", overwrite)
    files = save_image_folder(ds, out / "images")
    ds.manifest.to_json(out / "synth_manifest.json")
    logger.info("wrote %d images to %s", len(files), out / "images")
    return 0


def cmd_inspect_mask(cfg: RunConfig, overwrite: bool = False) -> int:
    ds = _load_dataset(cfg, split=False)
    out = _prepare_out(cfg, "inspect-mask", overwrite) / "masks"
    out.mkdir()
    mcfg = cfg.train.mask
    h, w, _ = ds.shape
    for i in range(min(cfg.inspect_samples, len(ds))):
        mask = generate_block_mask((h, w), mcfg.block_size, mcfg.mask_ratio, seed=derive_seed(cfg.seed, "inspect", i))
        write_pgm(mask, out / f"mask_{i:02d}.pgm")
        for name, pixels in (("original", ds[i].pixels), ("masked", apply_mask(ds[i], mask).pixels)):
            arr = np.round(np.asarray(pixels) * 255).astype(np.uint8)
            Image.fromarray(arr[..., 0] if arr.shape[-1] == 1 else arr).save(out / f"{name}_{i:02d}.png")
    return 0


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="INI run configuration (defaults apply when omitted)")
    p.add_argument("--out", type=Path, default=d, help="output directory (overrides [run] out)")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides [run] seed)")
    p.add_argument("--overwrite", action="store_true", default=d if suppress else False,
                   help="replace this command's existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgfsnet", description="Few-shot training and evaluation with RGFS-Net.")
    _add_globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("train", parents=[common], help="train on the base classes; writes loss.csv, checkpoints/, manifest.json")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint; writes accuracy.json")
    ev.add_argument("--checkpoint", type=Path, required=True, help="checkpoint archive to evaluate")
    sub.add_parser("synth", parents=[common], help="write the synthetic dataset as an image-folder tree")
    sub.add_parser("inspect-mask", parents=[common], help="write sample block masks (PGM) and masked images (PNG)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        if args.command == "train":
            return cmd_train(cfg, args.overwrite)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.overwrite)
        if args.command == "synth":
            return cmd_synth(cfg, args.overwrite)
        return cmd_inspect_mask(cfg, args.overwrite)
    except ConfigError as exc:
        print(f"rgfsnet: config error: {exc}", file=sys.stderr)
        return 2
    except (RGFSError, OSError) as exc:
        print(f"rgfsnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
