import json
import subprocess
import sys

import pytest

from rgfsnet.cli import main
from rgfsnet.config import load_config, parse_config
from rgfsnet.errors import ConfigError
from rgfsnet.masking import read_pgm

SMALL = """
[data]
num_classes = {classes}
samples_per_class = {per_class}
shape = 16, 16, 3
base_classes = {base}

[model]
channels = 8, 8
embedding_dim = 8
bottleneck_channels = 8

[mask]
block_size = 4

[train]
episodes = 3
n_way = 3
k_shot = 2
q_queries = 2
checkpoint_every = 2
{extra}
"""


def write_config(tmp_path, classes=6, per_class=8, base=3, extra="", name="run.ini"):
    path = tmp_path / name
    path.write_text(SMALL.format(classes=classes, per_class=per_class, base=base, extra=extra))
    return path


def test_help_lists_every_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--out", "--seed", "--overwrite", "train", "eval", "synth", "inspect-mask"):
        assert flag in text
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--help"])
    assert exc.value.code == 0 and "--checkpoint" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rgfsnet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "inspect-mask" in res.stdout


def test_train_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "episode,proto,triplet,recon,variance,total,grad_norm"
    assert len(lines) == 1 + 3
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["ckpt_000002.rgfs", "final.rgfs"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["episodes_completed"] == 3
    assert len(manifest["dataset"]["classes"]) == 6
    assert len(manifest["dataset"]["split"]["base"]) == 3


def test_global_flags_accepted_before_command(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "4", "train"]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["train_config"]["seed"] == 4


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="alpa = 0.5")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "alpa" in capsys.readouterr().err


def test_unknown_section_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[trainer]\nepisodes = 1\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "trainer" in capsys.readouterr().err


def test_missing_dataset_path_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[data]\nsource = folder\npath = does/not/exist\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "does/not/exist" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 2


def test_refuses_to_clobber_without_overwrite(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    first = (out / "loss.csv").read_bytes()
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 2
    assert "--overwrite" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg), "--out", str(out), "--overwrite"]) == 0
    assert (out / "loss.csv").read_bytes() == first


def test_config_parsing_roundtrip(tmp_path):
    cfg = load_config(write_config(tmp_path, extra="alpha = 0.02\nbaseline_mode = yes\nrecon_batch = none"))
    assert cfg.train.weights.alpha == 0.02 and cfg.train.baseline_mode
    assert cfg.train.spec.recon_batch is None
    assert cfg.arch.image_shape == (16, 16, 3) and cfg.arch.channels == (8, 8)
    assert cfg.train.mask.block_size == 4
    assert load_config(None).train.episodes == 1000


def test_config_value_errors():
    with pytest.raises(ConfigError, match="episodes"):
        parse_config("[train]\nepisodes = many\n")
    with pytest.raises(ConfigError, match="freeze_encoder"):
        parse_config("[train]\nfreeze_encoder = maybe\n")
    with pytest.raises(ConfigError):
        parse_config("[eval]\npools = unseen\n")
    cfg = parse_config("[data]\nnum_classes = 4\nbase_classes = class_00, class_02\n")
    assert cfg.data.base_classes == ("class_00", "class_02")


# --- eval -----------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    cfg = write_config(root, classes=8, per_class=10, base=4)
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root, root / "run" / "checkpoints" / "final.rgfs"


def test_eval_record_cardinality(trained, tmp_path):
    root, ckpt = trained
    cfg = write_config(tmp_path, classes=8, per_class=10, base=4,
                       extra="\n[eval]\nepisodes = 3\nways = 3\nshots = 1, 5\nq_queries = 2\npools = all, novel")
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")]) == 0
    records = json.loads((tmp_path / "e" / "accuracy.json").read_text())
    assert len(records) == 4
    assert {(r["k_shot"], r["pool"]) for r in records} == {(1, "all"), (5, "all"), (1, "novel"), (5, "novel")}
    for r in records:
        assert set(r) == {"pool", "n_way", "k_shot", "episodes", "mean_acc", "ci95"}


def test_eval_repeatable(trained, tmp_path):
    _, ckpt = trained
    cfg = write_config(tmp_path, classes=8, per_class=10, base=4,
                       extra="\n[eval]\nepisodes = 4\nways = 3\nshots = 2\nq_queries = 2")
    for name in ("a", "b"):
        assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "accuracy.json").read_bytes() == (tmp_path / "b" / "accuracy.json").read_bytes()


def test_eval_pool_too_small(trained, tmp_path, capsys):
    _, ckpt = trained
    cfg = write_config(tmp_path, classes=8, per_class=10, base=6,
                       extra="\n[eval]\nways = 3\nshots = 1\npools = novel\nq_queries = 2")
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")]) == 2
    assert "pool too small" in capsys.readouterr().err


def test_eval_corrupt_checkpoint_exit_1(tmp_path):
    cfg = write_config(tmp_path, extra="\n[eval]\nways = 3\nshots = 1\nq_queries = 2")
    bad = tmp_path / "bad.rgfs"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(bad), "--out", str(tmp_path / "e")]) == 1


# --- synth and inspect-mask -----------------------------------------------


def test_synth_counts_and_determinism(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[data]\nnum_classes = 10\nsamples_per_class = 50\nshape = 16, 16, 3\n")
    for name in ("a", "b"):
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    a, b = tmp_path / "a" / "images", tmp_path / "b" / "images"
    dirs = sorted(p for p in a.iterdir() if p.is_dir())
    files = sorted(a.rglob("*.png"))
    assert len(dirs) == 10 and len(files) == 500
    for f in files:
        assert f.read_bytes() == (b / f.relative_to(a)).read_bytes()


def test_synth_single_class_exit_2(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[data]\nnum_classes = 1\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_synth_tree_feeds_folder_training(tmp_path):
    synth = tmp_path / "s.ini"
    synth.write_text("[data]\nnum_classes = 6\nsamples_per_class = 8\nshape = 16, 16, 3\n")
    assert main(["synth", "--config", str(synth), "--out", str(tmp_path / "d")]) == 0
    cfg = write_config(tmp_path).read_text().replace("num_classes = 6", "source = folder\npath = d/images")
    (tmp_path / "f.ini").write_text(cfg)
    assert main(["train", "--config", str(tmp_path / "f.ini"), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("ratio,white", [(0.25, 1024), (0.0, 0), (1.0, 4096)])
def test_inspect_mask_pixel_counts(tmp_path, ratio, white):
    cfg = tmp_path / "m.ini"
    cfg.write_text(f"[data]\nnum_classes = 2\nsamples_per_class = 2\n[mask]\nblock_size = 8\nmask_ratio = {ratio}\n"
                   "[inspect]\nsamples = 2\n")
    assert main(["inspect-mask", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    masks = tmp_path / "o" / "masks"
    bits = read_pgm(masks / "mask_00.pgm")
    assert bits.shape == (64, 64) and int((bits == 255).sum()) == white
    assert (masks / "masked_01.png").exists() and (masks / "original_01.png").exists()
    assert len(list(masks.glob("*.pgm"))) == 2


def test_config_inline_comments():
    cfg = parse_config("[train]\nepisodes = 7   ; short run\nbaseline_mode = yes ; ablation\n")
    assert cfg.train.episodes == 7 and cfg.train.baseline_mode
