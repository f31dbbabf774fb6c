import json

import numpy as np
import pytest
import torch
from PIL import Image

from conftest import make_paired_tree, png_bytes
from pcsgan import cli
from pcsgan.config import FeatureExtractorSpec, TrainConfig, apply_preset
from pcsgan.training import (init_train_state, load_checkpoint, make_bundle,
                             save_checkpoint)


def write_yaml(path, text):
    path.write_text(text)
    return path


def config_text(root, ckpt_dir, image_size=32, epochs=1, preset="abl_AL"):
    return (
        f"dataset:\n  root: {root}\n"
        f"train:\n  image_size: {image_size}\n  epochs_total: {epochs}\n"
        f"  epochs_constant_lr: {epochs}\n  seed: 0\n"
        f"loss:\n  preset: {preset}\n"
        "feature:\n  backbone: residual_classifier_random\n  layer: stage3\n"
        f"checkpoint:\n  dir: {ckpt_dir}\n  every: 10\n")


@pytest.fixture(scope="module")
def two_pair_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds")
    return make_paired_tree(root, {"train": [("a", 2)], "test": [("b", 1)]},
                            image_size=32, seed=900)


def make_checkpoint(tmp_path, image_size=32, bias_v=None, bias_t=None):
    """A checkpoint with freshly initialized nets; optional constant-output
    generators via the final convolution bias (tanh saturates at +-10)."""
    cfg = apply_preset(
        TrainConfig(dataset_root="unused", image_size=image_size, epochs_total=1,
                    epochs_constant_lr=1, seed=0, checkpoint_dir=tmp_path,
                    feature_extractor=FeatureExtractorSpec(
                        backbone="residual_classifier_random", layer="stage3")),
        "abl_AL")
    state = init_train_state(cfg)
    with torch.no_grad():
        for net, bias in ((state.models.g_v, bias_v), (state.models.g_t, bias_t)):
            if bias is None:
                continue
            for p in net.parameters():
                p.zero_()
            final_conv = [m for m in net.modules() if isinstance(m, torch.nn.Conv2d)][-1]
            final_conv.bias.fill_(bias)
    state.epoch = 1
    path = tmp_path / "ckpt"
    save_checkpoint(make_bundle(state, cfg, [{"epoch": 1, "lr": 2e-4}]), path)
    return path


class TestTrainCommand:
    def test_smoke_run(self, two_pair_dataset, tmp_path, capsys):
        ckpt_dir = tmp_path / "run"
        cfg_path = write_yaml(tmp_path / "cfg.yaml",
                              config_text(two_pair_dataset, ckpt_dir))
        assert cli.main(["train", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert str(ckpt_dir / "final") in out
        assert (ckpt_dir / "final" / "meta.json").is_file()
        assert (ckpt_dir / "loss_curves.png").is_file()
        assert (ckpt_dir / "training_log.csv").is_file()

    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "does_not_exist.yaml"
        assert cli.main(["train", "--config", str(missing)]) != 0
        assert "does_not_exist.yaml" in capsys.readouterr().err

    def test_resume_version_mismatch(self, two_pair_dataset, tmp_path, capsys):
        stale = make_checkpoint(tmp_path)
        meta = json.loads((stale / "meta.json").read_text())
        meta["format_version"] = 0
        (stale / "meta.json").write_text(json.dumps(meta))
        cfg_path = write_yaml(tmp_path / "cfg.yaml",
                              config_text(two_pair_dataset, tmp_path / "run2"))
        code = cli.main(["train", "--config", str(cfg_path), "--resume", str(stale)])
        assert code != 0
        assert "version" in capsys.readouterr().err


@pytest.fixture(scope="module")
def identity_dataset_192(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_identity")
    make_paired_tree(root, {"train": [("t", 1)], "test": [("e", 2)]},
                     image_size=192, seed=77)
    for split in ("train", "test"):
        for p in sorted((root / split / "source").iterdir()):
            (root / split / "visible" / p.name).write_bytes(p.read_bytes())
    return root


class TestEvaluateCommand:
    def test_identity_generator_reports_perfect_ssim(
            self, identity_dataset_192, tmp_path, monkeypatch, capsys):
        ckpt = make_checkpoint(tmp_path, image_size=192)
        monkeypatch.setattr(cli, "_generator_from_bundle",
                            lambda bundle, direction: torch.nn.Identity())
        out_dir = tmp_path / "report"
        code = cli.main(["evaluate", "--checkpoint", str(ckpt),
                         "--data", str(identity_dataset_192),
                         "--out", str(out_dir), "--lpips-uncalibrated"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "SSIM=1.0000" in stdout
        assert (out_dir / "report.json").is_file()
        assert (out_dir / "report_metrics.png").is_file()
        header = (out_dir / "report.csv").read_text().splitlines()[0]
        assert header.split(",") == ["ssim", "ms_ssim", "psnr_db", "mse", "lpips"]

    def test_nonexistent_checkpoint(self, identity_dataset_192, tmp_path, capsys):
        code = cli.main(["evaluate", "--checkpoint", str(tmp_path / "none"),
                         "--data", str(identity_dataset_192),
                         "--out", str(tmp_path / "r"), "--lpips-uncalibrated"])
        assert code != 0
        assert capsys.readouterr().err

    def test_lpips_without_weights_or_flag_fails(self, identity_dataset_192,
                                                 tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("PCSGAN_LPIPS_WEIGHTS", raising=False)
        ckpt = make_checkpoint(tmp_path, image_size=192)
        code = cli.main(["evaluate", "--checkpoint", str(ckpt),
                         "--data", str(identity_dataset_192),
                         "--out", str(tmp_path / "r")])
        assert code != 0
        assert "LPIPS" in capsys.readouterr().err


class TestTransformCommand:
    @pytest.fixture()
    def input_dir(self, tmp_path):
        d = tmp_path / "inputs"
        d.mkdir()
        for i in range(3):
            (d / f"img_{i}.png").write_bytes(png_bytes(size=16, seed=i))
        return d

    def test_direction_selects_generator(self, tmp_path, input_dir):
        # G_V saturated high (255 everywhere), G_T saturated low (0 everywhere)
        ckpt = make_checkpoint(tmp_path, image_size=32, bias_v=10.0, bias_t=-10.0)
        out_v = tmp_path / "out_t2v"
        assert cli.main(["transform", "--checkpoint", str(ckpt), "--input", str(input_dir),
                         "--output", str(out_v), "--direction", "t2v"]) == 0
        pngs = sorted(out_v.glob("*.png"))
        assert [p.name for p in pngs] == ["img_0.png", "img_1.png", "img_2.png"]
        with Image.open(pngs[0]) as img:
            arr = np.asarray(img)
        assert arr.shape == (32, 32, 3)
        assert (arr == 255).all()

        out_t = tmp_path / "out_v2t"
        assert cli.main(["transform", "--checkpoint", str(ckpt), "--input", str(input_dir),
                         "--output", str(out_t), "--direction", "v2t"]) == 0
        with Image.open(sorted(out_t.glob("*.png"))[0]) as img:
            assert (np.asarray(img) == 0).all()

    def test_empty_input_dir(self, tmp_path, capsys):
        ckpt = make_checkpoint(tmp_path)
        empty = tmp_path / "empty"
        empty.mkdir()
        code = cli.main(["transform", "--checkpoint", str(ckpt), "--input", str(empty),
                         "--output", str(tmp_path / "o"), "--direction", "t2v"])
        assert code != 0
        assert "no input images" in capsys.readouterr().err

    def test_unreadable_file_continues_but_fails(self, tmp_path, input_dir, capsys):
        ckpt = make_checkpoint(tmp_path, bias_v=10.0)
        (input_dir / "broken.png").write_bytes(b"junk")
        out = tmp_path / "out"
        code = cli.main(["transform", "--checkpoint", str(ckpt), "--input", str(input_dir),
                         "--output", str(out), "--direction", "t2v"])
        assert code != 0
        assert len(list(out.glob("*.png"))) == 3
        assert "broken.png" in capsys.readouterr().err


@pytest.fixture(scope="module")
def ablation_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablate_ds")
    return make_paired_tree(root, {"train": [("a", 2)], "test": [("b", 1)]},
                            image_size=192, seed=321)


class TestAblateCommand:
    def run_ablate(self, dataset, tmp_path, tag):
        ckpt_dir = tmp_path / f"ablation_{tag}"
        cfg_path = write_yaml(
            tmp_path / f"cfg_{tag}.yaml",
            config_text(dataset, ckpt_dir, image_size=192, epochs=1, preset="pcsgan"))
        code = cli.main(["ablate", "--config", str(cfg_path),
                         "--presets", "abl_AL,abl_AL_CL", "--lpips-uncalibrated"])
        return code, ckpt_dir

    def test_two_presets_in_request_order(self, ablation_dataset, tmp_path, capsys):
        code, ckpt_dir = self.run_ablate(ablation_dataset, tmp_path, "a")
        assert code == 0
        table = (ckpt_dir / "ablation.csv").read_text().splitlines()
        assert len(table) == 3
        assert table[1].startswith("abl_AL,AL,")
        assert table[2].startswith("abl_AL_CL,AL+CL,")
        assert (ckpt_dir / "abl_AL" / "final" / "meta.json").is_file()
        assert (ckpt_dir / "abl_AL_CL" / "final" / "meta.json").is_file()
        assert (ckpt_dir / "ablation_metrics.png").is_file()
        assert (ckpt_dir / "ablation_grid.png").is_file()
        out = capsys.readouterr().out
        assert "Loss Functions" in out

    def test_rerun_reproduces_identical_table(self, ablation_dataset, tmp_path):
        code1, dir1 = self.run_ablate(ablation_dataset, tmp_path, "r1")
        code2, dir2 = self.run_ablate(ablation_dataset, tmp_path, "r2")
        assert code1 == 0 and code2 == 0
        assert (dir1 / "ablation.csv").read_text() == (dir2 / "ablation.csv").read_text()

    def test_unknown_preset_rejected(self, ablation_dataset, tmp_path, capsys):
        cfg_path = write_yaml(tmp_path / "cfg.yaml",
                              config_text(ablation_dataset, tmp_path / "ck"))
        code = cli.main(["ablate", "--config", str(cfg_path), "--presets", "dualgan"])
        assert code != 0
        assert "dualgan" in capsys.readouterr().err


class TestAblationPlan:
    def test_per_preset_subdirectories_are_disjoint(self, tmp_path):
        base = TrainConfig(dataset_root="d", checkpoint_dir=tmp_path / "base")
        plan = cli.AblationPlan(presets=("abl_AL", "abl_AL_CL"), base=base,
                                out_dir=tmp_path / "abl")
        dirs = [plan.config_for(p).checkpoint_dir for p in plan.presets]
        assert len(set(dirs)) == len(dirs)
        assert all(d.parent == tmp_path / "abl" for d in dirs)

    def test_empty_plan_rejected(self, tmp_path):
        from pcsgan.errors import ValidationError
        base = TrainConfig(dataset_root="d")
        with pytest.raises(ValidationError):
            cli.AblationPlan(presets=(), base=base, out_dir=tmp_path)

    def test_unknown_preset_rejected(self, tmp_path):
        from pcsgan.errors import ValidationError
        base = TrainConfig(dataset_root="d")
        with pytest.raises(ValidationError, match="pan"):
            cli.AblationPlan(presets=("pan",), base=base, out_dir=tmp_path)

    def test_config_for_installs_mask_and_seed(self, tmp_path):
        from pcsgan.config import preset_loss_mask
        base = TrainConfig(dataset_root="d", seed=9)
        plan = cli.AblationPlan(presets=("cyclegan",), base=base, out_dir=tmp_path)
        cfg = plan.config_for("cyclegan")
        assert cfg.weights == preset_loss_mask("cyclegan")
        assert cfg.seed == 9
