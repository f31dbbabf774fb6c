import math

import numpy as np
import pytest
import torch

from conftest import make_paired_tree
from pcsgan import metrics
from pcsgan.config import FeatureExtractorSpec
from pcsgan.data import scan_paired_dataset
from pcsgan.errors import ConfigError, EmptyDatasetError, ValidationError
from pcsgan.lpips import (LPIPS_WEIGHTS_ENV, LpipsMeter, load_lpips_meter,
                          save_stage_weights)

# Frozen multiscale-SSIM oracle values, computed once with
# tf.image.ssim_multiscale (filter_size=11, filter_sigma=1.5, k1=0.01,
# k2=0.03, max_val=255) on the seeded pairs produced by the generators
# below; regeneration script: scripts/gen_msssim_oracle.py.
MSSSIM_ORACLE_NOISE_SEED123 = 0.9711027145385742
MSSSIM_ORACLE_SMOOTH_SEED7 = 0.9469000697135925


def noise_pair_256(seed=123):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(256, 256, 3)).astype(np.uint8)
    b = np.clip(a.astype(np.float64) + rng.normal(0.0, 20.0, a.shape), 0, 255)
    return a, b.astype(np.uint8)


def smooth_pair_256(seed=7):
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(256, 256, 3)).astype(np.float64)
    smooth = gaussian_filter(base, sigma=(6, 6, 0))
    smooth = 255 * (smooth - smooth.min()) / (smooth.max() - smooth.min())
    a = smooth.astype(np.uint8)
    b = np.clip(smooth + rng.normal(0, 10, smooth.shape), 0, 255).astype(np.uint8)
    return a, b


def brute_force_ssim(a, b):
    """Direct windowed SSIM: explicit loops over every valid 11x11 window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    win, sigma, dyn = 11, 1.5, 255.0
    c1, c2 = (0.01 * dyn) ** 2, (0.03 * dyn) ** 2
    offsets = np.arange(win) - (win - 1) / 2.0
    k1d = np.exp(-(offsets ** 2) / (2 * sigma ** 2))
    k1d /= k1d.sum()
    w = np.outer(k1d, k1d)
    h, wd, channels = a.shape
    per_channel = []
    for ch in range(channels):
        values = []
        for i in range(h - win + 1):
            for j in range(wd - win + 1):
                pa = a[i:i + win, j:j + win, ch]
                pb = b[i:i + win, j:j + win, ch]
                mx, my = (w * pa).sum(), (w * pb).sum()
                vx = (w * pa * pa).sum() - mx * mx
                vy = (w * pb * pb).sum() - my * my
                vxy = (w * pa * pb).sum() - mx * my
                values.append(((2 * mx * my + c1) * (2 * vxy + c2))
                              / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        per_channel.append(np.mean(values))
    return float(np.mean(per_channel))


def seeded_16x16(seed=42):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
    b = np.clip(a.astype(np.int64) + rng.integers(-30, 31, size=a.shape), 0, 255)
    return a, b.astype(np.uint8)


class TestMse:
    def test_identity(self):
        a, _ = seeded_16x16()
        assert metrics.mse(a, a) == 0.0

    def test_peak_error(self):
        white = np.full((8, 8, 3), 255, dtype=np.uint8)
        black = np.zeros((8, 8, 3), dtype=np.uint8)
        assert metrics.mse(white, black) == 65025.0

    def test_unit_error(self):
        a = np.full((8, 8, 3), 128, dtype=np.uint8)
        b = np.full((8, 8, 3), 127, dtype=np.uint8)
        assert metrics.mse(a, b) == 1.0

    def test_symmetry(self):
        a, b = seeded_16x16(3)
        assert metrics.mse(a, b) == metrics.mse(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            metrics.mse(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestPsnr:
    def test_peak_error_is_zero_db(self):
        white = np.full((8, 8, 3), 255, dtype=np.uint8)
        black = np.zeros((8, 8, 3), dtype=np.uint8)
        assert metrics.psnr(white, black) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_against_reported_mse(self):
        # 10*log10(255^2 / 74.6082); the figure a per-image averaging
        # convention reproduces, unlike plugging the mean MSE back in.
        assert 10 * math.log10(255 ** 2 / 74.6082) == pytest.approx(29.403, abs=1e-3)

    def test_identical_images_hit_cap(self):
        a, _ = seeded_16x16()
        assert metrics.psnr(a, a) == metrics.PSNR_CAP_DB

    def test_consistent_with_mse(self):
        a, b = seeded_16x16(9)
        expected = 10 * math.log10(255 ** 2 / metrics.mse(a, b))
        assert metrics.psnr(a, b) == pytest.approx(expected, abs=1e-6)

    def test_strictly_decreasing_in_mse(self):
        a = np.full((8, 8, 3), 100, dtype=np.uint8)
        errors = [metrics.psnr(a, a + np.uint8(d)) for d in (1, 2, 5, 9)]
        assert all(x > y for x, y in zip(errors, errors[1:]))


class TestSsim:
    def test_identity(self):
        a, _ = seeded_16x16()
        assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        a, b = seeded_16x16(5)
        assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-12)

    def test_brute_force_oracle_16x16(self):
        a, b = seeded_16x16()
        assert metrics.ssim(a, b) == pytest.approx(brute_force_ssim(a, b), abs=1e-6)

    def test_brute_force_oracle_grayscale(self):
        rng = np.random.default_rng(11)
        a = rng.integers(0, 256, size=(14, 18)).astype(np.uint8)
        b = rng.integers(0, 256, size=(14, 18)).astype(np.uint8)
        assert metrics.ssim(a, b) == pytest.approx(brute_force_ssim(a, b), abs=1e-6)

    def test_window_larger_than_image(self):
        with pytest.raises(ValidationError, match="window"):
            metrics.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestMsSsim:
    def test_identity(self):
        a, _ = noise_pair_256()
        assert metrics.ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_bounded_by_one(self):
        a, b = noise_pair_256()
        assert metrics.ms_ssim(a, b) <= 1.0

    def test_reference_oracle_noise_pair(self):
        a, b = noise_pair_256(123)
        assert metrics.ms_ssim(a, b) == pytest.approx(
            MSSSIM_ORACLE_NOISE_SEED123, abs=1e-4)

    def test_reference_oracle_smooth_pair(self):
        a, b = smooth_pair_256(7)
        assert metrics.ms_ssim(a, b) == pytest.approx(
            MSSSIM_ORACLE_SMOOTH_SEED7, abs=1e-4)

    def test_too_small_rejected(self):
        img = np.zeros((128, 128, 3), dtype=np.uint8)
        with pytest.raises(ValidationError, match="multiscale"):
            metrics.ms_ssim(img, img)


@pytest.fixture(scope="module")
def unit_meter():
    return load_lpips_meter(allow_uncalibrated=True,
                            feature_spec=FeatureExtractorSpec(
                                backbone="residual_classifier_random", layer="stage3"))


class TestLpips:
    def test_identity_zero(self, unit_meter):
        a, _ = seeded_16x16()
        a = np.repeat(np.repeat(a, 4, axis=0), 4, axis=1)  # 64x64 for the backbone
        assert metrics.lpips(a, a, unit_meter) == 0.0

    def test_nonnegative(self, unit_meter):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        b = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        assert metrics.lpips(a, b, unit_meter) >= 0.0

    def test_monotone_in_noise_amplitude(self, unit_meter):
        rng = np.random.default_rng(2)
        base = rng.integers(0, 256, (64, 64, 3)).astype(np.float64)
        noise = rng.normal(0, 1, base.shape)
        small = np.clip(base + 0.05 * 127.5 * noise, 0, 255).astype(np.uint8)
        large = np.clip(base + 0.5 * 127.5 * noise, 0, 255).astype(np.uint8)
        a = base.astype(np.uint8)
        assert metrics.lpips(a, large, unit_meter) > metrics.lpips(a, small, unit_meter)

    def test_missing_weights_without_fallback_flag(self, monkeypatch):
        monkeypatch.delenv(LPIPS_WEIGHTS_ENV, raising=False)
        with pytest.raises(ConfigError, match="fallback"):
            load_lpips_meter(allow_uncalibrated=False)

    def test_calibrated_weights_roundtrip(self, tmp_path, unit_meter):
        rng = np.random.default_rng(3)
        weights = {s: rng.uniform(0, 2, size=unit_meter.extractor.stage_channels(s))
                   for s in ("stage1", "stage2", "stage3", "stage4")}
        path = tmp_path / "lpips_weights.npz"
        save_stage_weights(weights, path)
        meter = load_lpips_meter(weights_path=path,
                                 feature_spec=FeatureExtractorSpec(
                                     backbone="residual_classifier_random", layer="stage3"))
        assert meter.calibrated
        a = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        b = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        assert meter.distance(a, b) > 0.0
        assert meter.distance(a, a) == 0.0

    def test_env_var_supplies_weights(self, tmp_path, monkeypatch, unit_meter):
        weights = {s: np.ones(unit_meter.extractor.stage_channels(s))
                   for s in ("stage1", "stage2", "stage3", "stage4")}
        path = tmp_path / "w.npz"
        save_stage_weights(weights, path)
        monkeypatch.setenv(LPIPS_WEIGHTS_ENV, str(path))
        meter = load_lpips_meter()
        assert meter.calibrated

    def test_negative_weights_rejected(self, unit_meter, tmp_path):
        weights = {s: np.ones(unit_meter.extractor.stage_channels(s))
                   for s in ("stage1", "stage2", "stage3", "stage4")}
        weights["stage2"] = -weights["stage2"]
        path = tmp_path / "bad.npz"
        save_stage_weights(weights, path)
        with pytest.raises(ValidationError, match="nonnegative"):
            load_lpips_meter(weights_path=path)

    def test_wrong_channel_count_rejected(self, unit_meter):
        bad = {s: torch.ones(8) for s in ("stage1", "stage2", "stage3", "stage4")}
        with pytest.raises(ValidationError, match="shape"):
            LpipsMeter(unit_meter.extractor, bad, calibrated=True)


@pytest.fixture(scope="module")
def identity_dataset(tmp_path_factory):
    """192x192 fixture whose source images equal their visible partners."""
    root = tmp_path_factory.mktemp("identity_ds")
    make_paired_tree(root, {"train": [("t", 1)], "test": [("e", 3)]},
                     image_size=192, seed=50)
    for split in ("train", "test"):
        vis_dir = root / split / "visible"
        for p in sorted((root / split / "source").iterdir()):
            (vis_dir / p.name).write_bytes(p.read_bytes())
    return root


class TestEvaluateDataset:
    def test_identity_generator_perfect_scores(self, identity_dataset, unit_meter):
        manifest = scan_paired_dataset(identity_dataset)
        report = metrics.evaluate_dataset(torch.nn.Identity(), manifest, unit_meter,
                                          image_size=192)
        assert report.aggregate["mse"] <= 1.0
        assert report.aggregate["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert report.aggregate["ms_ssim"] == pytest.approx(1.0, abs=1e-9)
        assert report.aggregate["lpips"] == pytest.approx(0.0, abs=1e-12)
        assert all(row["psnr_capped"] for row in report.per_image)
        assert not report.lpips_calibrated

    def test_empty_split_rejected(self, unit_meter):
        from pcsgan.data import DatasetManifest
        manifest = DatasetManifest(layout="generic_paired", train=(), test=())
        with pytest.raises(EmptyDatasetError):
            metrics.evaluate_dataset(torch.nn.Identity(), manifest, unit_meter)

    def test_aggregate_equals_column_means(self, identity_dataset, unit_meter):
        manifest = scan_paired_dataset(identity_dataset)
        report = metrics.evaluate_dataset(torch.nn.Identity(), manifest, unit_meter,
                                          image_size=192)
        for column in metrics.METRIC_COLUMNS:
            mean = sum(r[column] for r in report.per_image) / len(report.per_image)
            denom = max(abs(mean), 1.0)
            assert abs(report.aggregate[column] - mean) / denom <= 1e-9

    def test_rows_follow_manifest_order(self, identity_dataset, unit_meter):
        manifest = scan_paired_dataset(identity_dataset)
        report = metrics.evaluate_dataset(torch.nn.Identity(), manifest, unit_meter,
                                          image_size=192)
        assert [r["pair_id"] for r in report.per_image] == \
            [s.source_path.stem for s in manifest.test]

    def test_report_export(self, identity_dataset, unit_meter, tmp_path):
        manifest = scan_paired_dataset(identity_dataset)
        report = metrics.evaluate_dataset(torch.nn.Identity(), manifest, unit_meter,
                                          image_size=192)
        csv_path = tmp_path / "report.csv"
        json_path = tmp_path / "report.json"
        report.write_csv(csv_path)
        report.write_json(json_path)
        header = csv_path.read_text().splitlines()[0].split(",")
        assert header == list(metrics.METRIC_COLUMNS)
        import json as json_mod
        payload = json_mod.loads(json_path.read_text())
        assert payload["aggregation_note"] == "per-image means"
        assert len(payload["per_image"]) == 3
