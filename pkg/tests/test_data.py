from fractions import Fraction

import numpy as np
import pytest
import torch
from PIL import Image

from driveseg import DataError, ShapeError
from driveseg.core import DecodeError, FormatError
from driveseg.data import (DataConfig, build_dataset, decode_mask,
                           iterate_batches, load_manifest, make_toy_dataset,
                           read_mask, resize_pair, split_counts, to_batch)


def write_png(path, array):
    Image.fromarray(array).save(path)


@pytest.fixture
def manifest_tree(tmp_path):
    root = tmp_path / "data"
    (root / "img").mkdir(parents=True)
    (root / "msk").mkdir()
    lines = []
    for i, split in enumerate(["train", "train", "val", "test"]):
        image = (np.random.default_rng(i).integers(0, 255, (32, 32, 3))
                 .astype(np.uint8))
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[16:] = 255
        write_png(root / "img" / f"{i}.png", image)
        write_png(root / "msk" / f"{i}.png", mask)
        lines.append(f"img/{i}.png\tmsk/{i}.png\t{split}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return root, manifest


class TestManifest:
    def test_counts_per_split(self, manifest_tree):
        root, manifest = manifest_tree
        records = load_manifest(root, manifest)
        assert split_counts(records) == {"train": 2, "val": 1, "test": 1}

    def test_empty_manifest_warns(self, tmp_path, caplog):
        manifest = tmp_path / "empty.tsv"
        manifest.write_text("")
        with caplog.at_level("WARNING"):
            records = load_manifest(tmp_path, manifest)
        assert records == []
        assert "empty" in caplog.text

    def test_two_field_line_rejected_with_number(self, tmp_path):
        write_png(tmp_path / "a.png", np.zeros((8, 8, 3), np.uint8))
        write_png(tmp_path / "b.png", np.zeros((8, 8), np.uint8))
        manifest = tmp_path / "bad.tsv"
        manifest.write_text("a.png\tb.png\ttrain\nc.png\td.png\n")
        with pytest.raises(FormatError, match=":2:"):
            load_manifest(tmp_path, manifest)

    def test_unknown_split_rejected(self, tmp_path):
        manifest = tmp_path / "bad.tsv"
        manifest.write_text("a.png\tb.png\tdev\n")
        with pytest.raises(FormatError, match="split"):
            load_manifest(tmp_path, manifest)

    def test_missing_file_raises(self, tmp_path):
        manifest = tmp_path / "m.tsv"
        manifest.write_text("missing.png\talso.png\ttrain\n")
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path, manifest)

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path, tmp_path / "nope.tsv")

    def test_sample_in_two_splits_rejected(self, manifest_tree):
        root, manifest = manifest_tree
        text = manifest.read_text() + "img/0.png\tmsk/0.png\tval\n"
        manifest.write_text(text)
        with pytest.raises(FormatError, match="both"):
            load_manifest(root, manifest)


class TestDecodeMask:
    def test_all_white_is_all_ones(self):
        assert decode_mask(np.full((4, 4), 255, np.uint8)).all()

    def test_threshold_boundary(self):
        arr = np.array([[127, 128]], dtype=np.uint8)
        assert decode_mask(arr).tolist() == [[0, 1]]

    def test_rgb_fixture_matches_pixelwise_oracle(self):
        rgb = np.array([
            [[255, 255, 255], [0, 0, 0], [100, 120, 90], [200, 210, 190]],
            [[127, 127, 127], [128, 128, 128], [255, 0, 0], [0, 255, 0]],
            [[0, 0, 255], [130, 130, 120], [60, 60, 60], [250, 250, 250]],
            [[10, 240, 10], [240, 10, 240], [90, 90, 200], [128, 127, 129]],
        ], dtype=np.uint8)
        # luminance = 0.299 R + 0.587 G + 0.114 B, computed by hand per pixel
        expected = [[1, 0, 0, 1],
                    [0, 1, 0, 1],
                    [0, 1, 0, 1],
                    [1, 0, 0, 1]]  # (128,127,129) -> 127.527
        got = decode_mask(rgb)
        oracle = np.zeros((4, 4), dtype=np.uint8)
        for i in range(4):
            for j in range(4):
                r, g, b = (float(v) for v in rgb[i, j])
                oracle[i, j] = 1 if 0.299 * r + 0.587 * g + 0.114 * b > 127 else 0
        assert got.tolist() == oracle.tolist() == expected

    def test_unreadable_file(self, tmp_path):
        bogus = tmp_path / "not_an_image.png"
        bogus.write_bytes(b"definitely not a png")
        with pytest.raises(DecodeError):
            read_mask(bogus)

    def test_wrong_rank_rejected(self):
        with pytest.raises(DecodeError):
            decode_mask(np.zeros((2, 2, 2, 2)))


def exact_horizon(kx, ky_int, x):
    """Piecewise-linear horizon via exact rationals; knot heights are k + 1/3."""
    for s in range(len(kx) - 1):
        x0, x1 = Fraction(int(kx[s])), Fraction(int(kx[s + 1]))
        if x0 <= x <= x1:
            y0 = Fraction(int(ky_int[s])) + Fraction(1, 3)
            y1 = Fraction(int(ky_int[s + 1])) + Fraction(1, 3)
            t = (x - x0) / (x1 - x0)
            return y0 + (y1 - y0) * t
    raise AssertionError(f"{x} outside knot range")


class TestToyDataset:
    def test_deterministic_by_seed(self):
        a = make_toy_dataset(4, (64, 64), seed=7)
        b = make_toy_dataset(4, (64, 64), seed=7)
        for (ia, ma), (ib, mb) in zip(zip(a.images, a.masks),
                                      zip(b.images, b.masks)):
            assert np.array_equal(ia, ib)
            assert np.array_equal(ma, mb)

    def test_different_seeds_differ(self):
        a = make_toy_dataset(2, (64, 64), seed=1)
        b = make_toy_dataset(2, (64, 64), seed=2)
        assert not np.array_equal(a.images[0], b.images[0])

    def test_foreground_fraction_in_band(self):
        ds = make_toy_dataset(8, (64, 64), seed=3)
        assert len(ds) == 8
        for mask in ds.masks:
            frac = mask.mean()
            assert 0.2 <= frac <= 0.8

    def test_mask_matches_exact_rational_rasterization(self):
        """Independent oracle: point-below-curve test in exact arithmetic."""
        ds = make_toy_dataset(2, (64, 64), seed=11)
        for mask, (kx, ky) in zip(ds.masks, ds.knots):
            ky_int = np.round(ky - 1.0 / 3.0).astype(int)
            for i in range(64):
                for j in range(64):
                    h = exact_horizon(kx, ky_int, Fraction(2 * j + 1, 2))
                    below = Fraction(2 * i + 1, 2) > h
                    assert mask[i, j] == int(below), (i, j)

    def test_images_uint8_rgb(self):
        ds = make_toy_dataset(2, (64, 64), seed=5)
        for image in ds.images:
            assert image.dtype == np.uint8
            assert image.shape == (64, 64, 3)

    def test_size_must_be_divisible(self):
        with pytest.raises(ShapeError):
            make_toy_dataset(1, (50, 50), seed=0)


class TestBatching:
    def test_mask_resize_nearest_preserves_binarity(self):
        mask = (np.random.default_rng(0).random((64, 64)) > 0.5).astype(np.uint8)
        image = np.zeros((64, 64, 3), np.uint8)
        _, resized = resize_pair(image, mask, (32, 32))
        assert set(np.unique(resized)) <= {0, 1}

    def test_batch_standardization(self):
        cfg = DataConfig(norm_mean=(0.5, 0.5, 0.5), norm_std=(0.5, 0.5, 0.5))
        image = np.full((32, 32, 3), 255, np.uint8)
        mask = np.ones((32, 32), np.uint8)
        batch = to_batch([(image, mask)], cfg)
        assert batch.images.shape == (1, 3, 32, 32)
        assert batch.masks.shape == (1, 1, 32, 32)
        assert torch.allclose(batch.images, torch.ones_like(batch.images))
        assert set(batch.masks.unique().tolist()) <= {0.0, 1.0}

    def test_iteration_order_deterministic_by_seed(self):
        ds = make_toy_dataset(6, (32, 32), seed=0)
        cfg = DataConfig()

        def collect(seed):
            rng = np.random.default_rng(seed)
            return [b.images.sum().item()
                    for b in iterate_batches(ds, cfg, 2, shuffle_rng=rng)]

        assert collect(1) == collect(1)
        assert collect(1) != collect(2)

    def test_hflip_augmentation_flips_pair(self):
        cfg = DataConfig(hflip=True)
        image = np.zeros((32, 32, 3), np.uint8)
        image[:, :16] = 255
        mask = np.zeros((32, 32), np.uint8)
        mask[:, :16] = 1
        rng = np.random.default_rng(0)  # first random() draw < 0.5 flips
        batch = to_batch([(image, mask)], cfg, rng=rng)
        img = batch.images[0, 0].numpy()
        msk = batch.masks[0, 0].numpy()
        assert (img[:, :16] < img[:, 16:]).all() == bool(msk[0, 16] > msk[0, 0])
        assert np.array_equal(msk[:, ::-1], np.where(mask == 1, 1.0, 0.0)) \
            or np.array_equal(msk, mask.astype(float))


class TestBuildDataset:
    def test_toy_bundle(self):
        cfg = DataConfig(toy_count=3, toy_val_count=2, toy_test_count=1,
                         toy_size=(32, 32))
        bundle = build_dataset(cfg, (32, 32))
        assert (len(bundle.train), len(bundle.val), len(bundle.test)) == (3, 2, 1)
        bundle.non_empty("train", "val")

    def test_manifest_bundle(self, manifest_tree):
        root, manifest = manifest_tree
        cfg = DataConfig(source="manifest", root=str(root),
                         manifest=str(manifest))
        bundle = build_dataset(cfg, (32, 32))
        assert len(bundle.train) == 2
        image, mask = bundle.train[0]
        assert image.shape == (32, 32, 3)
        assert set(np.unique(mask)) <= {0, 1}

    def test_empty_split_raises(self):
        cfg = DataConfig(toy_count=0, toy_val_count=1, toy_test_count=1,
                         toy_size=(32, 32))
        bundle = build_dataset(cfg, (32, 32))
        with pytest.raises(DataError, match="train"):
            bundle.non_empty("train")

    def test_unknown_source(self):
        with pytest.raises(DataError):
            build_dataset(DataConfig(source="webcam"), (32, 32))
