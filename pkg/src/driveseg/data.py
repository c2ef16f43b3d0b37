"""Dataset ingestion and the synthetic toy generator.

Real data is manifest-driven: a UTF-8 tab-separated file with one
``relative_image_path<TAB>relative_mask_path<TAB>split`` line per sample
(split in train/val/test) normalizes the differing on-disk layouts of the
supported datasets. Masks are grayscale-thresholded at >127; mask resizing
is nearest-neighbor only so labels stay binary.

The toy generator builds small indoor-corridor-like scenes: a textured
floor polygon bounded by a jagged horizon, with occluder rectangles,
speckle noise, and per-image brightness jitter. It is deterministic by
seed and serves as the stand-in dataset for desk-scale tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core import DataError, DecodeError, FormatError, ShapeError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

# Luminance weights for RGB -> gray conversion (ITU-R 601).
LUMA = (0.299, 0.587, 0.114)
MASK_THRESHOLD = 127

TOY_SEGMENTS = 8


@dataclass
class DataConfig:
    source: str = "toy"                  # "toy" or "manifest"
    root: str = ""
    manifest: str = ""
    norm_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    norm_std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    hflip: bool = False                  # train-time horizontal flip
    brightness_jitter: float = 0.0       # train-time multiplicative jitter
    toy_count: int = 8
    toy_val_count: int = 4
    toy_test_count: int = 4
    toy_size: tuple[int, int] = (64, 64)
    toy_seed: int = 7


@dataclass
class SampleRecord:
    image_path: Path
    mask_path: Path
    split: str


@dataclass
class Batch:
    images: torch.Tensor   # [B, 3, H, W], standardized
    masks: torch.Tensor    # [B, 1, H, W], values exactly 0 or 1


def load_manifest(root: str | Path, manifest_file: str | Path) -> list[SampleRecord]:
    """Read and validate a manifest; both referenced files must exist."""
    root = Path(root)
    manifest_file = Path(manifest_file)
    if not manifest_file.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_file}")
    records: list[SampleRecord] = []
    seen: dict[str, str] = {}
    text = manifest_file.read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(
                f"{manifest_file}:{lineno}: expected 3 tab-separated fields, "
                f"got {len(parts)}")
        image_rel, mask_rel, split = (p.strip() for p in parts)
        if split not in SPLITS:
            raise FormatError(
                f"{manifest_file}:{lineno}: split must be one of {SPLITS}, "
                f"got {split!r}")
        if image_rel in seen and seen[image_rel] != split:
            raise FormatError(
                f"{manifest_file}:{lineno}: {image_rel!r} appears in both "
                f"{seen[image_rel]!r} and {split!r} splits")
        seen[image_rel] = split
        image_path = root / image_rel
        mask_path = root / mask_rel
        for p in (image_path, mask_path):
            if not p.is_file():
                raise FileNotFoundError(
                    f"{manifest_file}:{lineno}: missing file {p}")
        records.append(SampleRecord(image_path, mask_path, split))
    counts = split_counts(records)
    if not records:
        log.warning("manifest %s is empty", manifest_file)
    else:
        log.info("manifest %s: train=%d val=%d test=%d", manifest_file,
                 counts["train"], counts["val"], counts["test"])
    return records


def split_counts(records: list[SampleRecord]) -> dict[str, int]:
    counts = {s: 0 for s in SPLITS}
    for rec in records:
        counts[rec.split] += 1
    return counts


def decode_mask(raw: np.ndarray) -> np.ndarray:
    """Threshold a decoded image array into a binary {0, 1} mask.

    Multi-channel input is converted to luminance first; pixels brighter
    than 127 become foreground.
    """
    arr = np.asarray(raw)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(np.float64) @ np.asarray(LUMA)
    elif arr.ndim != 2:
        raise DecodeError(f"mask must be 2-D or 3-D, got shape {arr.shape}")
    return (arr > MASK_THRESHOLD).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an RGB uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


def read_mask(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return decode_mask(np.asarray(img))
    except FileNotFoundError:
        raise
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"cannot decode mask {path}: {exc}") from exc


def resize_pair(image: np.ndarray, mask: np.ndarray,
                size_hw: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Resize image bilinearly and mask with nearest-neighbor."""
    h, w = size_hw
    if image.shape[:2] != (h, w):
        image = np.asarray(
            Image.fromarray(image).resize((w, h), Image.BILINEAR))
    if mask.shape != (h, w):
        mask = np.asarray(
            Image.fromarray(mask.astype(np.uint8)).resize((w, h), Image.NEAREST))
    return image, mask


class ManifestDataset:
    """Lazily decoded samples for one split of a manifest."""

    def __init__(self, records: list[SampleRecord], split: str,
                 size_hw: tuple[int, int]):
        self.records = [r for r in records if r.split == split]
        self.size_hw = tuple(size_hw)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self.records[idx]
        image = read_image(rec.image_path)
        mask = read_mask(rec.mask_path)
        if image.shape[:2] != mask.shape:
            raise ShapeError(
                f"{rec.image_path}: image {image.shape[:2]} vs mask {mask.shape}")
        return resize_pair(image, mask, self.size_hw)


class ToyDataset:
    """In-memory synthetic samples with their horizon knots exposed."""

    def __init__(self, images: list[np.ndarray], masks: list[np.ndarray],
                 knots: list[tuple[np.ndarray, np.ndarray]]):
        self.images = images
        self.masks = masks
        self.knots = knots

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        return self.images[idx], self.masks[idx]


def horizon_heights(knots_x: np.ndarray, knots_y: np.ndarray,
                    width: int) -> np.ndarray:
    """Piecewise-linear horizon evaluated at every column center."""
    return np.interp(np.arange(width) + 0.5, knots_x, knots_y)


def make_toy_dataset(n: int, size: tuple[int, int], seed: int) -> ToyDataset:
    """Generate ``n`` floor-segmentation scenes, deterministic by seed.

    The floor is everything strictly below a jagged piecewise-linear
    horizon; knot heights get a 1/3-pixel offset so no pixel center ever
    falls exactly on the curve. Foreground fraction lands in 20-80% by
    construction of the knot height band.
    """
    h, w = size
    if h % 32 or w % 32:
        raise ShapeError(f"toy size {size} must be divisible by 32")
    rng = np.random.default_rng(seed)
    images, masks, knots = [], [], []
    rows = np.arange(h)[:, None] + 0.5
    for _ in range(n):
        kx = np.linspace(0.0, float(w), TOY_SEGMENTS + 1)
        ky = rng.integers(int(0.35 * h), int(0.60 * h), size=TOY_SEGMENTS + 1) \
            + 1.0 / 3.0
        horizon = horizon_heights(kx, ky, w)
        mask = (rows > horizon[None, :]).astype(np.uint8)

        image = np.empty((h, w, 3), dtype=np.float64)
        gradient = np.linspace(40.0, 90.0, h)[:, None]
        image[...] = gradient[..., None]
        stripe = 150.0 + 18.0 * (((np.arange(h)[:, None] // 4)
                                  + (np.arange(w)[None, :] // 8)) % 2)
        floor = mask.astype(bool)
        image[floor] = stripe[..., None].repeat(3, axis=2)[floor]
        # Give the floor a slight warm tint so channels carry signal.
        image[..., 0][floor] += 12.0
        image[..., 2][floor] -= 12.0
        image += rng.normal(0.0, 8.0, size=(h, w, 3))
        for _ in range(int(rng.integers(1, 4))):
            oh = int(rng.integers(h // 10, h // 5 + 1))
            ow = int(rng.integers(w // 10, w // 5 + 1))
            top = int(rng.integers(0, h - oh))
            left = int(rng.integers(0, w - ow))
            shade = rng.uniform(30.0, 220.0, size=3)
            image[top:top + oh, left:left + ow] = shade
        image *= rng.uniform(0.75, 1.25)
        images.append(np.clip(image, 0, 255).astype(np.uint8))
        masks.append(mask)
        knots.append((kx, ky))
    return ToyDataset(images, masks, knots)


@dataclass
class DatasetBundle:
    train: object
    val: object
    test: object = field(default_factory=list)

    def non_empty(self, *names: str) -> None:
        for name in names:
            if len(getattr(self, name)) == 0:
                raise DataError(f"{name} split is empty")


def build_dataset(data_cfg: DataConfig, input_size: tuple[int, int]) -> DatasetBundle:
    """Assemble train/val/test datasets from a DataConfig."""
    if data_cfg.source == "toy":
        h, w = data_cfg.toy_size
        seed = data_cfg.toy_seed
        return DatasetBundle(
            train=make_toy_dataset(data_cfg.toy_count, (h, w), seed),
            val=make_toy_dataset(data_cfg.toy_val_count, (h, w), seed + 1),
            test=make_toy_dataset(data_cfg.toy_test_count, (h, w), seed + 2),
        )
    if data_cfg.source == "manifest":
        records = load_manifest(data_cfg.root, data_cfg.manifest)
        return DatasetBundle(
            train=ManifestDataset(records, "train", input_size),
            val=ManifestDataset(records, "val", input_size),
            test=ManifestDataset(records, "test", input_size),
        )
    raise DataError(f"unknown data source {data_cfg.source!r}")


def to_batch(samples: list[tuple[np.ndarray, np.ndarray]], cfg: DataConfig,
             dtype: torch.dtype = torch.float32,
             rng: np.random.Generator | None = None) -> Batch:
    """Stack samples into a standardized Batch; rng enables augmentation."""
    images, masks = [], []
    mean = np.asarray(cfg.norm_mean, dtype=np.float64)
    std = np.asarray(cfg.norm_std, dtype=np.float64)
    for image, mask in samples:
        img = image.astype(np.float64) / 255.0
        msk = mask.astype(np.float64)
        if rng is not None:
            if cfg.hflip and rng.random() < 0.5:
                img = img[:, ::-1]
                msk = msk[:, ::-1]
            if cfg.brightness_jitter > 0.0:
                lo = 1.0 - cfg.brightness_jitter
                hi = 1.0 + cfg.brightness_jitter
                img = np.clip(img * rng.uniform(lo, hi), 0.0, 1.0)
        img = (img - mean) / std
        images.append(np.ascontiguousarray(img.transpose(2, 0, 1)))
        masks.append(msk[None, :, :])
    return Batch(
        images=torch.as_tensor(np.stack(images), dtype=dtype),
        masks=torch.as_tensor(np.stack(masks), dtype=dtype),
    )


def iterate_batches(dataset, cfg: DataConfig, batch_size: int,
                    dtype: torch.dtype = torch.float32,
                    shuffle_rng: np.random.Generator | None = None,
                    augment_rng: np.random.Generator | None = None):
    """Yield Batches over a dataset; order is deterministic given the rng."""
    order = np.arange(len(dataset))
    if shuffle_rng is not None:
        shuffle_rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield to_batch([dataset[int(i)] for i in idx], cfg, dtype, augment_rng)
