"""Datasets: directory ingestion, the synthetic blob generator and stratified splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, SplitError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")
SYNTH_CLASSES = ("tumor", "notumor")
# directory names treated as the negative class; it always gets the last label
NO_TUMOR_NAMES = ("notumor", "no_tumor", "no-tumor", "normal", "healthy")


@dataclass
class LabeledDataset:
    """Images (N×C×H×W float32 in [0,1]) with integer labels indexing ``class_names``."""

    images: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    skipped: int = 0
    paths: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def counts(self) -> tuple[int, ...]:
        return tuple(int(np.sum(self.labels == k)) for k in range(len(self.class_names)))

    def subset(self, index) -> LabeledDataset:
        index = np.asarray(index, dtype=np.int64)
        paths = [self.paths[i] for i in index] if self.paths else []
        return LabeledDataset(self.images[index], self.labels[index], self.class_names, 0, paths)

    def with_channels(self, channels: int) -> LabeledDataset:
        """Replicate a grayscale channel for models expecting RGB input."""
        if self.images.shape[1] == channels:
            return self
        if self.images.shape[1] != 1:
            raise ContractError(f"cannot adapt {self.images.shape[1]} channels to {channels}")
        images = np.repeat(self.images, channels, axis=1)
        return LabeledDataset(images, self.labels, self.class_names, self.skipped, self.paths)


# -- ingestion ----------------------------------------------------------------
def load_image(path: Path, image_size: tuple[int, int]) -> np.ndarray:
    """Read an 8-bit image as grayscale, resize bilinearly, scale to [0,1]."""
    with Image.open(path) as img:
        gray = img.convert("L")
        h, w = image_size
        if gray.size != (w, h):
            gray = gray.resize((w, h), Image.BILINEAR)
        return np.asarray(gray, dtype=np.float32) / 255.0


def ingest_dataset(root, image_size=(64, 64), class_names: tuple[str, ...] | None = None) -> LabeledDataset:
    """Load ``<root>/<class>/*.pgm|*.png``.

    Unless ``class_names`` is given, classes are the sorted subdirectory names
    with any no-tumor directory moved last, so tumor classes keep label 0.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    if class_names is None:
        class_names = tuple(sorted((p.name for p in root.iterdir() if p.is_dir()),
                                   key=lambda name: (name.lower() in NO_TUMOR_NAMES, name)))
    if len(class_names) < 2:
        raise ContractError(f"need at least two class directories under {root}, found {list(class_names)}")
    images, labels, paths = [], [], []
    skipped = 0
    for label, name in enumerate(class_names):
        class_dir = root / name
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) \
            if class_dir.is_dir() else []
        loaded = 0
        for path in files:
            try:
                images.append(load_image(path, image_size))
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                skipped += 1
                continue
            labels.append(label)
            paths.append(str(path))
            loaded += 1
        if loaded == 0:
            raise ContractError(f"class {name!r} under {root} has no readable images")
        log.info("%s/%s: %d images", root.name, name, loaded)
    arr = np.stack(images)[:, None].astype(np.float32)
    return LabeledDataset(arr, np.asarray(labels, dtype=np.int64), tuple(class_names), skipped, paths)


def write_dataset(ds: LabeledDataset, root) -> None:
    """Write a dataset as 8-bit PGM files in the ingestion layout."""
    root = Path(root)
    for name in ds.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    counters = [0] * len(ds.class_names)
    for img, label in zip(ds.images, ds.labels):
        name = ds.class_names[label]
        pixels = np.clip(np.rint(img[0] * 255), 0, 255).astype(np.uint8)
        Image.fromarray(pixels, mode="L").save(root / name / f"{name}_{counters[label]:05d}.pgm")
        counters[label] += 1


# -- synthetic data -------------------------------------------------------------
@dataclass(frozen=True)
class DomainStyle:
    noise_low: float
    noise_high: float
    peak_low: float
    peak_high: float


TARGET_STYLE = DomainStyle(0.0, 0.2, 0.7, 1.0)
# brighter, noisier background with stronger blobs
SOURCE_STYLE = DomainStyle(0.1, 0.35, 0.85, 1.0)


def _blob_image(rng: np.random.Generator, size: int, style: DomainStyle, tumor: bool) -> np.ndarray:
    img = rng.uniform(style.noise_low, style.noise_high, size=(size, size))
    if tumor:
        scale = size / 64.0
        sigma = rng.uniform(2.5, 6.0) * scale
        margin = min(2 * sigma, size / 2 - 1)
        cy, cx = rng.uniform(margin, size - 1 - margin, size=2)
        peak = rng.uniform(style.peak_low, style.peak_high)
        yy, xx = np.mgrid[0:size, 0:size]
        img = img + peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    return np.clip(img, 0.0, 1.0)


def synth_generate(counts: tuple[int, int] = (500, 400), size: int = 64, seed: int = 0,
                   domain: str = "target") -> LabeledDataset:
    """Noise images, half of them (by ``counts``) carrying a bright Gaussian blob.

    ``counts`` is (tumor, notumor). The ``source`` domain uses a noisier,
    brighter background and stronger blobs than ``target``.
    """
    if min(counts) < 1:
        raise ContractError(f"every class needs at least one sample, got {counts}")
    style = {"target": TARGET_STYLE, "source": SOURCE_STYLE}.get(domain)
    if style is None:
        raise ContractError(f"domain must be 'source' or 'target', got {domain!r}")
    rng = np.random.default_rng([seed, 0 if domain == "target" else 1])
    labels = np.concatenate([np.zeros(counts[0], np.int64), np.ones(counts[1], np.int64)])
    images = np.stack([_blob_image(rng, size, style, lab == 0) for lab in labels])
    return LabeledDataset(images[:, None].astype(np.float32), labels, SYNTH_CLASSES)


# -- splitting --------------------------------------------------------------------
def split(ds: LabeledDataset, ratio: float = 0.8, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split: per class, seeded shuffle, first ⌊ratio·count⌋ go to train."""
    if not 0 < ratio < 1:
        raise ContractError(f"split ratio must lie in (0,1), got {ratio}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in range(len(ds.class_names)):
        idx = np.flatnonzero(ds.labels == k)
        if len(idx) < 2:
            raise SplitError(f"class {ds.class_names[k]!r} has {len(idx)} samples; need at least 2")
        idx = rng.permutation(idx)
        n_train = int(np.floor(ratio * len(idx)))
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(test_idx))


def truncate(ds: LabeledDataset, n: int, seed: int = 0) -> LabeledDataset:
    """Stratified subsample of ``n`` items, keeping class proportions (at least one per class)."""
    if n >= len(ds):
        return ds
    rng = np.random.default_rng(seed)
    keep = []
    counts = ds.counts()
    total = len(ds)
    for k, count in enumerate(counts):
        want = max(1, int(round(n * count / total)))
        idx = rng.permutation(np.flatnonzero(ds.labels == k))
        keep.append(idx[:want])
    return ds.subset(np.concatenate(keep))


def pixel_sum_oracle(ds: LabeledDataset) -> float:
    """Accuracy of the best single threshold on total image intensity."""
    sums = ds.images.reshape(len(ds), -1).sum(axis=1)
    order = np.argsort(sums)
    s, y = sums[order], ds.labels[order]
    # predict tumor (label 0) above the threshold; try every cut
    below_notumor = np.concatenate([[0], np.cumsum(y == 1)])
    above_tumor = np.concatenate([np.cumsum((y == 0)[::-1])[::-1], [0]])
    return float(np.max(below_notumor + above_tumor) / len(s))
