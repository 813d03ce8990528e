"""Long-tailed dataset construction, synthetic image generation, file IO, batching.

Class sizes follow an exponential decay from the head class: class k out of K
gets round(N * IR^(-(k-1)/(K-1))) samples, clamped to at least 1.

The synthetic generator stands in for radar-style imagery: each class is a
bright elongated blob with a class-specific orientation/aspect/offset template,
jittered per sample and multiplied by gamma-distributed speckle noise.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError

MAGIC = b"LTPOOL"
FORMAT_VERSION = 1
HIDDEN_LABEL = -1

# shape-parameter of the multiplicative gamma speckle (number of looks)
SPECKLE_LOOKS = 4.0


@dataclass
class ImageSample:
    id: int
    pixels: np.ndarray  # H x W float32 in [0, 1]
    label: Optional[int]


@dataclass
class UnlabeledSample:
    """Trainer-facing unlabeled record: deliberately carries no label field."""

    id: int
    pixels: np.ndarray


@dataclass
class LongTailSpec:
    head_count: int
    imbalance_ratio: float
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.imbalance_ratio < 1:
            raise ConfigError("imbalance_ratio must be >= 1")
        if self.head_count < 1:
            raise ConfigError("head_count must be >= 1")


@dataclass
class BatchPlan:
    batch_size: int = 16
    unlabeled_ratio: int = 7

    @property
    def unlabeled_batch_size(self) -> int:
        return self.batch_size * self.unlabeled_ratio


@dataclass
class DatasetSplit:
    labeled: list  # list[ImageSample], labels present
    unlabeled: list  # list[UnlabeledSample], no label field
    test: list  # list[ImageSample], balanced, labels present
    hidden_labels: dict = field(default_factory=dict)  # id -> true class, audit only
    num_classes: int = 0


def longtail_counts(spec: LongTailSpec) -> list[int]:
    """Per-class sample counts under exponential head-to-tail decay."""
    n, ir, k = spec.head_count, spec.imbalance_ratio, spec.num_classes
    counts = []
    for j in range(k):
        raw = n * ir ** (-j / (k - 1))
        counts.append(max(1, int(round(raw))))
    return counts


def _rng(*key) -> np.random.Generator:
    """Keyed generator: output is a pure function of the key tuple."""
    return np.random.default_rng(list(key))


def _class_template(class_idx: int) -> dict:
    """Deterministic per-class blob template (no RNG involved).

    Class identity is carried by features the augmentation pipeline preserves:
    the number of bright scatterers and their elongation. Orientation and
    placement are free per sample, since flips/rotations in training would
    otherwise relabel orientation-coded classes.
    """
    return {
        "n_blobs": 1 + class_idx // 2,
        "aspect": 2.2 if class_idx % 2 else 1.0,
        "sigma_short_frac": 0.045,
        "brightness": 0.55,
    }


def _render_blob(image_size, angle, sigma_long, sigma_short, center, brightness):
    s = image_size
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    dy = ys - center[0]
    dx = xs - center[1]
    lon = dx * math.cos(angle) + dy * math.sin(angle)
    lat = -dx * math.sin(angle) + dy * math.cos(angle)
    return brightness * np.exp(-0.5 * (lon / sigma_long) ** 2 - 0.5 * (lat / sigma_short) ** 2)


def synth_image(class_idx, sample_idx, num_classes, image_size, seed) -> np.ndarray:
    """One synthetic image, deterministic per (seed, class, index)."""
    t = _class_template(class_idx)
    rng = _rng(seed, 101, class_idx, sample_idx)
    s = float(image_size)
    c = (s - 1) / 2.0
    centers = []
    min_sep = 0.14 * s
    attempts = 0
    while len(centers) < t["n_blobs"]:
        cand = (c + rng.uniform(-0.28 * s, 0.28 * s), c + rng.uniform(-0.28 * s, 0.28 * s))
        if all(math.hypot(cand[0] - p[0], cand[1] - p[1]) >= min_sep for p in centers):
            centers.append(cand)
        attempts += 1
        if attempts % 50 == 0:  # keep placement terminating for crowded layouts
            min_sep *= 0.8
    img = np.zeros((image_size, image_size), dtype=np.float64)
    for center in centers:
        angle = rng.uniform(0.0, math.pi)
        sigma_short = s * t["sigma_short_frac"] * rng.uniform(0.85, 1.15)
        sigma_long = sigma_short * t["aspect"] * rng.uniform(0.85, 1.15)
        img += _render_blob(
            image_size, angle, sigma_long, sigma_short, center, t["brightness"]
        )
    # class-independent background clutter: dim, wide returns
    for _ in range(2):
        img += _render_blob(
            image_size,
            rng.uniform(0.0, math.pi),
            s * 0.12,
            s * 0.12,
            (rng.uniform(0, s - 1), rng.uniform(0, s - 1)),
            0.16,
        )
    speckle = rng.gamma(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS, size=img.shape)
    img = img * speckle
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_generate(num_classes, counts, image_size, seed, id_offset=0) -> list[ImageSample]:
    """Labeled pool with the given per-class counts."""
    if len(counts) != num_classes:
        raise ConfigError("counts length must equal num_classes")
    pool = []
    next_id = id_offset
    for k in range(num_classes):
        for i in range(counts[k]):
            pool.append(
                ImageSample(
                    id=next_id,
                    pixels=synth_image(k, i, num_classes, image_size, seed),
                    label=k,
                )
            )
            next_id += 1
    return pool


def synth_test_pool(num_classes, per_class, image_size, seed, id_offset=1_000_000):
    """Balanced evaluation pool drawn from an independent index range."""
    return synth_generate(
        num_classes,
        [per_class] * num_classes,
        image_size,
        # distinct sample indices from the training pool: shift via a derived seed
        seed=_derive_seed(seed, "test"),
        id_offset=id_offset,
    )


def _derive_seed(seed, tag: str) -> int:
    h = np.random.SeedSequence([seed, sum(tag.encode())]).generate_state(1)[0]
    return int(h)


def make_splits(pool, label_fraction, seed, test_pool=None, num_classes=None) -> DatasetSplit:
    """Per-class split of a fully labeled pool into labeled/unlabeled subsets."""
    if not (0.0 < label_fraction <= 1.0):
        raise ConfigError("label_fraction must lie in (0, 1]")
    if any(s.label is None for s in pool):
        raise DataError("make_splits requires a fully labeled pool")
    if num_classes is None:
        num_classes = max(s.label for s in pool) + 1

    by_class: dict[int, list[ImageSample]] = {}
    for s in pool:
        by_class.setdefault(s.label, []).append(s)

    rng = _rng(seed, 202)
    labeled, unlabeled, hidden = [], [], {}
    for k in sorted(by_class):
        members = sorted(by_class[k], key=lambda s: s.id)
        perm = rng.permutation(len(members))
        n_lab = math.ceil(label_fraction * len(members))
        for j, idx in enumerate(perm):
            s = members[idx]
            if j < n_lab:
                labeled.append(s)
            else:
                unlabeled.append(UnlabeledSample(id=s.id, pixels=s.pixels))
                hidden[s.id] = s.label
    return DatasetSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        test=list(test_pool or []),
        hidden_labels=hidden,
        num_classes=num_classes,
    )


def sample_batches(split: DatasetSplit, plan: BatchPlan, seed, iteration):
    """With-replacement labeled/unlabeled batches, keyed by (seed, iteration)."""
    if not split.labeled:
        raise DataError("labeled split is empty")
    rng = _rng(seed, 303, iteration)
    lab_idx = rng.integers(0, len(split.labeled), size=plan.batch_size)
    labeled = [split.labeled[i] for i in lab_idx]
    if split.unlabeled:
        unl_idx = rng.integers(0, len(split.unlabeled), size=plan.unlabeled_batch_size)
        unlabeled = [split.unlabeled[i] for i in unl_idx]
    else:
        unlabeled = []
    return labeled, unlabeled


# ---------------------------------------------------------------------------
# Portable dataset file format.
#
# Layout (all integers little-endian):
#   magic "LTPOOL" (6 bytes) | version u8 | K u32 | n u32 | H u32 | W u32
#   then per sample: id u32 | label i32 (-1 = hidden) | H*W float32 pixels
# ---------------------------------------------------------------------------


def save_dataset(path, samples, num_classes, image_size):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<IIII", num_classes, len(samples), image_size, image_size))
        for s in samples:
            label = getattr(s, "label", None)
            label = HIDDEN_LABEL if label is None else label
            f.write(struct.pack("<Ii", s.id, label))
            px = np.ascontiguousarray(s.pixels, dtype="<f4")
            if px.shape != (image_size, image_size):
                raise DataError(f"sample {s.id}: pixel shape {px.shape} != ({image_size}, {image_size})")
            f.write(px.tobytes())


def load_dataset(path):
    """Returns (samples, num_classes, image_size); hidden labels come back as None."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic, not a dataset file")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<B", blob, off)
    off += 1
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    num_classes, n, h, w = struct.unpack_from("<IIII", blob, off)
    off += 16
    samples = []
    npix = h * w
    for _ in range(n):
        sid, label = struct.unpack_from("<Ii", blob, off)
        off += 8
        px = np.frombuffer(blob, dtype="<f4", count=npix, offset=off).reshape(h, w).copy()
        off += 4 * npix
        if not np.isfinite(px).all():
            raise DataError(f"{path}: sample {sid} has non-finite pixels")
        samples.append(ImageSample(id=sid, pixels=px, label=None if label == HIDDEN_LABEL else label))
    if h != w:
        raise DataError(f"{path}: only square images supported, got {h}x{w}")
    return samples, num_classes, h


def save_hidden_labels(path, hidden_labels: dict):
    with open(path, "w") as f:
        json.dump({str(k): int(v) for k, v in sorted(hidden_labels.items())}, f, indent=0)


def load_hidden_labels(path) -> dict:
    with open(path) as f:
        return {int(k): int(v) for k, v in json.load(f).items()}
