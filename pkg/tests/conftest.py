import numpy as np
import pytest
import torch

from energyssl.config import TrainConfig
from energyssl.data import (
    DatasetSplit,
    ImageSample,
    LongTailSpec,
    UnlabeledSample,
    longtail_counts,
    make_splits,
    synth_generate,
    synth_test_pool,
)


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(0)


def tiny_config(**overrides) -> TrainConfig:
    """A config small enough for fast unit-level training runs."""
    base = dict(
        num_classes=3,
        image_size=16,
        conv_widths=(8, 16),
        total_iters=8,
        batch_size=4,
        unlabeled_ratio=2,
        eval_interval=4,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_split(cfg: TrainConfig, head=6, ir=3.0, label_fraction=0.5, test_per_class=4):
    counts = longtail_counts(LongTailSpec(head, ir, cfg.num_classes))
    pool = synth_generate(cfg.num_classes, counts, cfg.image_size, seed=cfg.seed)
    test = synth_test_pool(cfg.num_classes, test_per_class, cfg.image_size, seed=cfg.seed)
    return make_splits(pool, label_fraction, cfg.seed, test_pool=test)


def random_split(rng, num_classes=3, n_labeled=8, n_unlabeled=10, size=8):
    """Random-noise dataset for logic tests that don't need learnable images."""
    labeled = [
        ImageSample(
            id=i,
            pixels=rng.random((size, size)).astype(np.float32),
            label=int(rng.integers(num_classes)),
        )
        for i in range(n_labeled)
    ]
    unlabeled = [
        UnlabeledSample(id=100 + i, pixels=rng.random((size, size)).astype(np.float32))
        for i in range(n_unlabeled)
    ]
    hidden = {s.id: int(rng.integers(num_classes)) for s in unlabeled}
    test = [
        ImageSample(
            id=1000 + i,
            pixels=rng.random((size, size)).astype(np.float32),
            label=i % num_classes,
        )
        for i in range(num_classes * 2)
    ]
    return DatasetSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        test=test,
        hidden_labels=hidden,
        num_classes=num_classes,
    )
