"""Weak and strong stochastic augmentation with keyed per-sample RNG streams.

Every view is a pure function of (pixels, seed, sample id, iteration, tag), so
augmentation can be parallelized across samples without changing results.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

STRONG_OPS = ("rotate", "shear", "contrast", "gamma", "noise", "cutout")


def make_stream(seed, sample_id, iteration, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, 404, sample_id, iteration, sum(tag.encode())])


def weak(pixels: np.ndarray, rng, flip_prob=0.5, max_shift=0.125) -> np.ndarray:
    """Horizontal flip w.p. flip_prob, then integer shift with zero padding."""
    out = pixels.astype(np.float32, copy=True)
    if rng.random() < flip_prob:
        out = out[:, ::-1]
    h, w = out.shape
    max_dy = int(round(max_shift * h))
    max_dx = int(round(max_shift * w))
    dy = int(rng.integers(-max_dy, max_dy + 1))
    dx = int(rng.integers(-max_dx, max_dx + 1))
    out = _shift_zero_pad(out, dy, dx)
    return np.clip(out, 0.0, 1.0)


def _shift_zero_pad(img, dy, dx):
    h, w = img.shape
    out = np.zeros_like(img)
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def _affine(img, matrix):
    h, w = img.shape
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = c - matrix @ c
    return ndimage.affine_transform(
        img, matrix, offset=offset, order=1, mode="constant", cval=0.0
    ).astype(np.float32)


def _op_rotate(img, rng, max_deg):
    a = math.radians(rng.uniform(-max_deg, max_deg))
    m = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return _affine(img, m)


def _op_shear(img, rng, max_shear):
    s = rng.uniform(-max_shear, max_shear)
    m = np.array([[1.0, s], [0.0, 1.0]])
    return _affine(img, m)


def _op_contrast(img, rng, lo, hi):
    c = rng.uniform(lo, hi)
    return (img - 0.5) * c + 0.5


def _op_gamma(img, rng, lo, hi):
    g = rng.uniform(lo, hi)
    return np.power(np.clip(img, 0.0, 1.0), g)


def _op_noise(img, rng, max_sigma):
    sigma = rng.uniform(0.0, max_sigma)
    return img + rng.normal(0.0, 1.0, size=img.shape).astype(np.float32) * sigma


def _op_cutout(img, rng, frac):
    h, w = img.shape
    side = max(1, int(round(frac * h)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = img.copy()
    out[top : top + side, left : left + side] = 0.0
    return out


def strong(
    pixels: np.ndarray,
    rng,
    flip_prob=0.5,
    max_shift=0.125,
    n_ops=2,
    max_rotate_deg=15.0,
    max_shear=0.2,
    contrast_range=(0.5, 1.5),
    gamma_range=(0.7, 1.4),
    max_noise_sigma=0.1,
    cutout_frac=0.25,
) -> np.ndarray:
    """Weak view followed by n_ops transforms drawn uniformly without replacement."""
    out = weak(pixels, rng, flip_prob=flip_prob, max_shift=max_shift)
    chosen = rng.choice(len(STRONG_OPS), size=n_ops, replace=False)
    for idx in chosen:
        name = STRONG_OPS[idx]
        if name == "rotate":
            out = _op_rotate(out, rng, max_rotate_deg)
        elif name == "shear":
            out = _op_shear(out, rng, max_shear)
        elif name == "contrast":
            out = _op_contrast(out, rng, *contrast_range)
        elif name == "gamma":
            out = _op_gamma(out, rng, *gamma_range)
        elif name == "noise":
            out = _op_noise(out, rng, max_noise_sigma)
        elif name == "cutout":
            out = _op_cutout(out, rng, cutout_frac)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def weak_view(sample_pixels, cfg, seed, sample_id, iteration):
    rng = make_stream(seed, sample_id, iteration, "weak")
    return weak(sample_pixels, rng, cfg.weak_flip_prob, cfg.weak_max_shift)


def strong_view(sample_pixels, cfg, seed, sample_id, iteration):
    rng = make_stream(seed, sample_id, iteration, "strong")
    return strong(
        sample_pixels,
        rng,
        flip_prob=cfg.weak_flip_prob,
        max_shift=cfg.weak_max_shift,
        n_ops=cfg.strong_n_ops,
        max_rotate_deg=cfg.strong_max_rotate_deg,
        max_shear=cfg.strong_max_shear,
        contrast_range=cfg.strong_contrast_range,
        gamma_range=cfg.strong_gamma_range,
        max_noise_sigma=cfg.strong_max_noise_sigma,
        cutout_frac=cfg.strong_cutout_frac,
    )
