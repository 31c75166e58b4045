"""Weak/strong augmentation and deterministic batch iteration.

Weak views are pad-reflect random crops plus horizontal flips. Strong views
start from a weak view and apply a configurable list of RandAugment-style
ops. Everything operates on uint8 (N, H, W, 3) arrays with an explicit numpy
Generator so epochs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

DEFAULT_STRONG_OPS = ("autocontrast", "brightness", "contrast", "posterize",
                      "solarize", "translate_x", "translate_y", "cutout")


@dataclass(frozen=True)
class AugmentPolicy:
    crop_pad: int = 4
    flip_prob: float = 0.5
    strong_ops: tuple[str, ...] = DEFAULT_STRONG_OPS
    n_strong_ops: int = 2

    def __post_init__(self):
        unknown = set(self.strong_ops) - set(DEFAULT_STRONG_OPS) - {"identity"}
        if unknown:
            raise ValueError(f"unknown strong ops: {sorted(unknown)}")


@dataclass(frozen=True)
class AugmentedBatch:
    """One training batch with three views; indices refer to dataset sample ids."""

    weak_views: torch.Tensor    # float32 (B, 3, H, W), normalized
    strong_views: torch.Tensor
    mix_views: torch.Tensor     # independent weak draw reserved for mixup
    indices: np.ndarray
    labels: torch.Tensor        # int64 observed/effective labels

    def __post_init__(self):
        b = self.weak_views.shape[0]
        if not (self.strong_views.shape[0] == self.mix_views.shape[0] == len(self.indices) == b):
            raise ValueError("all views must share the batch dimension")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("batch indices must be unique")

    def __len__(self) -> int:
        return len(self.indices)


def to_model_input(images_u8: np.ndarray) -> torch.Tensor:
    """uint8 NHWC -> normalized float32 NCHW tensor."""
    x = images_u8.astype(np.float32)
    x *= 1.0 / 127.5
    x -= 1.0
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


def _gather_crops(padded: np.ndarray, ox: np.ndarray, oy: np.ndarray, size: int) -> np.ndarray:
    n = padded.shape[0]
    rows = oy[:, None] + np.arange(size)[None, :]
    cols = ox[:, None] + np.arange(size)[None, :]
    return padded[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]


def weak_views(images_u8: np.ndarray, rng: np.random.Generator,
               policy: AugmentPolicy) -> np.ndarray:
    n, h, w, _ = images_u8.shape
    pad = policy.crop_pad
    padded = np.pad(images_u8, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="reflect")
    ox = rng.integers(0, 2 * pad + 1, size=n)
    oy = rng.integers(0, 2 * pad + 1, size=n)
    out = _gather_crops(padded, ox, oy, h)
    flip = rng.random(n) < policy.flip_prob
    out[flip] = out[flip, :, ::-1]
    return out


def _autocontrast(x: np.ndarray, mag: np.ndarray) -> np.ndarray:
    f = x.astype(np.float32)
    lo = f.min(axis=(1, 2), keepdims=True)
    hi = f.max(axis=(1, 2), keepdims=True)
    span = np.maximum(hi - lo, 1.0)
    return ((f - lo) * (255.0 / span)).astype(np.uint8)


def _brightness(x: np.ndarray, mag: np.ndarray) -> np.ndarray:
    factor = (1.0 + mag)[:, None, None, None]
    return np.clip(x.astype(np.float32) * factor, 0, 255).astype(np.uint8)


def _contrast(x: np.ndarray, mag: np.ndarray) -> np.ndarray:
    f = x.astype(np.float32)
    mean = f.mean(axis=(1, 2, 3), keepdims=True)
    factor = (1.0 + mag)[:, None, None, None]
    return np.clip(mean + (f - mean) * factor, 0, 255).astype(np.uint8)


def _posterize(x: np.ndarray, mag: np.ndarray) -> np.ndarray:
    bits = np.clip(8 - np.rint(np.abs(mag) * 5).astype(int), 3, 8)
    masks = (0xFF << (8 - bits)).astype(np.uint8)
    return x & masks[:, None, None, None]


def _solarize(x: np.ndarray, mag: np.ndarray) -> np.ndarray:
    thr = (255.0 - np.abs(mag) * 160.0)[:, None, None, None]
    return np.where(x >= thr, 255 - x, x)


def _translate(x: np.ndarray, mag: np.ndarray, axis: int) -> np.ndarray:
    size = x.shape[1]
    shift = np.rint(mag * 10).astype(int)
    pad = int(np.abs(shift).max()) if len(shift) else 0
    if pad == 0:
        return x
    pads = [(0, 0), (0, 0), (0, 0), (0, 0)]
    pads[axis] = (pad, pad)
    padded = np.pad(x, pads, mode="constant", constant_values=127)
    off = pad + shift
    zero = np.zeros_like(off)
    if axis == 2:
        return _gather_crops(padded, off, zero, size)
    return _gather_crops(padded, zero, off, size)


def _cutout(x: np.ndarray, mag: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = x.copy()
    size = x.shape[1]
    half = np.clip(np.rint(np.abs(mag) * 8).astype(int) + 2, 2, size // 2)
    cy = rng.integers(0, size, len(x))
    cx = rng.integers(0, size, len(x))
    for i in range(len(x)):
        y0, y1 = max(0, cy[i] - half[i]), min(size, cy[i] + half[i])
        x0, x1 = max(0, cx[i] - half[i]), min(size, cx[i] + half[i])
        out[i, y0:y1, x0:x1] = 127
    return out


def strong_views(weak_u8: np.ndarray, rng: np.random.Generator,
                 policy: AugmentPolicy) -> np.ndarray:
    """Apply n RandAugment-style ops (random op, random signed magnitude) per sample."""
    out = weak_u8.copy()
    ops = policy.strong_ops
    if not ops or policy.n_strong_ops <= 0:
        return out
    for _ in range(policy.n_strong_ops):
        choice = rng.integers(0, len(ops), size=len(out))
        mag = rng.uniform(-1.0, 1.0, size=len(out))
        for k, name in enumerate(ops):
            mask = choice == k
            if not mask.any():
                continue
            sub, m = out[mask], mag[mask]
            if name == "identity":
                res = sub
            elif name == "autocontrast":
                res = _autocontrast(sub, m)
            elif name == "brightness":
                res = _brightness(sub, m)
            elif name == "contrast":
                res = _contrast(sub, m)
            elif name == "posterize":
                res = _posterize(sub, m)
            elif name == "solarize":
                res = _solarize(sub, m)
            elif name == "translate_x":
                res = _translate(sub, m, axis=2)
            elif name == "translate_y":
                res = _translate(sub, m, axis=1)
            else:  # cutout
                res = _cutout(sub, m, rng)
            out[mask] = res
    return out


def epoch_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator per (seed, *keys) tuple."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def iter_augmented(images: np.ndarray, labels: np.ndarray, indices: np.ndarray,
                   batch_size: int, rng: np.random.Generator, policy: AugmentPolicy,
                   shuffle: bool = True):
    """Yield AugmentedBatch objects over ``indices`` (dataset sample ids).

    ``labels[i]`` must be the effective label of dataset sample i.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(indices) == 0:
        raise ValueError("cannot iterate an empty index set")
    order = np.array(indices, dtype=np.int64)
    if shuffle:
        order = rng.permutation(order)
    for start in range(0, len(order), batch_size):
        ids = order[start:start + batch_size]
        raw = images[ids]
        weak = weak_views(raw, rng, policy)
        strong = strong_views(weak, rng, policy)
        mix = weak_views(raw, rng, policy)
        yield AugmentedBatch(
            weak_views=to_model_input(weak),
            strong_views=to_model_input(strong),
            mix_views=to_model_input(mix),
            indices=ids,
            labels=torch.from_numpy(labels[ids].astype(np.int64)),
        )


def iter_plain(images: np.ndarray, batch_size: int):
    """Unaugmented, unshuffled batches for evaluation/test passes."""
    for start in range(0, len(images), batch_size):
        yield start, to_model_input(images[start:start + batch_size])
