"""Procedural shape-segmentation dataset: axis-aligned rectangles, circles
and triangles (class = shape type) composited over a textured background,
with exact rasterized ground truth. Deterministic in the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .tnsr import read_tnsr, write_tnsr

# base colors: background, rectangle, circle, triangle
_PALETTE = np.array([
    [0.22, 0.22, 0.24],
    [0.82, 0.28, 0.20],
    [0.18, 0.74, 0.32],
    [0.24, 0.36, 0.86],
], dtype=np.float64)

# texture/difficulty constants: per-sample color jitter, background ramp
# amplitude, and per-pixel noise sigma
_COLOR_JITTER = 0.08
_RAMP = 0.05
_PIXEL_NOISE = 0.02


@dataclass
class SegSample:
    image: np.ndarray  # float32 (3, H, W) in [0, 1]
    gt: np.ndarray     # int32 (H, W), class indices


def _shape_mask(kind: int, rng: np.random.Generator, size: int,
                yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    lo, hi = size // 6, size // 2
    if kind == 0:  # axis-aligned rectangle
        w = int(rng.integers(lo, hi))
        h = int(rng.integers(lo, hi))
        x0 = int(rng.integers(0, size - w))
        y0 = int(rng.integers(0, size - h))
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    if kind == 1:  # circle
        r = int(rng.integers(lo // 2 + 2, hi // 2))
        cx = int(rng.integers(r, size - r))
        cy = int(rng.integers(r, size - r))
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # upward isoceles triangle
    h = int(rng.integers(lo, hi))
    half = int(rng.integers(lo // 2 + 2, hi // 2))
    cx = int(rng.integers(half, size - half))
    y0 = int(rng.integers(0, size - h))
    rise = (yy - y0) / h
    return (yy >= y0) & (yy < y0 + h) & (np.abs(xx - cx) <= half * rise)


def _render_sample(rng: np.random.Generator, size: int,
                   n_classes: int) -> SegSample:
    yy, xx = np.mgrid[0:size, 0:size]
    gt = np.zeros((size, size), dtype=np.int32)

    # textured background: smooth diagonal ramp plus pixel noise
    tilt = rng.uniform(-_RAMP, _RAMP)
    ramp = tilt * (yy + xx) / size
    image = np.empty((3, size, size), dtype=np.float64)
    for ch in range(3):
        image[ch] = _PALETTE[0, ch] + ramp

    n_kinds = min(3, n_classes - 1)
    n_shapes = int(rng.integers(1, 5))
    for _ in range(n_shapes):
        kind = int(rng.integers(0, n_kinds))
        mask = _shape_mask(kind, rng, size, yy, xx)
        color = _PALETTE[kind + 1] + rng.uniform(-_COLOR_JITTER, _COLOR_JITTER, size=3)
        gt[mask] = kind + 1
        for ch in range(3):
            image[ch][mask] = color[ch]

    image += rng.normal(0.0, _PIXEL_NOISE, size=image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    return SegSample(image=image.astype(np.float32), gt=gt)


def gen_shapes(seed, count: int, size: int = 64,
               n_classes: int = 4) -> list[SegSample]:
    """Generate ``count`` samples; ``seed`` may be an int, SeedSequence or
    Generator. Every sample contains at least one non-background pixel."""
    if n_classes < 2:
        raise ContractError(f"need background plus one shape class, got {n_classes}")
    if count < 0:
        raise ContractError(f"count must be non-negative, got {count}")
    if size < 16:
        raise ContractError(f"canvas too small: {size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        sample = _render_sample(rng, size, n_classes)
        while not np.any(sample.gt):  # pragma: no cover - shapes always land
            sample = _render_sample(rng, size, n_classes)
        samples.append(sample)
    return samples


def save_dataset(directory, samples) -> int:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        write_tnsr(directory / f"sample_{i:05d}.image.tnsr", sample.image)
        write_tnsr(directory / f"sample_{i:05d}.label.tnsr",
                   sample.gt.astype(np.float32))
    return len(samples)


def load_dataset(directory) -> list[SegSample]:
    directory = Path(directory)
    image_paths = sorted(directory.glob("sample_*.image.tnsr"))
    if not image_paths:
        raise DataError(f"{directory}: no sample_*.image.tnsr files")
    samples = []
    for image_path in image_paths:
        label_path = directory / image_path.name.replace(".image.", ".label.")
        if not label_path.exists():
            raise DataError(f"{label_path}: missing label for {image_path.name}")
        image = read_tnsr(image_path)
        labels = read_tnsr(label_path)
        if image.ndim != 3 or image.shape[0] != 3:
            raise DataError(f"{image_path}: image must be (3, H, W), got {image.shape}")
        if labels.shape != image.shape[1:]:
            raise DataError(
                f"{label_path}: label shape {labels.shape} vs image {image.shape[1:]}"
            )
        gt = labels.astype(np.int32)
        if np.any(labels != gt):
            raise DataError(f"{label_path}: labels must be whole numbers")
        samples.append(SegSample(image=image, gt=gt))
    return samples
