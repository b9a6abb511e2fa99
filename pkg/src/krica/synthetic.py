"""Seeded synthetic datasets for experiments and the verification suite."""

from __future__ import annotations

import numpy as np


def grating_dataset(
    per_class: int,
    size: int = 16,
    orientations=(0.0, 60.0, 120.0),
    cycles_per_pixel: float = 0.25,
    noise: float = 0.15,
    seed: int = 0,
):
    """Class-specific oriented gratings plus Gaussian pixel noise.

    Each class draws sinusoidal gratings at one orientation with a random
    phase.  Returns (images, labels) with images (N, size, size, 1) in [0, 1].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((per_class * len(orientations), size, size, 1))
    labels = np.empty(per_class * len(orientations), dtype=np.intp)
    i = 0
    for cls, theta_deg in enumerate(orientations):
        theta = np.deg2rad(theta_deg)
        carrier = 2.0 * np.pi * cycles_per_pixel * (xx * np.cos(theta) + yy * np.sin(theta))
        for _ in range(per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img = 0.5 + 0.5 * np.sin(carrier + phase)
            img += rng.normal(0.0, noise, size=(size, size))
            images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
            labels[i] = cls
            i += 1
    order = rng.permutation(len(labels))
    return images[order], labels[order]


def blob_dataset(per_class: int, dim: int, centers: np.ndarray, spread: float = 1.0, seed: int = 0):
    """Isotropic Gaussian blobs around the given (c, dim) centers."""
    centers = np.asarray(centers, dtype=np.float64)
    rng = np.random.default_rng(seed)
    X = np.vstack([
        rng.normal(0.0, spread, size=(per_class, dim)) + c for c in centers
    ])
    y = np.repeat(np.arange(centers.shape[0]), per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


def clustered_patch_dataset(
    m: int,
    dim: int,
    prototypes: int = 48,
    prototype_scale: float = 1.3,
    spread: float = 0.3,
    seed: int = 0,
):
    """Patch-like vectors clustered around random prototypes.

    Mimics the multimodal geometry of natural image patches: samples
    concentrate near a modest set of recurring prototype patterns instead of
    filling space uniformly.
    """
    rng = np.random.default_rng(seed)
    C = rng.normal(0.0, prototype_scale, size=(prototypes, dim))
    which = rng.integers(0, prototypes, size=m)
    return C[which] + rng.normal(0.0, spread, size=(m, dim))
