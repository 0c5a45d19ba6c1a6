"""Synthetic 3-class phantoms: ellipsoidal bright core, mid-intensity shell,
dark background.  Used by the training acceptance suite and demo fixtures."""

from __future__ import annotations

import numpy as np

from .volume import Volume3D, identity_affine

BACKGROUND, SHELL, CORE = 0, 1, 2


def make_phantom(seed: int, extent: int = 32, spacing: float = 1.0,
                 origin: tuple[float, float, float] = (0.0, 0.0, 0.0)):
    """One (image, labels) pair with seeded jitter in shape and intensity.

    Labels: 0 background, 1 ellipsoidal shell ("gray"), 2 inner core
    ("white").  Intensities are noisy bands around 10 / 120 / 210, clipped to
    [0, 255].
    """
    rng = np.random.default_rng(seed)
    half = (extent - 1) / 2.0
    center = half + rng.uniform(-1.5, 1.5, size=3)
    outer = rng.uniform(0.32, 0.38, size=3) * extent
    inner = outer * rng.uniform(0.58, 0.72, size=3)

    ix = np.arange(extent, dtype=np.float64)
    dx = (ix[:, None, None] - center[0]) / outer[0]
    dy = (ix[None, :, None] - center[1]) / outer[1]
    dz = (ix[None, None, :] - center[2]) / outer[2]
    r_outer = dx * dx + dy * dy + dz * dz
    dx = (ix[:, None, None] - center[0]) / inner[0]
    dy = (ix[None, :, None] - center[1]) / inner[1]
    dz = (ix[None, None, :] - center[2]) / inner[2]
    r_inner = dx * dx + dy * dy + dz * dz

    labels = np.zeros((extent, extent, extent), dtype=np.int32)
    labels[r_outer <= 1.0] = SHELL
    labels[r_inner <= 1.0] = CORE

    means = np.array([10.0, 120.0, 210.0])
    sigmas = np.array([3.0, 8.0, 8.0])
    image = rng.normal(means[labels], sigmas[labels])
    image = np.clip(image, 0.0, 255.0).astype(np.float32)

    affine = identity_affine((spacing, spacing, spacing), origin)
    geom = ((spacing, spacing, spacing), affine)
    return Volume3D(image, *geom), Volume3D(labels, *geom)


def make_phantom_suite(n_train: int = 8, n_eval: int = 2, extent: int = 32,
                       seed: int = 1234):
    """(train_pairs, eval_pairs) with disjoint per-volume seeds."""
    train = [make_phantom(seed + i, extent) for i in range(n_train)]
    evals = [make_phantom(seed + 1000 + i, extent) for i in range(n_eval)]
    return train, evals
