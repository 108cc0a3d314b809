"""Synthetic degraded/clean pairs for smoke tests and demos.

Clean scenes are smooth random colour fields with a few blobs; the degraded
version applies a simple underwater formation model: per-channel
transmission (red attenuated most) plus a blue-green veiling light.
"""

from __future__ import annotations

import numpy as np
import torch

from .data import PairedSample

__all__ = ["clean_scene", "underwater_degrade", "synthetic_pairs"]


def clean_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((3, size, size))
    for c in range(3):
        a, b, d = rng.uniform(-1, 1, 3)
        img[c] = 0.5 + 0.25 * (a * xx + b * yy + d * xx * yy)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.3)
        color = rng.uniform(0, 1, 3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r ** 2))
        img = img * (1 - blob) + color[:, None, None] * blob
    return np.clip(img, 0, 1)


def underwater_degrade(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    t = np.array([rng.uniform(0.3, 0.5), rng.uniform(0.6, 0.8), rng.uniform(0.7, 0.9)])
    veil = np.array([0.05, rng.uniform(0.45, 0.6), rng.uniform(0.55, 0.7)])
    out = img * t[:, None, None] + veil[:, None, None] * (1 - t[:, None, None])
    return np.clip(out, 0, 1)


def synthetic_pairs(n: int, size: int = 32, seed: int = 0) -> list[PairedSample]:
    """``n`` pairs as ``[-1, 1]`` float32 tensors with ids ``syn000``, ``syn001``, ..."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        clean = clean_scene(size, rng)
        deg = underwater_degrade(clean, rng)
        out.append(PairedSample(
            f"syn{k:03d}",
            torch.from_numpy(deg * 2 - 1).float(),
            torch.from_numpy(clean * 2 - 1).float(),
        ))
    return out
