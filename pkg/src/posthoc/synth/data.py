"""Noisy two-arm spirals and the seeded random streams used by the synthetic runs."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

ARM_TURNS = 3 * np.pi
JITTER = 0.05  # radial noise, as a fraction of the maximum radius


def rng_for(seed: int, run: int, purpose: str) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``(seed, run, purpose)``.

    Streams for different keys are independent, so runs can be generated in
    any order or in parallel without changing their results.
    """
    key = np.random.SeedSequence([int(seed), int(run), zlib.crc32(purpose.encode())])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True, eq=False)
class SpiralsDataset:
    points: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray
    flip_mask: np.ndarray

    def __len__(self):
        return len(self.labels)


def gen_spirals(n: int, noise_rate: float, seed: int, run: int = 0,
                purpose: str = "train") -> SpiralsDataset:
    """Sample ``n`` points from two interleaved spiral arms and flip labels.

    Each arm covers angles in [0, 3*pi] with radius proportional to the angle
    (maximum radius 1); the second arm is the first rotated by pi. Exactly
    ``round(noise_rate * n)`` labels, chosen uniformly, are flipped.
    """
    if n < 4 or n % 2:
        raise ValidationError(f"n must be an even number >= 4, got {n}")
    if not 0 <= noise_rate < 0.5:
        raise ValidationError(f"noise_rate must lie in [0, 0.5), got {noise_rate}")
    rng = rng_for(seed, run, "spirals/" + purpose)
    half = n // 2
    clean = np.repeat(np.arange(2), half)
    theta = rng.uniform(0.0, ARM_TURNS, size=n)
    radius = theta / ARM_TURNS + rng.normal(0.0, JITTER, size=n)
    angle = theta + np.pi * clean
    points = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)

    order = rng.permutation(n)
    points, clean = points[order], clean[order]

    n_flip = int(round(noise_rate * n))
    flip_mask = np.zeros(n, dtype=bool)
    flip_mask[rng.choice(n, size=n_flip, replace=False)] = True
    labels = np.where(flip_mask, 1 - clean, clean)
    return SpiralsDataset(points, labels, clean, flip_mask)
