"""Synthetic two-Gaussian experiment with ring-shaped corruption.

Nominal samples of class -1 come from N((3, 3), S) and of class +1
from N((-3, -3), S) with shared covariance S = [[20, 16], [16, 20]].
Corrupted training samples are drawn uniformly by area from the
annulus of radii [R, R+1] centered at the origin and replace nominal
draws, so per-class totals stay fixed; exactly round(r_a * n) rows of
each class are anomalous. Test sets are clean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset

MEANS = {-1: np.array([3.0, 3.0]), 1: np.array([-3.0, -3.0])}
COV = np.array([[20.0, 16.0], [16.0, 20.0]])


@dataclass(frozen=True)
class RingExperimentConfig:
    """Geometry and sizes for one simulated dataset."""

    R: float
    r_a: float
    n_train_per_class: int = 100
    n_test_per_class: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("R must be positive")
        if not 0 <= self.r_a < 1:
            raise ValueError("r_a must lie in [0, 1)")
        if self.n_train_per_class < 1 or self.n_test_per_class < 1:
            raise ValueError("per-class sample counts must be positive")


def sample_ring(rng: np.random.Generator, n: int, R: float) -> np.ndarray:
    """Uniform-by-area draws from the annulus [R, R+1]."""
    u = rng.random(n)
    radius = np.sqrt(R * R + u * (2.0 * R + 1.0))
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])


def sample_nominal(rng: np.random.Generator, n: int, label: int) -> np.ndarray:
    return rng.multivariate_normal(MEANS[label], COV, size=n)


def generate(config: RingExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Return (train, test); train carries ground-truth anomaly flags."""
    rng = np.random.default_rng(config.seed)
    xs, ys, flags = [], [], []
    for label in (-1, 1):
        n = config.n_train_per_class
        n_anom = int(round(config.r_a * n))
        xs.append(sample_nominal(rng, n - n_anom, label))
        ys.append(np.full(n - n_anom, label))
        flags.append(np.zeros(n - n_anom, dtype=bool))
        if n_anom:
            xs.append(sample_ring(rng, n_anom, config.R))
            ys.append(np.full(n_anom, label))
            flags.append(np.ones(n_anom, dtype=bool))
    train = LabeledDataset(np.vstack(xs), np.concatenate(ys),
                           np.concatenate(flags))

    xs, ys = [], []
    for label in (-1, 1):
        xs.append(sample_nominal(rng, config.n_test_per_class, label))
        ys.append(np.full(config.n_test_per_class, label))
    test = LabeledDataset(np.vstack(xs), np.concatenate(ys))
    return train, test
