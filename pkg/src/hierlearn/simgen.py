"""Two-level Gaussian simulation: parent centers, sampled class means, patterns.

Four fixed parent centers sit at (1,1), (1,-1), (-1,1), (-1,-1). Each parent
spawns ``per_parent`` class means drawn from an isotropic Gaussian with
coordinate variance ``gamma0``; each class then emits ``n_per_class`` patterns
from an isotropic Gaussian around its mean with coordinate variance
``gamma1``. The generating parent of every class is the ground-truth coarse
label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Hierarchy, LabeledDataset, RngSeed

__all__ = [
    "N_PARENTS",
    "SimConfig",
    "SimulatedWorld",
    "parent_centers",
    "sample_type2_means",
    "sample_patterns",
    "simulate_dataset",
]

N_PARENTS = 4


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the simulated world."""

    gamma0: float
    gamma1: float
    per_parent: int
    n_per_class: int = 50
    dim: int = 2
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if self.gamma0 <= 0 or self.gamma1 <= 0:
            raise ValueError("gamma0 and gamma1 must be positive")
        if self.per_parent < 1:
            raise ValueError("per_parent must be >= 1")
        if self.n_per_class < 2:
            raise ValueError("n_per_class must be >= 2")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")

    @property
    def k(self) -> int:
        return N_PARENTS * self.per_parent


@dataclass(frozen=True, eq=False)
class SimulatedWorld:
    parent_centers: np.ndarray
    class_means: np.ndarray
    truth: Hierarchy
    dataset: LabeledDataset


def parent_centers(dim: int = 2) -> np.ndarray:
    """The four parent centers, embedded in the first two coordinates for dim > 2."""
    centers = np.zeros((N_PARENTS, dim))
    centers[:, :2] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
    return centers


def sample_type2_means(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, Hierarchy]:
    """Draw per_parent class means around each parent center.

    Class ids are parent-major: classes j*per_parent .. (j+1)*per_parent - 1
    descend from parent j.
    """
    centers = parent_centers(cfg.dim)
    scale = np.sqrt(cfg.gamma0)
    means = np.empty((cfg.k, cfg.dim))
    for j in range(N_PARENTS):
        rng = cfg.seed.child("type2", j).generator()
        block = slice(j * cfg.per_parent, (j + 1) * cfg.per_parent)
        means[block] = centers[j] + scale * rng.standard_normal((cfg.per_parent, cfg.dim))
    truth = Hierarchy(parent_of=np.repeat(np.arange(N_PARENTS), cfg.per_parent), c=N_PARENTS)
    return centers, means, truth


def sample_patterns(
    class_means: np.ndarray, gamma1: float, n_per_class: int, seed: RngSeed
) -> LabeledDataset:
    """Draw n_per_class patterns around every class mean (per-class substreams)."""
    class_means = np.asarray(class_means, dtype=np.float64)
    k, dim = class_means.shape
    scale = np.sqrt(gamma1)
    features = np.empty((k * n_per_class, dim))
    for i in range(k):
        rng = seed.child("class", i).generator()
        block = slice(i * n_per_class, (i + 1) * n_per_class)
        features[block] = class_means[i] + scale * rng.standard_normal((n_per_class, dim))
    labels = np.repeat(np.arange(k), n_per_class)
    return LabeledDataset(features=features, labels=labels, k=k).require_full()


def simulate_dataset(cfg: SimConfig) -> SimulatedWorld:
    """Sample a full world: centers, class means, ground truth, and patterns."""
    centers, means, truth = sample_type2_means(cfg)
    dataset = sample_patterns(means, cfg.gamma1, cfg.n_per_class, cfg.seed.child("patterns"))
    return SimulatedWorld(parent_centers=centers, class_means=means, truth=truth, dataset=dataset)
