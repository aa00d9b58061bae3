"""Bundled demonstration data: a fixed simulated-embedding CSV with known truth.

The repository ships ``data/embeddings_20class.csv`` (3000 rows, 8 feature
columns, 20 classes drawn from the low-variance two-level world) together
with its generating hierarchy ``data/truth_20class.csv``. The files are a
pure function of the constants below; :func:`regenerate` reproduces them
byte-for-byte, which the test suite uses as a tamper check.
"""

from __future__ import annotations

from pathlib import Path

from .core import RngSeed, save_dataset, save_hierarchy
from .simgen import SimConfig, SimulatedWorld, simulate_dataset

__all__ = ["BUNDLED_CONFIG", "bundled_dir", "bundled_paths", "bundled_world", "regenerate"]

BUNDLED_CONFIG = SimConfig(
    gamma0=0.25,
    gamma1=1.0,
    per_parent=5,
    n_per_class=150,
    dim=8,
    seed=RngSeed(20250810),
)

_DATASET_NAME = "embeddings_20class.csv"
_TRUTH_NAME = "truth_20class.csv"


def bundled_dir() -> Path:
    """Repository data directory (next to the package's src tree)."""
    return Path(__file__).resolve().parents[2] / "data"


def bundled_paths(root: Path | None = None) -> tuple[Path, Path]:
    root = Path(root) if root is not None else bundled_dir()
    return root / _DATASET_NAME, root / _TRUTH_NAME


def bundled_world() -> SimulatedWorld:
    return simulate_dataset(BUNDLED_CONFIG)


def regenerate(root: Path | None = None) -> tuple[Path, Path]:
    """Write the bundled CSVs; deterministic, so existing files are reproduced."""
    dataset_path, truth_path = bundled_paths(root)
    dataset_path.parent.mkdir(parents=True, exist_ok=True)
    world = bundled_world()
    save_dataset(world.dataset, dataset_path)
    save_hierarchy(world.truth, truth_path)
    return dataset_path, truth_path


if __name__ == "__main__":
    for path in regenerate():
        print(path)
