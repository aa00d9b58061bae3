"""Shared data model: labeled datasets, two-level label hierarchies, seeding, CSV I/O.

All types here are treated as immutable after construction and are safe to
share across workers. Every randomized operation takes an explicit
:class:`RngSeed`, and derived substreams make parallel and serial execution
produce identical results.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "RngSeed",
    "LabeledDataset",
    "Hierarchy",
    "DatasetParseError",
    "SubsampleSplit",
    "load_dataset",
    "save_dataset",
    "subsample_fraction",
    "class_conditional_split",
    "load_hierarchy",
    "save_hierarchy",
]

_U64 = 2**64


class DatasetParseError(ValueError):
    """Raised when a dataset CSV cannot be parsed into a LabeledDataset."""


@dataclass(frozen=True)
class RngSeed:
    """Deterministic random source: a 64-bit seed plus a derived stream id.

    Identical (seed, stream) pairs always yield identical random sequences.
    Substreams are derived with :meth:`child`, which hashes the parent stream
    together with the given labels, so each task in a run gets an independent,
    reproducible generator regardless of execution order.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < _U64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream < 0:
            raise ValueError("stream id must be non-negative")

    def child(self, *parts: int | str) -> "RngSeed":
        """Derive a substream keyed by the given integer/string labels."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream.to_bytes(8, "big"))
        for part in parts:
            if isinstance(part, str):
                raw = part.encode("utf-8")
                h.update(b"s" + len(raw).to_bytes(4, "big") + raw)
            elif isinstance(part, (int, np.integer)):
                if part < 0:
                    raise ValueError("stream labels must be non-negative")
                h.update(b"i" + int(part).to_bytes(8, "big"))
            else:
                raise TypeError(f"stream label must be int or str, got {type(part)!r}")
        return RngSeed(self.seed, int.from_bytes(h.digest(), "big"))

    def generator(self) -> np.random.Generator:
        """A fresh PCG64 generator for this (seed, stream) pair."""
        key = (self.stream & 0xFFFFFFFF, (self.stream >> 32) & 0xFFFFFFFF)
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=key))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with dense integer leaf labels.

    features is an (n, d) float64 matrix, labels a length-n vector with values
    in {0, ..., k-1}. Datasets produced by the loaders and simulators satisfy
    the strong invariants (k >= 1, every label present, n >= k, all features
    finite); split views produced by subsampling share the label space of
    their source and may be empty.
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    label_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError("labels must be a vector with one entry per row")
        if feats.shape[1] < 1:
            raise ValueError("d >= 1 violated: dataset has no feature columns")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        if labs.size and (labs.min() < 0 or labs.max() >= self.k):
            raise ValueError("labels must lie in {0, ..., k-1}")
        if self.label_names is not None and len(self.label_names) != self.k:
            raise ValueError("label_names must have one entry per class")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def require_full(self) -> "LabeledDataset":
        """Check the strong invariants (every class present, n >= k)."""
        if self.k < 1:
            raise ValueError("dataset has no classes")
        present = np.unique(self.labels)
        if present.size != self.k:
            raise ValueError("every label id in {0,...,k-1} must appear at least once")
        if self.n < self.k:
            raise ValueError("need at least one row per class (n >= k)")
        return self

    def class_name(self, label: int) -> str:
        if self.label_names is not None:
            return self.label_names[label]
        return str(label)


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Two-level label hierarchy: a total map from each leaf to one coarse label."""

    parent_of: np.ndarray
    c: int

    def __post_init__(self):
        parents = np.asarray(self.parent_of, dtype=np.int64)
        if parents.ndim != 1 or parents.size < 1:
            raise ValueError("parent_of must be a non-empty vector")
        if not 1 <= self.c <= parents.size:
            raise ValueError("need 1 <= c <= k")
        if parents.min() < 0 or parents.max() >= self.c:
            raise ValueError("coarse ids must lie in {0, ..., c-1}")
        counts = np.bincount(parents, minlength=self.c)
        if np.any(counts == 0):
            raise ValueError("every coarse id must have at least one leaf child")
        object.__setattr__(self, "parent_of", parents)

    @property
    def k(self) -> int:
        return self.parent_of.size

    @classmethod
    def from_assignments(cls, assignments: Sequence[int]) -> "Hierarchy":
        """Build a hierarchy from raw cluster assignments, compacting unused ids.

        Surviving coarse ids keep their relative order, so the result is a
        deterministic function of the input.
        """
        raw = np.asarray(assignments, dtype=np.int64)
        used = np.unique(raw)
        remap = {int(old): new for new, old in enumerate(used)}
        parents = np.array([remap[int(a)] for a in raw], dtype=np.int64)
        return cls(parent_of=parents, c=used.size)

    def children(self, coarse: int) -> np.ndarray:
        """Leaf ids under the given coarse label, ascending."""
        return np.flatnonzero(self.parent_of == coarse)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.parent_of, minlength=self.c)


class SubsampleSplit(NamedTuple):
    """Training split, its complement, and the surviving-class remap.

    ``kept_classes[new_id]`` is the original leaf id now encoded as
    ``new_id``; ``dropped_classes`` lists original ids absent from the
    training split (their complement rows are removed so both splits share
    one label space).
    """

    train: LabeledDataset
    rest: LabeledDataset
    kept_classes: np.ndarray
    dropped_classes: np.ndarray


def load_dataset(path, label_column: str) -> LabeledDataset:
    """Load a dataset CSV: one labeled column, all other columns numeric features.

    Labels are re-encoded densely to {0, ..., k-1} in order of first
    appearance; feature row order is preserved.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetParseError(f"{path}: empty file")
        matches = [i for i, name in enumerate(header) if name == label_column]
        if not matches:
            raise DatasetParseError(f"{path}: label column {label_column!r} not in header")
        if len(matches) > 1:
            raise DatasetParseError(f"{path}: label column {label_column!r} appears more than once")
        label_idx = matches[0]
        n_cols = len(header)
        if n_cols - 1 < 1:
            raise DatasetParseError(f"{path}: d >= 1 violated (no feature columns)")
        feature_names = tuple(name for i, name in enumerate(header) if i != label_idx)

        rows: list[list[float]] = []
        tokens: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise DatasetParseError(
                    f"{path}: line {lineno}: expected {n_cols} fields, got {len(row)}"
                )
            tokens.append(row[label_idx])
            values = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise DatasetParseError(
                        f"{path}: line {lineno}: non-numeric feature value {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DatasetParseError(
                        f"{path}: line {lineno}: non-finite feature value {cell!r}"
                    )
                values.append(value)
            rows.append(values)

    if not rows:
        raise DatasetParseError(f"{path}: no data rows")

    encoding: dict[str, int] = {}
    labels = np.empty(len(tokens), dtype=np.int64)
    for i, tok in enumerate(tokens):
        if tok not in encoding:
            encoding[tok] = len(encoding)
        labels[i] = encoding[tok]
    ds = LabeledDataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=labels,
        k=len(encoding),
        label_names=tuple(encoding),
        feature_names=feature_names,
    )
    return ds.require_full()


def save_dataset(ds: LabeledDataset, path, label_column: str = "label") -> None:
    """Write a dataset CSV that round-trips bit-exactly through load_dataset."""
    names = ds.feature_names or tuple(f"x{j}" for j in range(ds.d))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([label_column, *names])
        for i in range(ds.n):
            # repr() of a float is the shortest digit string that parses back
            # to the same double, so features survive the round trip exactly.
            writer.writerow([ds.class_name(int(ds.labels[i]))] + [repr(float(v)) for v in ds.features[i]])


def subsample_fraction(ds: LabeledDataset, fraction: float, seed: RngSeed) -> SubsampleSplit:
    """Draw a non-stratified training split of floor(fraction * n) rows.

    The complement holds every remaining row except those whose class
    vanished from the training split; such classes are dropped from the label
    space and reported in the returned remap.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n = ds.n
    m = int(math.floor(fraction * n))
    perm = seed.generator().permutation(n)
    take = np.sort(perm[:m])
    rest_idx = np.sort(perm[m:])

    kept = np.unique(ds.labels[take])
    dropped = np.setdiff1d(np.arange(ds.k), kept)
    lookup = np.full(ds.k, -1, dtype=np.int64)
    lookup[kept] = np.arange(kept.size)

    if dropped.size:
        rest_idx = rest_idx[np.isin(ds.labels[rest_idx], kept)]
    names = None
    if ds.label_names is not None:
        names = tuple(ds.label_names[int(c)] for c in kept)

    def view(idx: np.ndarray) -> LabeledDataset:
        return LabeledDataset(
            features=ds.features[idx],
            labels=lookup[ds.labels[idx]],
            k=int(kept.size),
            label_names=names,
            feature_names=ds.feature_names,
        )

    return SubsampleSplit(view(take), view(rest_idx), kept, dropped)


def class_conditional_split(ds: LabeledDataset) -> list[np.ndarray]:
    """Rows of each class: list of k arrays, disjoint, covering the dataset."""
    return [ds.features[ds.labels == i] for i in range(ds.k)]


def save_hierarchy(h: Hierarchy, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["leaf_id", "coarse_id"])
        for leaf, coarse in enumerate(h.parent_of):
            writer.writerow([leaf, int(coarse)])


def load_hierarchy(path) -> Hierarchy:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["leaf_id", "coarse_id"]:
            raise DatasetParseError(f"{path}: expected header leaf_id,coarse_id")
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DatasetParseError(f"{path}: line {lineno}: expected 2 fields")
            try:
                leaf, coarse = int(row[0]), int(row[1])
            except ValueError:
                raise DatasetParseError(f"{path}: line {lineno}: non-integer entry") from None
            if leaf in entries:
                raise DatasetParseError(f"{path}: line {lineno}: duplicate leaf id {leaf}")
            entries[leaf] = coarse
    if not entries:
        raise DatasetParseError(f"{path}: no hierarchy rows")
    k = max(entries) + 1
    if sorted(entries) != list(range(k)):
        raise DatasetParseError(f"{path}: leaf ids must cover 0..{k - 1}")
    return Hierarchy.from_assignments([entries[i] for i in range(k)])
