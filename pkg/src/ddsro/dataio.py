"""Labeled uncertainty data: CSV ingest, validation and class probabilities."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Hashable, List, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent uncertainty data."""


@dataclass(frozen=True)
class LabeledDataset:
    """Sample points ``u^(i)`` with integer class labels.

    ``class_ids`` keeps the order in which classes were first seen;
    ``class_names`` maps each id back to the raw label text (when loaded
    from CSV).
    """

    points: np.ndarray  # (L, dim)
    labels: np.ndarray  # (L,) ints
    class_ids: tuple
    class_names: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        labels = np.asarray(self.labels).astype(int).ravel()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_ids))
        self._validate()

    def _validate(self):
        L = self.points.shape[0]
        if L < 1:
            raise DataError("dataset has no points")
        if self.labels.size != L:
            raise DataError(f"{L} points but {self.labels.size} labels")
        if not np.all(np.isfinite(self.points)):
            row = int(np.argmax(~np.all(np.isfinite(self.points), axis=1)))
            raise DataError(f"non-finite value in point {row}")
        ids = set(self.class_ids)
        if len(ids) != len(self.class_ids):
            raise DataError("duplicate class ids")
        present = set(self.labels.tolist())
        if present - ids:
            raise DataError(f"labels {sorted(present - ids)} missing from class_ids")
        if ids - present:
            raise DataError(f"classes {sorted(ids - present)} have no points")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def class_points(self, class_id) -> np.ndarray:
        return self.points[self.labels == class_id]

    def merged(self) -> "LabeledDataset":
        """All points relabeled as a single class 0 (unlabeled view)."""
        return LabeledDataset(self.points, np.zeros(len(self), dtype=int), (0,), ("all",))

    @classmethod
    def from_labels(cls, points, raw_labels: Sequence[Hashable]) -> "LabeledDataset":
        """Map arbitrary labels to dense ids in first-appearance order."""
        mapping: Dict[Hashable, int] = {}
        ids = []
        for lab in raw_labels:
            if lab not in mapping:
                mapping[lab] = len(mapping)
            ids.append(mapping[lab])
        names = tuple(str(k) for k in mapping)
        return cls(np.asarray(points, dtype=float), np.array(ids, dtype=int), tuple(mapping.values()), names)


def load_dataset(path, label_column: str = "label") -> LabeledDataset:
    """Read ``u1,...,ud,label`` CSV.  Errors name the offending data row (1-based)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: missing label column {label_column!r}")
        li = header.index(label_column)
        value_cols = [i for i in range(len(header)) if i != li]
        if not value_cols:
            raise DataError(f"{path}: no value columns")
        points: List[List[float]] = []
        labels: List[str] = []
        for rowno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for i in value_cols:
                try:
                    v = float(row[i])
                except ValueError:
                    raise DataError(f"{path}: row {rowno}: cannot parse {row[i]!r} as a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {rowno}: non-finite value {row[i]!r}")
                vals.append(v)
            lab = row[li].strip()
            if not lab:
                raise DataError(f"{path}: row {rowno}: empty label")
            points.append(vals)
            labels.append(lab)
    if not points:
        raise DataError(f"{path}: no data rows")
    return LabeledDataset.from_labels(np.array(points), labels)


def write_dataset(ds: LabeledDataset, path, labels_as_names: bool = True) -> None:
    path = Path(path)
    header = [f"u{i + 1}" for i in range(ds.dim)] + ["label"]
    name = dict(zip(ds.class_ids, ds.class_names))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p, lab in zip(ds.points, ds.labels):
            w.writerow([repr(float(v)) for v in p] + [name[int(lab)] if labels_as_names else int(lab)])


@dataclass(frozen=True)
class ClassDistribution:
    probabilities: Dict[int, float]

    def __post_init__(self):
        total = sum(self.probabilities.values())
        if abs(total - 1.0) > 1e-12:
            raise DataError(f"class probabilities sum to {total!r}")

    def __getitem__(self, class_id) -> float:
        return self.probabilities[class_id]

    @property
    def class_ids(self):
        return tuple(self.probabilities)

    def as_list(self):
        return [self.probabilities[c] for c in self.class_ids]


def estimate_class_probabilities(ds: LabeledDataset) -> ClassDistribution:
    """Maximum likelihood estimate of class occurrence: count / L."""
    counts = Counter(ds.labels.tolist())
    L = len(ds)
    return ClassDistribution({c: counts[c] / L for c in ds.class_ids})
