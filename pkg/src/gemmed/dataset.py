"""Labeled sample container and CSV input/output.

The on-disk format is a plain CSV with header ``y,x1,...,xp`` and an
optional trailing ``is_anomaly`` column (training files only). Labels
are restricted to {-1, +1}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASSES = (-1, 1)


def class_index(label: int) -> int:
    """Map a label in {-1, +1} to the fixed per-class array slot {0, 1}."""
    return (int(label) + 1) // 2


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with labels in {-1, +1} and optional anomaly flags.

    Attributes
    ----------
    x : ndarray of shape (n, p)
        Feature rows, float64.
    y : ndarray of shape (n,)
        Labels, each -1 or +1.
    anomaly : ndarray of shape (n,) or None
        Ground-truth anomaly flags when known (synthetic training data).
    """

    x: np.ndarray
    y: np.ndarray
    anomaly: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("features must form a nonempty 2-D array")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if y.shape != (x.shape[0],):
            raise ValueError(
                f"label count {y.shape} does not match {x.shape[0]} feature rows"
            )
        yi = y.astype(int)
        if not np.array_equal(yi, y) or not np.all(np.isin(yi, CLASSES)):
            raise ValueError("labels must be -1 or +1")
        anomaly = self.anomaly
        if anomaly is not None:
            anomaly = np.asarray(anomaly).astype(bool)
            if anomaly.shape != (x.shape[0],):
                raise ValueError("anomaly flags must match the number of rows")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", yi)
        object.__setattr__(self, "anomaly", anomaly)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.y == label)

    def subset(self, idx) -> "LabeledDataset":
        flags = None if self.anomaly is None else self.anomaly[idx]
        return LabeledDataset(self.x[idx], self.y[idx], flags)

    def to_csv(self, path) -> None:
        """Write ``y,x1..xp[,is_anomaly]`` rows; flags only when present."""
        path = Path(path)
        header = ["y"] + [f"x{j + 1}" for j in range(self.dim)]
        if self.anomaly is not None:
            header.append("is_anomaly")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n):
                row = [str(int(self.y[i]))] + [repr(float(v)) for v in self.x[i]]
                if self.anomaly is not None:
                    row.append(str(int(self.anomaly[i])))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "LabeledDataset":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty file") from None
            rows = [r for r in reader if r]
        if not header or header[0] != "y":
            raise ValueError(f"{path}: first column must be 'y'")
        has_flags = header[-1] == "is_anomaly"
        p = len(header) - 1 - int(has_flags)
        if p < 1:
            raise ValueError(f"{path}: no feature columns found")
        expected = [f"x{j + 1}" for j in range(p)]
        if header[1 : 1 + p] != expected:
            raise ValueError(f"{path}: feature columns must be named x1..x{p}")
        if not rows:
            raise ValueError(f"{path}: no data rows")
        y, xs, flags = [], [], []
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            y.append(int(float(row[0])))
            xs.append([float(v) for v in row[1 : 1 + p]])
            if has_flags:
                flags.append(int(float(row[-1])) != 0)
        return cls(np.array(xs), np.array(y), np.array(flags) if has_flags else None)
