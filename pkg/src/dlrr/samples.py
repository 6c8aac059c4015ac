"""Labelled sample matrices: one vectorized sample per column."""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class SampleMatrix:
    """Column-major collection of samples with one integer label per column.

    ``geometry`` is the ``(height, width)`` of the images the columns were
    vectorized from, when known; vectorization is column-major (Fortran order).
    """

    data: np.ndarray
    labels: np.ndarray
    geometry: Optional[Tuple[int, int]] = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if data.ndim != 2:
            raise DataError(f"sample data must be 2-D, got shape {data.shape}")
        if labels.shape[0] != data.shape[1]:
            raise DataError(
                f"{labels.shape[0]} labels for {data.shape[1]} sample columns"
            )
        if not np.all(np.isfinite(data)):
            raise DataError("sample data contains non-finite entries")
        if self.geometry is not None:
            h, w = (int(v) for v in self.geometry)
            if h * w != data.shape[0]:
                raise DataError(
                    f"geometry {h}x{w} does not match sample dimension {data.shape[0]}"
                )
            object.__setattr__(self, "geometry", (h, w))
        data.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def classes(self):
        return np.unique(self.labels)

    def class_indices(self, label):
        return np.flatnonzero(self.labels == label)

    def class_block(self, label):
        return self.data[:, self.labels == label]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleMatrix(self.data[:, idx], self.labels[idx], self.geometry)

    def with_data(self, data):
        return SampleMatrix(data, self.labels, self.geometry)

    def sorted_by_class(self):
        """Stable reordering so that each class occupies a contiguous block."""
        return self.subset(np.argsort(self.labels, kind="stable"))

    def image(self, j):
        if self.geometry is None:
            raise DataError("sample matrix has no image geometry")
        return self.data[:, j].reshape(self.geometry, order="F")
