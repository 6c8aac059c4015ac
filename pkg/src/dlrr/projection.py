"""Low-rank projection ``P = Y X^+`` mapping corrupted samples to clean ones."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .linalg import as_matrix, numerical_rank, pinv
from .samples import SampleMatrix


@dataclass(frozen=True)
class ProjectionMatrix:
    """The operator ``P = left @ right`` kept in factored form.

    ``left`` is the clean matrix ``Y`` (m x n) and ``right`` is ``X^+``
    (n x m), so applying ``P`` costs ``O(mn)`` without storing ``m x m``.
    """

    left: np.ndarray
    right: np.ndarray
    source_rank: int
    residual: float = 0.0

    @property
    def dim(self):
        return self.left.shape[0]

    @property
    def matrix(self):
        return self.left @ self.right

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise DataError(f"query has dimension {v.shape[0]}, projection expects {self.dim}")
        return self.left @ (self.right @ v)


def learn_projection(X, Y):
    """Fit ``P = Y X^+``.

    ``residual`` records ``||P X - Y||_F / ||Y||_F``; it is ~0 when the rows
    of `Y` lie in the row space of `X` and the least-squares misfit otherwise.
    """
    if isinstance(X, SampleMatrix):
        X = X.data
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape != Y.shape:
        raise DataError(f"X has shape {X.shape} but Y has shape {Y.shape}")
    Xp = pinv(X)
    ynorm = np.linalg.norm(Y)
    fit = Y @ (Xp @ X)
    residual = float(np.linalg.norm(fit - Y) / ynorm) if ynorm > 0 else 0.0
    return ProjectionMatrix(Y.copy(), Xp, numerical_rank(X), residual)


def correct_sample(P, y):
    """Return ``P y`` (column-wise when `y` is a matrix)."""
    return P.apply(y)
