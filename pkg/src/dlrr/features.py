"""Eigenface-style PCA feature space."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .linalg import as_matrix, svd

DEFAULT_DIMS = (25, 50, 75, 100, 200, 300)
VARIANCE_RTOL = 1e-12


@dataclass(frozen=True)
class FeatureSpace:
    basis: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def input_dim(self):
        return self.basis.shape[0]


def available_dims(D):
    """Number of principal directions of `D` above the degeneracy cutoff."""
    D = as_matrix(D, "D")
    if D.shape[1] < 2:
        return 0
    S = svd(D - D.mean(axis=1, keepdims=True)).S
    if S.size == 0 or S[0] == 0:
        return 0
    return int(np.sum(S**2 > VARIANCE_RTOL * S[0] ** 2))


def fit_pca(D, dim):
    """Top-`dim` principal directions of the columns of `D`.

    Directions whose variance falls below 1e-12 of the largest are treated
    as absent; asking for more than remain raises DimensionError.
    """
    D = as_matrix(D, "D")
    m, n = D.shape
    dim = int(dim)
    if dim < 1:
        raise DimensionError("dim must be positive")
    if dim > min(m, n - 1):
        raise DimensionError(f"dim {dim} exceeds min(rows, cols - 1) = {min(m, n - 1)}")
    mean = D.mean(axis=1)
    U, S, _ = svd(D - mean[:, None])
    eig = S**2 / (n - 1)
    usable = int(np.sum(eig > VARIANCE_RTOL * eig[0])) if eig[0] > 0 else 0
    if dim > usable:
        raise DimensionError(
            f"dim {dim} requested but only {usable} non-degenerate directions exist"
        )
    basis = U[:, :dim]
    # deterministic sign: largest-magnitude entry of each direction positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(dim)])
    flip[flip == 0] = 1.0
    return FeatureSpace(np.ascontiguousarray(basis * flip), mean, eig[:dim])


def project(space, v):
    """``basis^T (v - mean)``, column-wise for matrices."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != space.input_dim:
        raise DataError(f"input has dimension {v.shape[0]}, feature space expects {space.input_dim}")
    if v.ndim == 1:
        return space.basis.T @ (v - space.mean)
    return space.basis.T @ (v - space.mean[:, None])
