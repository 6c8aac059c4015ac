"""Dense linear-algebra kernels and proximal operators.

Every function here is pure: inputs are never modified and the returned
arrays are freshly allocated.
"""

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import DataError, IllConditionedError, SvdError

PINV_RTOL = 1e-12


class SvdFactors(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray

    def reconstruct(self):
        return (self.U * self.S) @ self.Vt


def as_matrix(A, name="matrix"):
    """Return `A` as a finite 2-D float64 array or raise DataError."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DataError(f"{name} contains non-finite entries")
    return A


def svd(A):
    """Thin SVD with singular values sorted non-increasing.

    Falls back from the divide-and-conquer driver to the slower but more
    robust QR-iteration driver before giving up.
    """
    A = as_matrix(A)
    if A.size == 0:
        k = min(A.shape)
        return SvdFactors(np.zeros((A.shape[0], k)), np.zeros(k), np.zeros((k, A.shape[1])))
    attempts = 0
    for driver in ("gesdd", "gesvd"):
        attempts += 1
        try:
            U, S, Vt = scipy.linalg.svd(
                A, full_matrices=False, lapack_driver=driver, check_finite=False
            )
        except (np.linalg.LinAlgError, ValueError):
            continue
        return SvdFactors(U, S, Vt)
    raise SvdError(f"SVD did not converge after {attempts} attempts", attempts=attempts)


def _svt(A, tau):
    # returns the thresholded matrix and its singular values
    U, S, Vt = svd(A)
    S = np.maximum(S - tau, 0.0)
    keep = S > 0
    return (U[:, keep] * S[keep]) @ Vt[keep], S


def svt(A, tau):
    """Singular value thresholding, the proximal operator of ``tau * ||.||_*``.

    Returns ``U diag(max(S - tau, 0)) V^T``, the unique minimizer of
    ``tau ||M||_* + 0.5 ||M - A||_F^2``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return _svt(A, tau)[0]


def shrink_l21(Q, tau):
    """Column-wise group shrinkage, the proximal operator of ``tau * ||.||_{2,1}``.

    Each column ``q`` becomes ``max(0, 1 - tau/||q||) q``; columns whose norm
    does not exceed `tau` are zeroed.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    Q = as_matrix(Q)
    out = np.zeros_like(Q)
    # per column, so the result is bit-identical to the closed form
    for j in range(Q.shape[1]):
        q = Q[:, j]
        nq = np.linalg.norm(q)
        if nq > tau:
            out[:, j] = max(0.0, 1.0 - tau / nq) * q
    return out


def nuclear_norm(A):
    return float(np.sum(svd(A).S))


def l21_norm(A):
    return float(np.sum(np.linalg.norm(A, axis=0)))


def pinv(A):
    """Moore-Penrose pseudo-inverse.

    Singular values below ``max(m, n) * s_max * 1e-12`` count as zero.
    """
    A = as_matrix(A)
    m, n = A.shape
    if A.size == 0:
        return np.zeros((n, m))
    U, S, Vt = svd(A)
    cutoff = max(m, n) * (S[0] if S.size else 0.0) * PINV_RTOL
    # subnormal singular values would overflow on inversion
    keep = S > max(cutoff, np.finfo(np.float64).tiny)
    if not np.any(keep):
        return np.zeros((n, m))
    return (Vt[keep].T / S[keep]) @ U[:, keep].T


def numerical_rank(A):
    A = as_matrix(A)
    if A.size == 0:
        return 0
    S = svd(A).S
    if S[0] == 0:
        return 0
    return int(np.sum(S > max(A.shape) * S[0] * PINV_RTOL))


class RidgeFactor:
    """Cholesky factor of ``X^T X + lam I`` for repeated ridge solves."""

    def __init__(self, X, lam):
        if not lam > 0:
            raise ValueError("ridge parameter must be positive")
        self.X = as_matrix(X, "X")
        self.lam = float(lam)
        with np.errstate(over="ignore", invalid="ignore"):
            G = self.X.T @ self.X
        G[np.diag_indices_from(G)] += self.lam
        if not np.all(np.isfinite(G)):
            raise IllConditionedError("ridge Gram matrix overflows")
        try:
            self._cho = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedError(f"ridge system not positive definite: {exc}") from exc
        self._gram = G

    def solve(self, y, check=True):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.X.shape[0]:
            raise DataError(
                f"query has {y.shape[0]} rows, dictionary has {self.X.shape[0]}"
            )
        rhs = self.X.T @ y
        rho = scipy.linalg.cho_solve(self._cho, rhs, check_finite=False)
        if check:
            res = np.linalg.norm(self._gram @ rho - rhs)
            if res > 1e-8 * max(np.linalg.norm(rhs), np.finfo(float).tiny) and res > 0:
                # one step of iterative refinement before declaring failure
                rho = rho + scipy.linalg.cho_solve(
                    self._cho, rhs - self._gram @ rho, check_finite=False
                )
                res = np.linalg.norm(self._gram @ rho - rhs)
                if res > 1e-8 * np.linalg.norm(rhs):
                    raise IllConditionedError(
                        f"ridge residual {res:.3e} exceeds tolerance"
                    )
        return rho


def ridge_solve(X, y, lam):
    """Solve ``(X^T X + lam I) rho = X^T y`` via Cholesky."""
    return RidgeFactor(X, lam).solve(y)
