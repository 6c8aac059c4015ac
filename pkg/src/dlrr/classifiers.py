"""Representation-based classifiers: CRC (primary), SRC, LRC and NN.

Every rule returns a ClassificationOutcome whose residual vector has one
entry per class (ascending label order); the prediction is the argmin, with
ties going to the lowest label.
"""

import csv
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.linalg

from .errors import DataError, DegenerateQueryError
from .linalg import RidgeFactor, as_matrix, pinv

SRC_TOL = 1e-6
SRC_MAX_ITER = 1000


@dataclass(frozen=True)
class CoefficientVector:
    values: np.ndarray
    offsets: np.ndarray  # class k occupies values[offsets[k]:offsets[k+1]]

    def block(self, k):
        return self.values[self.offsets[k] : self.offsets[k + 1]]

    @property
    def blocks(self):
        return [self.block(k) for k in range(len(self.offsets) - 1)]


@dataclass(frozen=True)
class ClassificationOutcome:
    predicted_class: int
    classes: np.ndarray
    residuals: np.ndarray
    coefficients: Optional[CoefficientVector] = None
    status: str = "ok"


class Dictionary:
    """Training samples grouped by class, columns contiguous per class.

    Columns are stably reordered by label and, by default, scaled to unit
    ℓ2 norm. Zero columns are left as zero.
    """

    def __init__(self, samples, labels, normalize=True):
        samples = as_matrix(samples, "dictionary")
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != samples.shape[1]:
            raise DataError("one label per dictionary column required")
        if samples.shape[1] == 0:
            raise DataError("dictionary is empty")
        order = np.argsort(labels, kind="stable")
        samples = samples[:, order]
        labels = labels[order]
        if normalize:
            norms = np.linalg.norm(samples, axis=0)
            norms[norms == 0] = 1.0
            samples = samples / norms
        self.samples = samples
        self.labels = labels
        self.order = order
        self.normalized = bool(normalize)
        self.classes, starts = np.unique(labels, return_index=True)
        self.offsets = np.append(starts, labels.shape[0])
        self.samples.setflags(write=False)
        self._ridge: Dict[float, RidgeFactor] = {}
        self._src: Dict[float, tuple] = {}
        self._class_pinv = None

    @property
    def class_count(self):
        return len(self.classes)

    @property
    def dim(self):
        return self.samples.shape[0]

    def class_columns(self, k):
        return self.samples[:, self.offsets[k] : self.offsets[k + 1]]

    def ridge(self, beta):
        beta = float(beta)
        if beta not in self._ridge:
            self._ridge[beta] = RidgeFactor(self.samples, beta)
        return self._ridge[beta]

    def class_pinvs(self):
        if self._class_pinv is None:
            self._class_pinv = [pinv(self.class_columns(k)) for k in range(self.class_count)]
        return self._class_pinv

    def _check_query(self, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.dim:
            raise DataError(f"query has dimension {y.shape[0]}, dictionary has {self.dim}")
        if not np.all(np.isfinite(y)):
            raise DataError("query contains non-finite entries")
        return y

    def _unit_query(self, y):
        if not self.normalized:
            return y
        n = np.linalg.norm(y)
        return y / n if n > 0 else y


def _outcome(dic, residuals, coef=None, status="ok"):
    residuals = np.asarray(residuals, dtype=np.float64)
    k = int(np.argmin(residuals))  # first minimum == lowest label
    return ClassificationOutcome(int(dic.classes[k]), dic.classes, residuals, coef, status)


def crc_classify(dic, y, beta=1.1):
    """Collaborative representation with regularized residuals.

    ``rho = (X^T X + beta I)^{-1} X^T y`` and class ``i`` scores
    ``||y - X_i rho_i|| / ||rho_i||``; classes with ``rho_i = 0`` score inf.
    """
    y = dic._check_query(y)
    rho = dic.ridge(beta).solve(y)
    coef = CoefficientVector(rho, dic.offsets)
    residuals = np.full(dic.class_count, np.inf)
    for k in range(dic.class_count):
        rk = coef.block(k)
        nrm = np.linalg.norm(rk)
        if nrm > 0:
            residuals[k] = np.linalg.norm(y - dic.class_columns(k) @ rk) / nrm
    if np.all(np.isinf(residuals)):
        raise DegenerateQueryError("every class coefficient block is zero")
    return _outcome(dic, residuals, coef)


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_objective(X, y, alpha, lam):
    return float(np.sum((y - X @ alpha) ** 2) + lam * np.sum(np.abs(alpha)))


def lasso_admm(X, y, lam, penalty=None, tol=SRC_TOL, max_iter=SRC_MAX_ITER, factor=None):
    """ADMM for ``min ||y - X a||^2 + lam ||a||_1``.

    Returns ``(alpha, iterations, converged)``; alpha is the sparse split
    variable so it carries exact zeros.
    """
    n = X.shape[1]
    rho = float(penalty) if penalty is not None else default_penalty(lam)
    if factor is None:
        factor = _admm_factor(X, rho)
    Xty2 = 2.0 * (X.T @ y)
    z = np.zeros(n)
    u = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, int(max_iter) + 1):
        a = scipy.linalg.cho_solve(factor, Xty2 + rho * (z - u), check_finite=False)
        z_old = z
        z = soft_threshold(a + u, lam / rho)
        u = u + a - z
        r = np.linalg.norm(a - z)
        s = rho * np.linalg.norm(z - z_old)
        if r <= tol * max(1.0, np.linalg.norm(a)) and s <= tol * max(1.0, rho * np.linalg.norm(u)):
            converged = True
            break
    return z, it, converged


def default_penalty(lam):
    # tuned for unit-norm columns and queries; 10*lam converged fastest on random systems
    return max(10.0 * float(lam), 1e-8)


def _admm_factor(X, rho):
    G = 2.0 * (X.T @ X)
    G[np.diag_indices_from(G)] += rho
    return scipy.linalg.cho_factor(G, lower=True, check_finite=False)


def src_classify(dic, y, lam=0.001, tol=SRC_TOL, max_iter=SRC_MAX_ITER):
    """Sparse representation: ℓ1-regularized coding, classify by ``||y - X_i a_i||``.

    A query that does not converge within `max_iter` still gets a prediction
    from the last iterate, with ``status == "max_iter"`` and a warning.
    """
    y = dic._unit_query(dic._check_query(y))
    lam = float(lam)
    if lam not in dic._src:
        rho = default_penalty(lam)
        dic._src[lam] = (rho, _admm_factor(dic.samples, rho))
    rho, factor = dic._src[lam]
    alpha, _, ok = lasso_admm(dic.samples, y, lam, rho, tol, max_iter, factor)
    if not np.any(alpha):
        raise DegenerateQueryError("sparse code is identically zero")
    status = "ok"
    if not ok:
        status = "max_iter"
        warnings.warn("SRC solver hit the iteration limit; using last iterate", RuntimeWarning)
    coef = CoefficientVector(alpha, dic.offsets)
    residuals = np.array(
        [np.linalg.norm(y - dic.class_columns(k) @ coef.block(k)) for k in range(dic.class_count)]
    )
    return _outcome(dic, residuals, coef, status)


def lrc_classify(dic, y):
    """Class-wise least squares; class ``i`` scores ``||y - X_i X_i^+ y||``."""
    y = dic._check_query(y)
    betas = [P @ y for P in dic.class_pinvs()]
    residuals = np.array(
        [np.linalg.norm(y - dic.class_columns(k) @ b) for k, b in enumerate(betas)]
    )
    coef = CoefficientVector(np.concatenate(betas), dic.offsets)
    return _outcome(dic, residuals, coef)


def nn_classify(dic, y):
    """Nearest training column in Euclidean distance.

    With a normalized dictionary the query is normalized as well. Each class
    scores its minimum distance.
    """
    y = dic._unit_query(dic._check_query(y))
    dist = np.linalg.norm(dic.samples - y[:, None], axis=0)
    residuals = np.array(
        [dist[dic.offsets[k] : dic.offsets[k + 1]].min() for k in range(dic.class_count)]
    )
    return _outcome(dic, residuals)


CLASSIFIERS = {
    "crc": crc_classify,
    "src": src_classify,
    "lrc": lrc_classify,
    "nn": nn_classify,
}


def classify(dic, y, method="crc", **params):
    try:
        rule = CLASSIFIERS[method]
    except KeyError:
        raise ValueError(f"unknown classifier {method!r}") from None
    return rule(dic, y, **params)


def classify_batch(dic, Y, method="crc", **params):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    return [classify(dic, Y[:, j], method, **params) for j in range(Y.shape[1])]


def outcome_header(classes):
    return ["query_index", "true_label", "predicted_label"] + [
        f"residual_{int(c)}" for c in classes
    ]


def outcome_row(j, outcome, true_label=None):
    return [j, "" if true_label is None else int(true_label), outcome.predicted_class] + [
        repr(float(r)) for r in outcome.residuals
    ]


def write_outcomes_csv(path_or_file, outcomes, classes, true_labels=None):
    """One row per query: ``query_index,true_label,predicted_label,residual_*``."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(outcome_header(classes))
        for j, o in enumerate(outcomes):
            if o is None:
                continue
            w.writerow(outcome_row(j, o, None if true_labels is None else true_labels[j]))
    finally:
        if own:
            fh.close()
