"""Discriminative low-rank representation solved class by class with inexact ALM.

For each class block ``X_i`` the solver minimizes::

    ||Z||_* + lam ||E||_{2,1} + eta/2 * sum_{j != i} ||(X_j Z_j)^T X_i J||_F^2
    s.t.  X_i = X_i Z + E,  Z = J

with a linearized nuclear-norm step for ``Z``, a closed-form quadratic step
for ``J`` and group shrinkage for ``E``. With ``eta = 0`` it reduces to plain
LRR on the class block.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from .errors import ConfigError, SolverError
from .linalg import _svt, as_matrix, l21_norm, shrink_l21, svd
from .samples import SampleMatrix

TRACE_HEADER = "class_id,pass,iteration,mu,primal_residual,constraint_residual,objective"


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.02
    eta: float = 0.001
    mu0: float = 1e-6
    rho: float = 1.1
    mu_max: float = 1e10
    epsilon: float = 1e-3
    max_iter: int = 500
    outer_passes: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lam must be positive")
        if not self.eta >= 0:
            raise ConfigError("eta must be nonnegative")
        if not self.mu0 > 0 or not self.mu_max >= self.mu0:
            raise ConfigError("need 0 < mu0 <= mu_max")
        if not self.rho > 1:
            raise ConfigError("rho must exceed 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if int(self.max_iter) < 1 or int(self.outer_passes) < 1:
            raise ConfigError("max_iter and outer_passes must be positive")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class ClassBlock:
    data: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        data = as_matrix(self.data, "class block")
        if data.shape[1] < 1:
            raise ConfigError(f"class {self.class_id} has no samples")
        object.__setattr__(self, "data", data)


@dataclass
class DlrrState:
    Z: np.ndarray
    J: np.ndarray
    E: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    mu: float
    iter: int = 0

    @classmethod
    def initial(cls, block, config):
        m, n = block.data.shape
        return cls(
            Z=np.zeros((n, n)),
            J=np.zeros((n, n)),
            E=np.zeros((m, n)),
            Y1=np.zeros((m, n)),
            Y2=np.zeros((n, n)),
            mu=float(config.mu0),
        )


@dataclass
class ClassSolution:
    class_id: int
    Z: np.ndarray
    E: np.ndarray
    J: np.ndarray
    iterations: int
    converged: bool
    primal_residual: float
    constraint_residual: float
    objective_trace: List[float] = field(default_factory=list)


@dataclass
class RecoveryResult:
    """Per-class solutions plus the recovered clean dictionary.

    ``clean_dictionary`` and ``error`` are aligned column for column with the
    training matrix they were recovered from.
    """

    class_ids: List[int]
    per_class_Z: List[np.ndarray]
    per_class_E: List[np.ndarray]
    clean_dictionary: np.ndarray
    error: np.ndarray
    objective_trace: List[float]
    converged: List[bool]
    iterations: List[int]

    @property
    def all_converged(self):
        return all(self.converged)


def lipschitz_constant(X):
    """Linearization constant ``||X||_2^2 + 1`` for the Z step."""
    X = np.asarray(X)
    if X.size == 0:
        return 1.0
    return float(svd(X).S[0] ** 2 + 1.0)


def coupling_gram(X_i, coupling_blocks):
    """``sum_j B_j^T B_j`` with ``B_j = (X_j Z_j)^T X_i``.

    `coupling_blocks` holds the clean blocks ``D_j = X_j Z_j`` of the other
    classes.
    """
    n = X_i.shape[1]
    C = np.zeros((n, n))
    for D_j in coupling_blocks:
        B = np.asarray(D_j).T @ X_i
        C += B.T @ B
    return C


def update_Z(state, block, config, sigma=None, gram=None):
    """Linearized proximal step on the nuclear norm.

    Returns ``svt(Z - grad/(mu*sigma), 1/(mu*sigma))``.
    """
    Z, _ = _z_step(state, block.data, sigma, gram)
    return Z


def _z_step(state, X, sigma=None, gram=None):
    if sigma is None:
        sigma = lipschitz_constant(X)
    if gram is None:
        gram = X.T @ X
    mu = state.mu
    # grad / mu
    g = -(gram - gram @ state.Z - X.T @ state.E + X.T @ state.Y1 / mu) + (
        state.Z - state.J + state.Y2 / mu
    )
    step = mu * sigma
    return _svt(state.Z - g / sigma, 1.0 / step)


def update_J(state, block, coupling_blocks, config, C=None):
    """Exact minimizer of the J subproblem.

    Solves ``(eta * sum_j B_j^T B_j + mu I) J = mu Z + Y2``.
    """
    mu = state.mu
    rhs = mu * state.Z + state.Y2
    if config.eta == 0:
        return rhs / mu
    if C is None:
        C = coupling_gram(block.data, coupling_blocks)
    if not np.any(C):
        return rhs / mu
    A = config.eta * C
    A[np.diag_indices_from(A)] += mu
    try:
        cho = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"J system not positive definite: {exc}", class_id=block.class_id, iteration=state.iter
        ) from exc
    return scipy.linalg.cho_solve(cho, rhs, check_finite=False)


def update_E(state, block, config):
    """Group shrinkage of ``X - X Z + Y1/mu`` with threshold ``lam/mu``."""
    X = block.data
    return shrink_l21(X - X @ state.Z + state.Y1 / state.mu, config.lam / state.mu)


def class_objective(Z_singular_values, E, J, C, config):
    obj = float(np.sum(Z_singular_values)) + config.lam * l21_norm(E)
    if config.eta and C is not None:
        obj += 0.5 * config.eta * float(np.sum(J * (C @ J)))
    return obj


def solve_class(block, coupling_blocks=(), config=SolverConfig(), trace=None, pass_index=0):
    """Run inexact ALM on one class block.

    Parameters
    ----------
    block : ClassBlock
    coupling_blocks : sequence of ndarray
        Clean blocks ``X_j Z_j`` of every other class.
    config : SolverConfig
    trace : callable, optional
        Receives one CSV line (see ``TRACE_HEADER``) per iteration.

    Returns
    -------
    ClassSolution
        ``converged`` is False when ``max_iter`` was reached first.
    """
    X = block.data
    gram = X.T @ X
    sigma = lipschitz_constant(X)
    C = coupling_gram(X, coupling_blocks) if config.eta and len(coupling_blocks) else None

    state = DlrrState.initial(block, config)
    objective_trace = []
    converged = False
    primal = constraint = np.inf
    for k in range(int(config.max_iter)):
        state.iter = k
        state.Z, s = _z_step(state, X, sigma, gram)
        state.J = update_J(state, block, coupling_blocks, config, C=C)
        state.E = update_E(state, block, config)

        R1 = X - X @ state.Z - state.E
        R2 = state.Z - state.J
        state.Y1 = state.Y1 + state.mu * R1
        state.Y2 = state.Y2 + state.mu * R2
        state.mu = min(config.rho * state.mu, config.mu_max)

        primal = float(np.max(np.abs(R1))) if R1.size else 0.0
        constraint = float(np.max(np.abs(R2)))
        obj = class_objective(s, state.E, state.J, C, config)
        objective_trace.append(obj)

        finite = np.isfinite(obj) and all(
            np.all(np.isfinite(M)) for M in (state.Z, state.J, state.E, state.Y1, state.Y2)
        )
        if not finite:
            raise SolverError(
                f"class {block.class_id}: non-finite iterate at iteration {k}",
                class_id=block.class_id,
                iteration=k,
            )
        if trace is not None:
            trace(
                f"{block.class_id},{pass_index},{k},{state.mu:.17g},{primal:.17g},"
                f"{constraint:.17g},{obj:.17g}"
            )
        if primal < config.epsilon and constraint < config.epsilon:
            converged = True
            break

    return ClassSolution(
        class_id=block.class_id,
        Z=state.Z,
        E=state.E,
        J=state.J,
        iterations=state.iter + 1,
        converged=converged,
        primal_residual=primal,
        constraint_residual=constraint,
        objective_trace=objective_trace,
    )


def recover_dictionary(X, config=SolverConfig(), trace: Optional[Callable[[str], None]] = None):
    """Recover a clean dictionary ``D = [X_1 Z_1, ..., X_N Z_N]``.

    Classes are solved in ascending label order. Every class's coupling copy
    starts at ``Z_j = I`` (so ``D_j = X_j``) and is replaced by the solved
    ``X_j Z_j`` as soon as class ``j`` finishes.
    """
    if not isinstance(X, SampleMatrix):
        raise TypeError("recover_dictionary expects a SampleMatrix")
    class_ids = [int(c) for c in X.classes]
    if not class_ids:
        raise ConfigError("training matrix has no classes")
    index = {c: X.class_indices(c) for c in class_ids}
    blocks = {c: ClassBlock(X.data[:, index[c]], c) for c in class_ids}
    clean = {c: blocks[c].data.copy() for c in class_ids}

    solutions = {}
    objective_trace = []
    for p in range(int(config.outer_passes)):
        for c in class_ids:
            coupling = [clean[j] for j in class_ids if j != c]
            try:
                sol = solve_class(blocks[c], coupling, config, trace=trace, pass_index=p)
            except SolverError as exc:
                if exc.class_id is None:
                    exc.class_id = c
                raise
            except Exception as exc:
                raise SolverError(f"class {c}: {exc}", class_id=c) from exc
            solutions[c] = sol
            clean[c] = blocks[c].data @ sol.Z
            objective_trace.extend(sol.objective_trace)

    D = np.zeros_like(X.data)
    E = np.zeros_like(X.data)
    for c in class_ids:
        D[:, index[c]] = clean[c]
        E[:, index[c]] = solutions[c].E
    return RecoveryResult(
        class_ids=class_ids,
        per_class_Z=[solutions[c].Z for c in class_ids],
        per_class_E=[solutions[c].E for c in class_ids],
        clean_dictionary=D,
        error=E,
        objective_trace=objective_trace,
        converged=[solutions[c].converged for c in class_ids],
        iterations=[solutions[c].iterations for c in class_ids],
    )


def incoherence(D, labels):
    """``sum_{i != j} ||D_j^T D_i||_F^2`` over ordered class pairs."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    total = 0.0
    for a in classes:
        Da = D[:, labels == a]
        for b in classes:
            if a != b:
                total += float(np.sum((D[:, labels == b].T @ Da) ** 2))
    return total
