import numpy as np
import pytest

from conftest import gross_synth
from dlrr import solver as solver_mod
from dlrr.errors import ConfigError, SolverError
from dlrr.samples import SampleMatrix
from dlrr.solver import (
    TRACE_HEADER,
    ClassBlock,
    DlrrState,
    SolverConfig,
    coupling_gram,
    incoherence,
    lipschitz_constant,
    recover_dictionary,
    solve_class,
    update_E,
    update_J,
    update_Z,
)


def random_state(rng, m, n, mu=None):
    return DlrrState(
        Z=rng.standard_normal((n, n)),
        J=rng.standard_normal((n, n)),
        E=rng.standard_normal((m, n)),
        Y1=rng.standard_normal((m, n)),
        Y2=rng.standard_normal((n, n)),
        mu=rng.uniform(0.1, 10) if mu is None else mu,
    )


def nuc(A):
    return np.linalg.svd(A, compute_uv=False).sum()


# --- config -----------------------------------------------------------------


def test_config_defaults_and_validation():
    c = SolverConfig()
    assert (c.lam, c.eta, c.mu0, c.rho, c.mu_max, c.epsilon, c.max_iter) == (
        0.02, 0.001, 1e-6, 1.1, 1e10, 1e-3, 500
    )
    for bad in (dict(lam=0), dict(eta=-1), dict(rho=1.0), dict(mu0=0), dict(max_iter=0)):
        with pytest.raises(ConfigError):
            SolverConfig(**bad)


# --- Z step -----------------------------------------------------------------


def test_z_step_scalar_by_hand():
    # X = 1, Z = 1, rest 0: sigma = 2, grad/mu = 1, so Z - g/sigma = 0.5
    block = ClassBlock(np.ones((1, 1)))
    state = DlrrState(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                      np.zeros((1, 1)), np.zeros((1, 1)), mu=4.0)
    assert lipschitz_constant(block.data) == 2.0
    # threshold 1/(mu*sigma) = 1/8
    assert update_Z(state, block, SolverConfig())[0, 0] == pytest.approx(0.375)
    state.mu = 1.0  # threshold 1/2 kills it
    assert update_Z(state, block, SolverConfig())[0, 0] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_z_step_minimizes_linearized_surrogate(seed):
    rng = np.random.default_rng(seed)
    m, n = 7, 5
    block = ClassBlock(rng.standard_normal((m, n)))
    state = random_state(rng, m, n)
    X, mu = block.data, state.mu
    sigma = np.linalg.norm(X, 2) ** 2 + 1
    grad = -mu * X.T @ (X - X @ state.Z - state.E + state.Y1 / mu) + mu * (
        state.Z - state.J + state.Y2 / mu
    )

    def surrogate(Z):
        D = Z - state.Z
        return nuc(Z) + np.sum(grad * D) + 0.5 * mu * sigma * np.sum(D * D)

    Z_new = update_Z(state, block, SolverConfig())
    h = surrogate(Z_new)
    assert h <= surrogate(state.Z) + 1e-10
    for _ in range(20):
        assert h <= surrogate(Z_new + 1e-3 * rng.standard_normal((n, n))) + 1e-12


# --- J step -----------------------------------------------------------------


def make_multiclass(rng, classes=3, m=9, sizes=(3, 4, 2)):
    blocks = [rng.standard_normal((m, s)) for s in sizes[:classes]]
    Zs = [rng.standard_normal((s, s)) for s in sizes[:classes]]
    return blocks, Zs


@pytest.mark.parametrize("seed", range(10))
def test_j_step_stationarity(seed):
    rng = np.random.default_rng(seed)
    blocks, Zs = make_multiclass(rng)
    i = seed % 3
    X_i = blocks[i]
    others = [j for j in range(3) if j != i]
    coupling = [blocks[j] @ Zs[j] for j in others]
    n = X_i.shape[1]
    state = random_state(rng, X_i.shape[0], n)
    cfg = SolverConfig(eta=rng.uniform(1e-3, 1.0))
    J = update_J(state, ClassBlock(X_i, i), coupling, cfg)
    # gradient of eta/2 sum ||B_j J||^2 - <Y2, J> + mu/2 ||Z - J||^2
    grad = -state.Y2 - state.mu * (state.Z - J)
    for j in others:
        B = (blocks[j] @ Zs[j]).T @ X_i
        grad += cfg.eta * B.T @ (B @ J)
    assert np.linalg.norm(grad) <= 1e-8 * max(1.0, np.linalg.norm(state.mu * state.Z + state.Y2))


def test_j_step_matches_vectorized_least_squares(rng):
    blocks, Zs = make_multiclass(rng)
    X_i = blocks[0]
    n = X_i.shape[1]
    state = random_state(rng, X_i.shape[0], n)
    cfg = SolverConfig(eta=0.3)
    coupling = [blocks[j] @ Zs[j] for j in (1, 2)]
    J = update_J(state, ClassBlock(X_i), coupling, cfg)
    # stack sqrt(eta) (I kron B_j) and sqrt(mu) I, solve in vec form
    rows = [np.sqrt(cfg.eta) * np.kron(np.eye(n), D.T @ X_i) for D in coupling]
    rows.append(np.sqrt(state.mu) * np.eye(n * n))
    rhs = [np.zeros(D.shape[1] * n) for D in coupling]
    rhs.append(np.sqrt(state.mu) * (state.Z + state.Y2 / state.mu).reshape(-1, order="F"))
    vec, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    np.testing.assert_allclose(J, vec.reshape((n, n), order="F"), atol=1e-10)


def test_j_step_without_coupling_is_shifted_z(rng):
    state = random_state(rng, 4, 3)
    block = ClassBlock(rng.standard_normal((4, 3)))
    expected = state.Z + state.Y2 / state.mu
    np.testing.assert_allclose(update_J(state, block, [], SolverConfig()), expected)
    np.testing.assert_allclose(update_J(state, block, [np.ones((4, 2))], SolverConfig(eta=0.0)), expected)


def test_coupling_gram_sums_blocks(rng):
    X = rng.standard_normal((5, 2))
    D1, D2 = rng.standard_normal((5, 3)), rng.standard_normal((5, 1))
    expected = (D1.T @ X).T @ (D1.T @ X) + (D2.T @ X).T @ (D2.T @ X)
    np.testing.assert_allclose(coupling_gram(X, [D1, D2]), expected)


# --- E step -----------------------------------------------------------------


def test_e_step_is_columnwise_closed_form(rng):
    m, n = 6, 4
    block = ClassBlock(rng.standard_normal((m, n)))
    state = random_state(rng, m, n, mu=2.0)
    cfg = SolverConfig(lam=3.0)
    Q = block.data - block.data @ state.Z + state.Y1 / state.mu
    expected = np.zeros_like(Q)
    for j in range(n):
        q = Q[:, j]
        nq = np.linalg.norm(q)
        if nq > cfg.lam / state.mu:
            expected[:, j] = max(0.0, 1.0 - cfg.lam / state.mu / nq) * q
    np.testing.assert_array_equal(update_E(state, block, cfg), expected)


# --- solve_class ------------------------------------------------------------


def lrr_reference(X, lam, mu0=1e-6, rho=1.1, mu_max=1e10, eps=1e-3, max_iter=500):
    """Plain inexact-ALM LRR with a linearized Z step, written from scratch."""
    m, n = X.shape
    Z = np.zeros((n, n)); J = np.zeros((n, n)); E = np.zeros((m, n))
    Y1 = np.zeros((m, n)); Y2 = np.zeros((n, n))
    mu = mu0
    sigma = np.linalg.norm(X, 2) ** 2 + 1
    for _ in range(max_iter):
        G = -X.T @ (X - X @ Z - E + Y1 / mu) + (Z - J + Y2 / mu)
        U, s, Vt = np.linalg.svd(Z - G / sigma, full_matrices=False)
        Z = (U * np.maximum(s - 1 / (mu * sigma), 0)) @ Vt
        J = Z + Y2 / mu
        Q = X - X @ Z + Y1 / mu
        norms = np.linalg.norm(Q, axis=0)
        E = Q * np.where(norms > lam / mu, 1 - lam / (mu * np.maximum(norms, 1e-300)), 0.0)
        R1, R2 = X - X @ Z - E, Z - J
        Y1 += mu * R1
        Y2 += mu * R2
        mu = min(rho * mu, mu_max)
        if np.abs(R1).max() < eps and np.abs(R2).max() < eps:
            break
    return Z, E


def test_eta_zero_matches_reference_lrr():
    X, _, _ = gross_synth(3, classes=1, per_class=15)
    cfg = SolverConfig(lam=0.15, eta=0.0)
    sol = solve_class(ClassBlock(X.data), [np.ones((100, 4))], cfg)
    Z_ref, E_ref = lrr_reference(X.data, 0.15)
    np.testing.assert_allclose(sol.Z, Z_ref, atol=1e-6)
    np.testing.assert_allclose(sol.E, E_ref, atol=1e-6)


def test_rank_one_block_is_recovered_exactly(rng):
    u, v = rng.standard_normal(10), rng.standard_normal(6)
    X = np.outer(u, v)
    sol = solve_class(ClassBlock(X), [], SolverConfig(lam=1.0))
    assert sol.converged
    assert np.linalg.norm(X @ sol.Z - X) <= 1e-2 * np.linalg.norm(X)
    assert np.linalg.norm(sol.E) <= 1e-2 * np.linalg.norm(X)
    s = np.linalg.svd(sol.Z, compute_uv=False)
    assert s[1] <= 1e-6 * s[0]


def test_corrupted_columns_carry_the_error():
    X, _, cols = gross_synth(0)
    rec = recover_dictionary(X, SolverConfig(lam=0.15))
    col_energy = np.sum(rec.error**2, axis=0)
    assert col_energy[cols].sum() > 0.5 * col_energy.sum()


def test_solve_class_trace_and_convergence():
    X, _, _ = gross_synth(1, classes=1)
    lines = []
    sol = solve_class(ClassBlock(X.data, class_id=7), [], SolverConfig(lam=0.15), trace=lines.append)
    assert sol.converged
    assert sol.primal_residual < 1e-3 and sol.constraint_residual < 1e-3
    assert len(lines) == sol.iterations == len(sol.objective_trace)
    rows = [ln.split(",") for ln in lines]
    assert all(len(r) == len(TRACE_HEADER.split(",")) and r[0] == "7" for r in rows)
    mus = [float(r[3]) for r in rows]
    assert all(b >= a for a, b in zip(mus, mus[1:]))
    assert mus[0] == pytest.approx(1.1e-6)


def test_iteration_cap_reports_not_converged():
    X, _, _ = gross_synth(1, classes=1)
    sol = solve_class(ClassBlock(X.data), [], SolverConfig(lam=0.15, max_iter=3))
    assert not sol.converged and sol.iterations == 3


def test_primal_residual_settles_near_the_end():
    # smoke check on the Frobenius residual over the final iterations
    X, _, _ = gross_synth(2, classes=1)
    block = ClassBlock(X.data)
    cfg = SolverConfig(lam=0.15)
    state = DlrrState.initial(block, cfg)
    res = []
    for k in range(500):
        state.Z = update_Z(state, block, cfg)
        state.J = update_J(state, block, [], cfg)
        state.E = update_E(state, block, cfg)
        R1 = block.data - block.data @ state.Z - state.E
        R2 = state.Z - state.J
        state.Y1 += state.mu * R1
        state.Y2 += state.mu * R2
        state.mu = min(cfg.rho * state.mu, cfg.mu_max)
        res.append(np.linalg.norm(R1))
        if np.abs(R1).max() < cfg.epsilon and np.abs(R2).max() < cfg.epsilon:
            break
    tail = res[-10:]
    assert tail[-1] <= tail[0]
    assert sum(b > a for a, b in zip(tail, tail[1:])) <= 3


def test_non_finite_iterate_names_the_class(monkeypatch):
    X, _, _ = gross_synth(0)

    def broken(A, tau):
        return np.full_like(A, np.nan), np.zeros(min(A.shape))

    monkeypatch.setattr(solver_mod, "_svt", broken)
    with pytest.raises(SolverError) as info:
        recover_dictionary(X, SolverConfig(lam=0.15))
    assert info.value.class_id == 0


# --- recover_dictionary -----------------------------------------------------


def test_single_class_equals_solve_class():
    X, _, _ = gross_synth(4, classes=1)
    cfg = SolverConfig(lam=0.15)
    rec = recover_dictionary(X, cfg)
    sol = solve_class(ClassBlock(X.data), [], cfg)
    # same arithmetic up to memory layout of the class block
    np.testing.assert_allclose(rec.per_class_Z[0], sol.Z, atol=1e-12)
    np.testing.assert_allclose(rec.clean_dictionary, X.data @ sol.Z, atol=1e-12)


def test_recovery_is_aligned_with_input_columns():
    X, _, _ = gross_synth(2)
    cfg = SolverConfig(lam=0.15)
    perm = np.random.default_rng(0).permutation(X.n_samples)
    shuffled = SampleMatrix(X.data[:, perm], X.labels[perm])
    a = recover_dictionary(X, cfg)
    b = recover_dictionary(shuffled, cfg)
    np.testing.assert_allclose(b.clean_dictionary, a.clean_dictionary[:, perm], atol=1e-10)
    np.testing.assert_allclose(b.error, a.error[:, perm], atol=1e-10)


def test_recovery_is_deterministic():
    X, _, _ = gross_synth(3)
    a = recover_dictionary(X, SolverConfig(lam=0.15))
    b = recover_dictionary(X, SolverConfig(lam=0.15))
    np.testing.assert_array_equal(a.clean_dictionary, b.clean_dictionary)
    assert a.class_ids == [0, 1, 2] and a.all_converged


def test_incoherence_of_orthogonal_classes_is_zero(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 4)))
    D = np.hstack([Q[:, :2], Q[:, 2:]])
    assert incoherence(D, [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-25)
    D[:, 2] = D[:, 0]
    assert incoherence(D, [0, 0, 1, 1]) == pytest.approx(2.0)
