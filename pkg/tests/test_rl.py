from itertools import combinations_with_replacement

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polybandit import rl
from polybandit.constants import Constants

RL_C = Constants(C_n=0.2, C_m=0.5, C_L=0.5)


def quad_probe(M, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)

    def f(Phi):
        Phi = np.atleast_2d(Phi)
        y = np.einsum("ni,ij,nj->n", Phi, M, Phi)
        return y + noise * rng.standard_normal(y.shape) if noise else y
    return f


def diag_mdp(d, H, seed=0):
    rng = np.random.default_rng(seed)
    S, A = 3, 5
    R = np.stack([np.diag(rng.uniform(0, 0.3, d)) for _ in range(H)])
    D = np.stack([np.diag(rng.uniform(0, 0.5, d)) for _ in range(S)])
    psi = rng.standard_normal((S, A, d))
    psi /= np.linalg.norm(psi, axis=2, keepdims=True)
    return rl.QuadraticMDP(H, d, d, np.eye(d), R, D, rng.dirichlet(np.ones(S)), psi)


def test_seed_determinism():
    a = rl.make_bellman_complete_mdp(6, 2, 3, seed=5)
    b = rl.make_bellman_complete_mdp(6, 2, 3, seed=5)
    assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("U", "R", "D", "q", "psi"))
    c = rl.make_bellman_complete_mdp(6, 2, 3, seed=6)
    assert not np.array_equal(a.U, c.U)


def test_k_above_d_rejected():
    with pytest.raises(ValueError):
        rl.make_bellman_complete_mdp(3, 4, 2)


def test_rank_and_psd_of_level_matrices():
    mdp = rl.make_bellman_complete_mdp(8, 2, 4, seed=1)
    for M in mdp.optimal_matrices():
        w = np.linalg.eigvalsh(M)
        assert np.sum(np.abs(w) > 1e-10) <= 2
        assert w.min() >= -1e-12 and w.max() > 0


def test_h1_is_plain_quadratic():
    mdp = rl.make_bellman_complete_mdp(5, 2, 1, seed=0)
    M = mdp.optimal_matrices()[0]
    assert np.allclose(M, mdp.U @ mdp.R[0] @ mdp.U.T)


def test_diagonal_backup_stays_diagonal_by_enumeration():
    d = 4
    mdp = diag_mdp(d, 3)
    nxt = None
    Phi = np.random.default_rng(1).standard_normal((50, d)) / 3
    for h in reversed(range(3)):
        M = mdp.bellman_image(h, nxt)
        assert np.allclose(M, np.diag(np.diag(M)), atol=1e-14)
        direct = mdp.backup_by_enumeration(h, nxt, Phi)
        assert np.allclose(np.einsum("ni,ij,nj->n", Phi, M, Phi), direct, atol=1e-12)
        nxt = M


@given(st.integers(0, 10**6), st.integers(1, 3))
def test_oracle_bellman_consistency(seed, H):
    mdp = rl.make_bellman_complete_mdp(6, 2, H, seed=seed)
    rng = np.random.default_rng(seed)
    M_next = None
    for h in reversed(range(H)):
        Phi = rng.standard_normal((20, 6))
        Phi /= np.maximum(1.0, np.linalg.norm(Phi, axis=1))[:, None]
        M = mdp.bellman_image(h, M_next)
        orc = mdp.oracle(h, M_next, noiseless=True)
        exp = np.einsum("ni,ij,nj->n", Phi, M, Phi)
        assert np.max(np.abs(orc(Phi) - exp)) <= 1e-10
        assert np.max(np.abs(mdp.backup_by_enumeration(h, M_next, Phi) - exp)) <= 1e-10
        M_next = M


def test_noisy_oracle_mean_and_bounds():
    mdp = rl.make_bellman_complete_mdp(5, 1, 2, seed=3)
    M1 = mdp.bellman_image(1, None)
    orc = mdp.oracle(0, M1, seed=9)
    phi = mdp.U[:, 0] * 0.9
    y = orc(np.repeat(phi[None], 200000, axis=0))
    mean = phi @ mdp.bellman_image(0, M1) @ phi
    assert abs(y.mean() - mean) <= 3 * y.std() / np.sqrt(y.size)
    assert np.all(np.abs(y - mean) <= 1.0)
    assert orc.samples == 200000


def test_oracle_rejects_outside_ball():
    mdp = rl.make_bellman_complete_mdp(4, 1, 1)
    with pytest.raises(ValueError):
        mdp.oracle(0, None)(np.full((1, 4), 1.0))


# -- recovery --------------------------------------------------------------------------

def test_recover_noiseless_diag():
    M = np.diag([0.9, 0.4, 0, 0, 0, 0])
    M_hat, info = rl.recover_quadratic_matrix(quad_probe(M), 6, 2, 0.01, exact=True, L=60)
    assert np.linalg.norm(M_hat - M, 2) <= 1e-6
    assert info["residual"] <= 1e-9


def test_recover_k_equals_d_vs_dense_regression():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((3, 3))
    M = 0.3 * (G @ G.T) / np.linalg.eigvalsh(G @ G.T)[-1]
    probe = quad_probe(M, noise=0.01, seed=4)
    M_hat, _ = rl.recover_quadratic_matrix(probe, 3, 3, 0.05, n=20000, L=10, n2=4000, seed=1)
    # dense regression over all quadratic monomials from uniform-ball actions
    A = rng.standard_normal((60000, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    pairs = list(combinations_with_replacement(range(3), 2))
    F = np.column_stack([A[:, i] * A[:, j] * (1 if i == j else 2) for i, j in pairs])
    c, *_ = np.linalg.lstsq(F, probe(A), rcond=None)
    Md = np.zeros((3, 3))
    for (i, j), v in zip(pairs, c):
        Md[i, j] = Md[j, i] = v
    assert np.linalg.norm(Md - M, 2) <= 0.01
    assert np.linalg.norm(M_hat - Md, 2) <= 0.05


def test_recover_zero_matrix():
    M_hat, _ = rl.recover_quadratic_matrix(quad_probe(np.zeros((5, 5))), 5, 1, 0.1, exact=True)
    assert np.allclose(M_hat, 0.0, atol=1e-14)


def test_recover_residual_threshold_raises():
    # rank 3 truth with k=1: the core regression cannot explain the responses
    M = np.diag([0.5, 0.5, 0.5, 0.0])

    def bumpy(Phi):
        Phi = np.atleast_2d(Phi)
        return np.einsum("ni,ij,nj->n", Phi, M, Phi) + 0.3 * Phi[:, 0] ** 3
    with pytest.raises(rl.RecoveryError):
        rl.recover_quadratic_matrix(bumpy, 4, 2, 0.1, exact=True, residual_threshold=1e-8)


def test_recovery_schedule_scaling():
    n1, _ = rl.recovery_schedule(8, 1, 0.1, 0.1)
    n2, _ = rl.recovery_schedule(8, 1, 0.05, 0.1)
    n3, _ = rl.recovery_schedule(8, 2, 0.1, 0.1)
    assert n2 / n1 == pytest.approx(4, rel=1e-3)
    assert n3 / n1 == pytest.approx(4, rel=1e-3)


# -- policy learning --------------------------------------------------------------------

def test_h1_exact_policy_optimal():
    mdp = rl.make_bellman_complete_mdp(6, 2, 1, seed=2)
    res = rl.learn_policy(mdp, 0.1, exact=True, constants=Constants(C_L=5.0))
    assert res.value_gap <= 1e-9
    assert np.array_equal(res.actions[0], mdp.greedy(mdp.optimal_matrices()[0]))


def test_error_telescoping_on_core():
    H, eps = 3, 0.1
    for seed in range(5):
        mdp = rl.make_bellman_complete_mdp(8, 1, H, seed=seed)
        res = rl.learn_policy(mdp, eps, 0.1, RL_C, seed=seed)
        if max(res.level_errors) > eps / H:
            continue
        # |phi^T (M_hat_1 - M*_1) phi| on every core pair
        Mstar = mdp.optimal_matrices()[0]
        diff = np.einsum("sai,ij,saj->sa", mdp.psi, res.matrices[0] - Mstar, mdp.psi)
        assert np.max(np.abs(diff)) <= eps


def test_trace_rows_backward_and_cumulative():
    mdp = rl.make_bellman_complete_mdp(6, 1, 3, seed=0)
    res = rl.learn_policy(mdp, 0.2, 0.1, RL_C, seed=0)
    assert [r["h"] for r in res.rows] == [3, 2, 1]
    assert np.all(np.diff([r["samples"] for r in res.rows]) > 0)
    assert res.rows[-1]["samples"] == res.samples == sum(res.level_samples)


def test_level_failure_carries_index():
    mdp = rl.make_bellman_complete_mdp(4, 1, 2, seed=0)
    with pytest.raises(rl.RecoveryError) as ei:
        rl.learn_policy(mdp, 0.1, n=0)
    assert ei.value.level == 2


def test_policy_within_eps_h3():
    good = 0
    for seed in range(20):
        mdp = rl.make_bellman_complete_mdp(8, 1, 3, seed=seed)
        good += rl.learn_policy(mdp, 0.1, 0.1, RL_C, seed=seed).value_gap <= 0.1
    assert good >= 18
