from itertools import combinations_with_replacement
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import uniform_tiebreak_mean
from polybandit.env import BanditSession, RewardModel, hardcase_vertices, make_random_model, mean_batch
from polybandit.noiseless import (FitFailed, HardCaseState, ball_uniform, expected_uniform_plays,
                                  fit_lowrank_polynomial, hardcase_predictions, identify_finite_class,
                                  identify_then_commit, random_polytope_weights, regret_bound_noiseless,
                                  tensorize, ucb_hard_case_run, ucb_values)
from polybandit.streams import stream


def hard(d, p, alpha):
    return RewardModel("HARDCASE", d, 1, p, [1.0], alpha_star=alpha)


def test_tensorize_examples():
    assert np.array_equal(tensorize([], 2), [1.0])
    assert np.array_equal(tensorize([2.0], 2), [1.0, 2.0, 2.0, 4.0])


@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 4))
def test_lift_eval_consistency(seed, d, p):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((d + 1,) * p)
    a = rng.standard_normal(d)
    # direct evaluation: sum over index tuples of theta * prod [1, a]_i
    at = np.concatenate([[1.0], a])
    direct = 0.0
    for idx in np.ndindex(*theta.shape):
        direct += theta[idx] * np.prod(at[list(idx)])
    assert abs(theta.ravel() @ tensorize(a, p) - direct) <= 1e-9 * max(1.0, abs(direct))


def test_model_theta_matches_reward():
    m = make_random_model("SYM", 4, 2, 3, seed=1)
    a = np.random.default_rng(0).standard_normal(4) * 0.4
    assert m.theta().ravel() @ tensorize(a, 3) == pytest.approx(mean_batch(m, a[None])[0], abs=1e-12)


# -- finite class ----------------------------------------------------------------------

def test_single_random_action_separates():
    d, p = 5, 2
    idx, vert = hardcase_vertices(d, p)
    singles = 0
    for seed in range(100):
        rng = stream(seed, "t-sep")
        w = random_polytope_weights(rng, idx.shape[0])[0]
        preds = hardcase_predictions(d, p, (w @ vert)[None])[0]
        alpha = tuple(idx[seed % len(idx)])
        r = mean_batch(hard(d, p, alpha), w[None])[0]
        singles += np.sum(np.abs(preds - r) <= 1e-9) == 1
    assert singles >= 95


def test_vertex_of_truth_and_zero_action():
    d, p = 5, 2
    idx, vert = hardcase_vertices(d, p)
    alpha = (1, 3)
    i = int(np.flatnonzero((idx == alpha).all(axis=1))[0])
    s = BanditSession(hard(d, p, alpha), sigma=0.0)
    w = np.zeros(len(idx))
    w[i] = 1.0
    assert s.pull(w) == 1.0
    preds = hardcase_predictions(d, p, vert[i][None])[0]
    assert preds[i] == 1.0 and np.all(preds[np.arange(len(idx)) != i] < 1.0)
    assert s.pull(np.zeros(len(idx))) == 0.0
    assert np.all(hardcase_predictions(d, p, np.zeros((1, d)))[0] == 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_random_identification_correct(seed):
    m = make_random_model("HARDCASE", 8, p=3, seed=seed)
    alpha, used = identify_finite_class(BanditSession(m, sigma=0.0), stream(seed, "t-id"))
    assert alpha == m.alpha_star and used >= 1


# -- optimistic play ------------------------------------------------------------------

def test_adversarial_d5_p2():
    plays, tr = ucb_hard_case_run(BanditSession(hard(5, 2, (3, 4)), sigma=0.0), "adversarial")
    assert plays == comb(5, 2) - 1 == 9
    assert tr.summary["certificate_ok"] and tr.summary["all_vertices"]


def test_truth_first_one_play():
    plays, _ = ucb_hard_case_run(BanditSession(hard(5, 2, (0, 2)), sigma=0.0), "first")
    assert plays == 1


def test_uniform_tiebreak_mean():
    N = comb(5, 2)
    plays = []
    for seed in range(10**4):
        m = hard(5, 2, (1, 3))
        p, _ = ucb_hard_case_run(BanditSession(m, sigma=0.0, seed=seed), "uniform", certificate=0)
        plays.append(p)
    plays = np.array(plays)
    se = plays.std(ddof=1) / np.sqrt(plays.size)
    want = uniform_tiebreak_mean(N)
    assert want == pytest.approx(expected_uniform_plays(N))
    assert abs(plays.mean() - want) <= 3 * se


def test_ucb_vertex_lemma_and_survival():
    m = make_random_model("HARDCASE", 7, p=3, seed=4)
    s = BanditSession(m, sigma=0.0, seed=4)
    plays, tr = ucb_hard_case_run(s, "lex", certificate=1000)
    assert tr.summary["certificate_ok"] and tr.summary["all_vertices"]
    # replay: truth never eliminated, vertices keep UCB 1, interior points stay below 1
    d, p = 7, 3
    idx, vert = hardcase_vertices(d, p)
    st_ = HardCaseState(d, p, m.alpha_star)
    rng = np.random.default_rng(0)
    for _ in range(5):
        W = random_polytope_weights(rng, len(idx), 1000)
        assert np.all(ucb_values(st_, W @ vert) < 1.0)
        assert ucb_values(st_, vert).max() == 1.0
        assert st_.alive[st_.star]


def test_regret_bound_examples():
    assert regret_bound_noiseless(5, 100) == 5
    assert regret_bound_noiseless(10**6, 41) == 82


# -- fitting ---------------------------------------------------------------------------

def test_fit_k1_p2_vs_dense_solve():
    rng = np.random.default_rng(3)
    d = 4
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    M = 0.7 * np.outer(w, w)
    A = ball_uniform(rng, 30, d)
    r = np.einsum("ni,ij,nj->n", A, M, A)
    fit = fit_lowrank_polynomial((A, r), 1, 2, d, rng)
    # dense least squares over the d(d+1)/2 quadratic monomials
    pairs = list(combinations_with_replacement(range(d), 2))
    F = np.column_stack([A[:, i] * A[:, j] for i, j in pairs])
    c, *_ = np.linalg.lstsq(F, r, rcond=None)
    Md = np.zeros((d, d))
    for (i, j), v in zip(pairs, c):
        Md[i, j] += v / (1 if i == j else 2)
        Md[j, i] += 0 if i == j else v / 2
    Mfit = fit.signs[0] * np.outer(fit.W[0], fit.W[0])
    assert np.allclose(Mfit, Md, atol=1e-8)
    assert np.allclose(Md, M, atol=1e-10)


def test_fit_zero_rewards():
    fit = fit_lowrank_polynomial((np.eye(3), np.zeros(3)), 2, 3, 3)
    assert np.all(fit.W == 0) and fit.residual == 0


def test_fit_failure_raises():
    rng = np.random.default_rng(0)
    A = ball_uniform(rng, 40, 3)
    r = rng.standard_normal(40)      # not a rank-1 cubic
    with pytest.raises(FitFailed):
        fit_lowrank_polynomial((A, r), 1, 3, 3, rng, restarts=2)


def test_fit_holdout_d10_k2_p3():
    good = 0
    for seed in range(100):
        m = make_random_model("POLY-LOWRANK", 10, 2, 3, [0.9, 0.6], seed=seed)
        rng = stream(seed, "t-fit")
        A = ball_uniform(rng, 2 * 10 * 2 + 1, 10)
        try:
            fit = fit_lowrank_polynomial((A, mean_batch(m, A)), 2, 3, 10, rng)
        except FitFailed:
            continue
        H = ball_uniform(rng, 200, 10)
        good += np.max(np.abs(fit.predict(H) - mean_batch(m, H))) <= 1e-6
    assert good >= 95


@pytest.mark.parametrize("seed", range(5))
def test_identify_then_commit_under_bound(seed):
    m = make_random_model("POLY-LOWRANK", 10, 2, 3, [0.9, 0.6], seed=seed)
    s = BanditSession(m, sigma=0.0, seed=seed)
    tr, fit = identify_then_commit(s, 2, 1000)
    assert fit is not None
    assert tr.final_regret <= tr.summary["bound"]
    assert tr.summary["holdout_error"] <= 1e-6
