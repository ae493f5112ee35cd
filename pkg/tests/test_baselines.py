import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from polybandit import baselines as B
from polybandit.env import BanditSession, RewardModel, make_random_model, mean_batch
from polybandit.spectral import tan_angle, top_eigvec


def ev2():
    return RewardModel("EV", 2, 1, 2, [1.0], np.array([[1.0], [0.0]]))


BEST = np.array([1.0, 0.0])
HALF = np.array([1.0, 1.0]) / np.sqrt(2)      # mean 0.5


# -- finite UCB ------------------------------------------------------------------------

def test_single_arm_regret_linear():
    s = BanditSession(ev2(), sigma=1.0)
    tr = B.run_finite_ucb(s, [HALF], 1000)
    assert tr.final_regret == pytest.approx(1000 * 0.5)
    assert tr.summary["counts"] == [1000]


def test_identical_arms_zero_regret():
    s = BanditSession(ev2(), sigma=1.0, seed=2)
    tr = B.run_finite_ucb(s, [BEST, -BEST, BEST], 500)
    assert tr.final_regret == 0.0


def test_empty_arm_list():
    with pytest.raises(ValueError):
        B.run_finite_ucb(BanditSession(ev2()), [], 10)


def test_every_arm_once_before_repeat():
    m = make_random_model("EV", 4, 1, spectrum=[1.0], seed=0)
    arms = list(np.random.default_rng(0).standard_normal((7, 4)) / 3)
    s = BanditSession(m, sigma=1.0, seed=1)
    B.run_finite_ucb(s, arms, 7)
    means = mean_batch(m, np.stack(arms))
    inst = s.ledger.instantaneous()
    assert sorted(np.round(s.r_star - inst, 12)) == sorted(np.round(means, 12))


def test_lowest_index_tiebreak():
    s = BanditSession(ev2(), sigma=0.0)
    B.run_finite_ucb(s, [HALF, BEST, HALF], 3)
    # initial round robin plays 0, 1, 2 in order
    assert np.allclose(s.ledger.instantaneous(), [0.5, 0.0, 0.5])


def test_two_arm_gap_half_pulls():
    ok = 0
    for seed in range(100):
        s = BanditSession(ev2(), sigma=1.0, seed=seed)
        tr = B.run_finite_ucb(s, [HALF, BEST], 10**4)
        ok += tr.summary["counts"][0] <= 200
    assert ok >= 95


def test_candidate_set_etc():
    s = BanditSession(ev2(), sigma=1.0)
    s.play_fixed(HALF, 50)
    tr = B.candidate_set_etc(s, [BEST], 1000)
    assert tr.horizon == 1000
    assert np.all(tr.instantaneous[50:] == 0) and tr.final_regret == pytest.approx(25.0)
    with pytest.raises(ValueError):
        B.candidate_set_etc(BanditSession(ev2()), [], 100)


def test_candidate_set_two_arms_near_optimal():
    near = np.array([np.cos(0.1), np.sin(0.1)])      # gap sin^2(0.1) ~ 0.01
    T = 20000
    regs = []
    for seed in range(20):
        s = BanditSession(ev2(), sigma=0.1, seed=seed)
        regs.append(B.candidate_set_etc(s, [near, BEST], T).final_regret)
    gap = np.sin(0.1) ** 2
    assert np.median(regs) <= np.sqrt(2 * T * np.log(2 * T / 0.1)) + gap * 100 * np.log(T)


# -- lifted LinUCB ---------------------------------------------------------------------

@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 3))
def test_lift_inner_product(seed, d, p):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, d))
    la, lb = B.lift(np.stack([a, b]), p)
    assert la @ lb == pytest.approx((1 + a @ b) ** p, rel=1e-9, abs=1e-9)
    assert la.size == B.feature_dim(d, p)


@pytest.mark.parametrize("kind,p", [("EV", 2), ("SYM", 3), ("POLY-LOWRANK", 3)])
def test_true_parameter_reproduces_means(kind, p):
    m = make_random_model(kind, 4, 2, p, seed=3)
    A = np.random.default_rng(1).standard_normal((20, 4)) / 3
    assert np.allclose(B.lift(A, p) @ B.true_parameter(m), mean_batch(m, A), atol=1e-12)


def test_cap_exceeded():
    m = make_random_model("SYM", 40, 1, 5, seed=0)
    with pytest.raises(B.CapExceeded):
        B.run_lin_ucb_vectorized(BanditSession(m), 5, 10)


def test_sphere_grid_unit_rows():
    for d in (1, 2, 3, 6):
        g = B.sphere_grid(d, 64)
        assert np.allclose(np.linalg.norm(g, axis=1), 1.0)


def test_noiseless_linucb_locks_on_best_grid_action():
    m = ev2()
    grid = B.sphere_grid(2, 24)
    s = BanditSession(m, sigma=0.0)
    tr = B.run_lin_ucb_vectorized(s, 2, 200, lam_ridge=1e-6, grid=grid)
    best_gap = s.r_star - mean_batch(m, grid).max()
    assert np.allclose(tr.instantaneous[-50:], best_gap, atol=1e-9)
    assert tr.meta["grid_size"] == 24


def _samples_to_eps(d, seed, eps=0.1, sigma=1.0):
    m = make_random_model("EV", d, 1, spectrum=[1.0], seed=seed)
    s = BanditSession(m, sigma=sigma, seed=seed)
    v = s.a_star
    stop = lambda st: tan_angle(top_eigvec(st.quadratic_form()), v) <= eps  # noqa: E731
    return B.run_lin_ucb_vectorized(s, 2, 10**7, stop=stop).summary["stopped_at"]


def test_linucb_d4_vs_d8_ratio():
    # unit noise keeps the run out of the feature-dimension floor at d = 4
    r4 = np.median([_samples_to_eps(4, s) for s in range(60)])
    r8 = np.median([_samples_to_eps(8, s) for s in range(60)])
    assert 4.0 <= r8 / r4 <= 16.0


def test_linucb_coverage_audit():
    cov = []
    for seed in range(10):
        m = make_random_model("EV", 3, 1, spectrum=[1.0], seed=seed)
        s = BanditSession(m, sigma=0.3, seed=seed)
        cov += B.run_lin_ucb_vectorized(s, 2, 3000, delta=0.1, audit=True).summary["coverage"]
    assert np.mean(cov) >= 0.9


# -- PAC to regret -----------------------------------------------------------------------

def test_pac_to_regret_example():
    z, T1, b = B.pac_to_regret(1, 2, 2, 16)
    assert z == pytest.approx(32 ** -0.25, rel=1e-12)
    assert z == pytest.approx(0.42045, abs=1e-5)
    assert T1 == pytest.approx(32 ** 0.5, rel=1e-12)
    assert b == pytest.approx(4 * np.sqrt(2), rel=1e-12)


def test_pac_to_regret_monotone():
    zs = [B.pac_to_regret(3, 2, 2, T)[0] for T in np.logspace(0, 9, 30)]
    assert np.all(np.diff(zs) < 0)
    bs = [B.pac_to_regret(A, 3, 2, 1000)[2] for A in np.logspace(-3, 3, 30)]
    assert np.all(np.diff(bs) > 0)


def test_pac_to_regret_errors():
    for args in [(0, 2, 2, 10), (1, 0, 2, 10), (1, 2, 2, 0.5)]:
        with pytest.raises(ValueError):
            B.pac_to_regret(*args)


def test_pac_to_regret_high_precision():
    rng = np.random.default_rng(11)
    mpmath.mp.dps = 50
    for _ in range(100):
        A, a, p, T, r = rng.uniform(0.01, 100), rng.uniform(0.1, 10), rng.uniform(1, 6), rng.uniform(1, 1e8), rng.uniform(0.1, 2)
        A_, a_, p_, T_, r_ = map(mpmath.mpf, (A, a, p, T, r))
        e = 1 / (a_ + 2)
        z = A_ ** e * T_ ** (-e) * p_ ** (-e)
        T1 = A_ * z ** (-a_)
        bound = T_ ** (a_ * e) * p_ ** (a_ * e) * A_ ** (2 * e) * r_
        got = B.pac_to_regret(A, a, p, T, r)
        for g, w in zip(got, (z, T1, bound)):
            assert abs(mpmath.mpf(g) - w) <= mpmath.mpf("1e-11") * abs(w)
