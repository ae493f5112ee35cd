"""Comparison algorithms: finite-arm UCB, lifted-feature LinUCB, and PAC-to-regret tuning."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb, factorial, log, sqrt
from typing import Callable, Optional

import numpy as np

from .env import BanditSession, mean_batch
from .kernels import linucb_loop, ucb_loop
from .trace import RegretTrace

FEATURE_CAP = 10**7


class CapExceeded(ValueError):
    pass


@dataclass
class ArmStats:
    counts: np.ndarray
    sums: np.ndarray

    @property
    def means(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.zeros_like(self.sums), where=self.counts > 0)

    @property
    def t(self) -> int:
        return int(self.counts.sum())


# -- finite arms -------------------------------------------------------------------

def run_finite_ucb(session: BanditSession, arms, T: int, delta: float = 0.1,
                   meta: Optional[dict] = None, trace: bool = True):
    """Index policy mu_hat + sqrt(log(T K / delta) / N) after one pull per arm.

    Ties go to the lowest arm index.  Returns a RegretTrace of the whole
    session (or the ArmStats if ``trace=False``).
    """
    arms = [np.asarray(a, dtype=float) for a in arms]
    K = len(arms)
    if K == 0:
        raise ValueError("empty arm list")
    T = int(T)
    stats = ArmStats(np.zeros(K, dtype=np.int64), np.zeros(K))
    if T > 0:
        means = mean_batch(session.model, np.stack(arms))
        noise = session.draw_noise(T)
        logterm = log(max(T, 1) * K / delta)
        choices = ucb_loop(np.ascontiguousarray(means), np.ascontiguousarray(noise), logterm,
                           stats.counts, stats.sums)
        session.charge_means(means[choices])
    if not trace:
        return stats
    tr = RegretTrace.from_session(session, meta)
    tr.summary.update({"counts": stats.counts.tolist(), "K": K})
    return tr


def candidate_set_etc(session: BanditSession, pool, T: int, delta: float = 0.1,
                      meta: Optional[dict] = None) -> RegretTrace:
    """Finite-arm UCB on an explored pool for the rest of the horizon."""
    actions = getattr(pool, "actions", pool)
    if len(actions) == 0:
        raise ValueError("empty candidate pool")
    return run_finite_ucb(session, actions, T - session.t, delta, meta)


# -- lifted linear features ----------------------------------------------------------

def lift_index(d: int, p: int):
    """Monomials of degree p in [1, a] (index tuples) and sqrt multinomial weights."""
    idx = np.array(list(combinations_with_replacement(range(d + 1), p)), dtype=np.int64)
    w = np.empty(idx.shape[0])
    for r, row in enumerate(idx):
        _, cnt = np.unique(row, return_counts=True)
        mult = factorial(p)
        for c in cnt:
            mult //= factorial(int(c))
        w[r] = sqrt(mult)
    return idx, w


def lift(A, p: int, index=None) -> np.ndarray:
    """Symmetric feature map with <lift(a), lift(b)> = (1 + a.b)^p."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[1]
    if (d + 1) ** p > FEATURE_CAP:
        raise CapExceeded(f"(d+1)^p = {(d + 1) ** p} above cap {FEATURE_CAP}")
    idx, w = lift_index(d, p) if index is None else index
    At = np.hstack([np.ones((A.shape[0], 1)), A])
    out = np.ones((A.shape[0], idx.shape[0]))
    for j in range(p):
        out *= At[:, idx[:, j]]
    return out * w


def true_parameter(model, index=None) -> np.ndarray:
    """Coordinates psi of the model's reward in the lifted basis."""
    th = model.theta()
    p = th.ndim
    from .env import _symmetrize
    th = _symmetrize(th)
    idx, w = lift_index(model.d, p) if index is None else index
    return th[tuple(idx.T)] * w


def sphere_grid(d: int, size: int, seed: int = 0) -> np.ndarray:
    """Near-uniform unit vectors: Fibonacci lattice for d <= 3, scrambled Sobol otherwise."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = 2 * np.pi * (np.arange(size) + 0.5) / size
        return np.column_stack([np.cos(t), np.sin(t)])
    if d == 3:
        i = np.arange(size) + 0.5
        phi = np.arccos(1 - 2 * i / size)
        th = np.pi * (1 + 5**0.5) * i
        return np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
    from scipy.stats import norm, qmc
    bits = max(1, int(np.ceil(np.log2(size))))
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(bits)[:size]
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def oful_beta(t, D: int, sigma: float, lam: float, delta: float, S: float):
    """Confidence radius; ``t`` may be an array of step counts."""
    return sigma * np.sqrt(2 * log(1 / delta) + D * np.log1p(np.asarray(t) / (lam * D))) + sqrt(lam) * S


@dataclass
class LinUCBState:
    t: int
    theta: np.ndarray
    Vinv: np.ndarray
    index: tuple
    d: int
    p: int

    def quadratic_form(self) -> np.ndarray:
        """Symmetric matrix of the estimated degree-2 part (p = 2 only)."""
        if self.p != 2:
            raise ValueError("quadratic form needs p = 2")
        idx, w = self.index
        C = np.zeros((self.d + 1, self.d + 1))
        coef = self.theta * w
        for (i, j), c in zip(idx, coef):
            if i == j:
                C[i, i] = c
            else:
                C[i, j] = C[j, i] = c / 2
        return C[1:, 1:]


def run_lin_ucb_vectorized(session: BanditSession, p: int, T: int, lam_ridge: float = 1.0,
                           grid=None, delta: float = 0.1, S: float = 1.0,
                           stop: Optional[Callable[[LinUCBState], bool]] = None,
                           checkpoint_growth: float = 1.1, meta: Optional[dict] = None,
                           audit: bool = False) -> RegretTrace:
    """Optimistic ridge regression on the degree-p lift, argmax over a finite grid.

    ``grid`` is an array of actions or an integer size (default twice the
    feature dimension).  With ``stop`` the run halts at the first geometric
    checkpoint where it returns true; ``summary["stopped_at"]`` records it.
    ``audit=True`` records whether the true parameter lies in the
    confidence ellipsoid at each checkpoint.
    """
    d = session.model.d
    if (d + 1) ** p > FEATURE_CAP:
        raise CapExceeded(f"(d+1)^p = {(d + 1) ** p} above cap {FEATURE_CAP}")
    index = lift_index(d, p)
    D = index[0].shape[0]
    if grid is None or np.isscalar(grid):
        size = 2 * D if grid is None else int(grid)
        grid = sphere_grid(d, size, seed=session.seed)
    grid = np.asarray(grid, dtype=float)
    Phi = np.ascontiguousarray(lift(grid, p, index))
    means = np.ascontiguousarray(mean_batch(session.model, grid))
    Vinv = np.eye(D) / lam_ridge
    theta = np.zeros(D)
    pred = np.zeros(grid.shape[0])
    bon = np.einsum("ij,ij->i", Phi, Phi) / lam_ridge
    sigma = max(session.sigma, 1e-12)
    psi = true_parameter(session.model, index) if audit else None
    audits = []
    t, nxt, stopped = 0, D, None
    while t < T:
        seg = min(max(nxt - t, 1), T - t) if stop is not None or audit else T - t
        noise = np.ascontiguousarray(session.draw_noise(seg))
        betas = np.ascontiguousarray(oful_beta(t + np.arange(seg), D, sigma, lam_ridge, delta, S), dtype=float)
        choices = linucb_loop(Phi, means, noise, betas, Vinv, theta, pred, bon)
        session.charge_means(means[choices])
        t += seg
        if t >= nxt:
            nxt = int(nxt * checkpoint_growth) + 1
            state = LinUCBState(t, theta, Vinv, index, d, p)
            if audit:
                diff = theta - psi
                V = np.linalg.inv(Vinv)
                audits.append(bool(sqrt(max(diff @ V @ diff, 0.0)) <= oful_beta(t, D, sigma, lam_ridge, delta, S)))
            if stop is not None and stop(state):
                stopped = t
                break
    tr = RegretTrace.from_session(session, meta)
    tr.meta.setdefault("grid_size", int(grid.shape[0]))
    tr.meta.setdefault("feature_dim", D)
    tr.summary.update({"stopped_at": stopped, "steps": t})
    if audit:
        tr.summary["coverage"] = audits
    tr.state = LinUCBState(t, theta, Vinv, index, d, p)
    return tr


# -- PAC to regret --------------------------------------------------------------------

def pac_to_regret(A: float, a_exp: float, p: float, T: float, r_star: float = 1.0):
    """Tuned accuracy zeta, exploration length A zeta^-a, and the regret bound."""
    if A <= 0 or a_exp <= 0 or T < 1:
        raise ValueError("need A > 0, a > 0, T >= 1")
    e = 1.0 / (a_exp + 2.0)
    zeta = (A / (T * p)) ** e
    T1 = A * zeta ** (-a_exp)
    bound = T ** (a_exp * e) * p ** (a_exp * e) * A ** (2 * e) * r_star
    return float(zeta), float(T1), float(bound)


def feature_dim(d: int, p: int) -> int:
    return comb(d + p, p)
