"""Generative-model RL with quadratic Q-functions on a finite-state core.

Instance: frame U (d x k), per-level reward cores R_h, per-state transition
cores D_j and weights q_j, and A unit-norm action features per core state.
Querying level h with feature phi gives the reward phi^T U R_h U^T phi, then
moves to core state j with probability q_j phi^T U D_j U^T phi, or to an
absorbing state of value zero with the leftover probability.  The observed
target is that reward plus the downstream value of the landing state, so
its mean is phi^T M_h phi with

    M_h = U (R_h + sum_j q_j V_j D_j) U^T,   V_j = max_a psi_{j,a}^T M_{h+1} psi_{j,a}.

The learner's own downstream estimate plays the role of M_{h+1}, which keeps
every level exactly quadratic (Bellman complete by construction).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log
from typing import Optional

import numpy as np

from .constants import DEFAULT, Constants
from .env import random_frame
from .spectral import orthonormalize
from .streams import stream
from .zorder import probe_scale, sample_probes


class RecoveryError(RuntimeError):
    def __init__(self, msg, level=None):
        super().__init__(msg if level is None else f"level {level}: {msg}")
        self.level = level


@dataclass
class QuadraticMDP:
    H: int
    d: int
    k: int
    U: np.ndarray          # (d, k)
    R: np.ndarray          # (H, k, k) reward cores
    D: np.ndarray          # (S, k, k) transition cores
    q: np.ndarray          # (S,)
    psi: np.ndarray        # (S, A, d) unit action features
    seed: Optional[int] = None

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    def values(self, M) -> np.ndarray:
        """V_j = max_a psi^T M psi on every core state."""
        if M is None:
            return np.zeros(self.n_states)
        Q = np.einsum("sai,ij,saj->sa", self.psi, M, self.psi)
        return Q.max(axis=1)

    def bellman_image(self, h: int, M_next) -> np.ndarray:
        """Mean-reward matrix of level h given the downstream matrix (None past the end)."""
        V = self.values(M_next)
        core = self.R[h] + np.einsum("s,s,sij->ij", self.q, V, self.D)
        return self.U @ core @ self.U.T

    def optimal_matrices(self) -> list:
        out = [None] * self.H
        nxt = None
        for h in reversed(range(self.H)):
            out[h] = self.bellman_image(h, nxt)
            nxt = out[h]
        return out

    def transition_probs(self, Phi) -> np.ndarray:
        """(n, S) landing probabilities; the absorbing state takes the rest."""
        c = np.atleast_2d(Phi) @ self.U
        return np.einsum("nk,skl,nl->ns", c, self.D, c) * self.q

    def reward(self, h: int, Phi) -> np.ndarray:
        c = np.atleast_2d(Phi) @ self.U
        return np.einsum("nk,kl,nl->n", c, self.R[h], c)

    def oracle(self, h: int, M_next, seed: int = 0, noiseless: bool = False) -> "LevelOracle":
        return LevelOracle(self, h, self.values(M_next), stream(seed, "rl-oracle", h), noiseless=noiseless)

    def backup_by_enumeration(self, h: int, M_next, Phi) -> np.ndarray:
        """Expected target at each phi by summing over landing states explicitly."""
        V = self.values(M_next)
        P = self.transition_probs(Phi)
        out = self.reward(h, Phi).copy()
        for n in range(Phi.shape[0]):
            for j in range(self.n_states):
                out[n] += P[n, j] * V[j]
            # absorbing state contributes 1 - sum(P) times zero
        return out

    def greedy(self, M) -> np.ndarray:
        Q = np.einsum("sai,ij,saj->sa", self.psi, M, self.psi)
        return Q.argmax(axis=1)

    def policy_values(self, actions) -> np.ndarray:
        """Exact level-1 values of a deterministic policy given as per-level action indices."""
        V = np.zeros(self.n_states)
        S = np.arange(self.n_states)
        for h in reversed(range(self.H)):
            phi = self.psi[S, actions[h]]                       # (S, d)
            P = self.transition_probs(phi)
            V = self.reward(h, phi) + P @ V
        return V

    def optimal_values(self) -> np.ndarray:
        return self.policy_values([self.greedy(M) for M in self.optimal_matrices()])


@dataclass
class LevelOracle:
    mdp: QuadraticMDP
    h: int
    V: np.ndarray
    rng: np.random.Generator
    samples: int = 0
    noiseless: bool = False

    def __call__(self, Phi) -> np.ndarray:
        Phi = np.atleast_2d(Phi)
        if np.any(np.einsum("ij,ij->i", Phi, Phi) > 1 + 1e-9):
            raise ValueError("probe features must lie in the unit ball")
        P = self.mdp.transition_probs(Phi)
        self.samples += Phi.shape[0]
        if self.noiseless:
            return self.mdp.reward(self.h, Phi) + P @ self.V
        u = self.rng.uniform(size=Phi.shape[0])
        cum = np.cumsum(P, axis=1)
        land = (u[:, None] >= cum).sum(axis=1)                 # == S means absorbing
        Vx = np.append(self.V, 0.0)
        return self.mdp.reward(self.h, Phi) + Vx[land]


def make_bellman_complete_mdp(d: int, k: int, H: int, seed: int = 0, n_states: int = 4,
                              n_actions: int = 8, reward_scale: float = 0.3,
                              transition_scale: float = 0.5) -> QuadraticMDP:
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    rng = stream(seed, "rl-mdp", d, k, H)
    U = random_frame(rng, d, k)

    def psd_core(scale):
        G = rng.standard_normal((k, k))
        C = G @ G.T + 0.2 * np.eye(k)
        return scale * C / np.linalg.eigvalsh(C)[-1]

    R = np.stack([psd_core(reward_scale) for _ in range(H)])
    D = np.stack([psd_core(transition_scale) for _ in range(n_states)])
    q = rng.dirichlet(np.ones(n_states))
    psi = rng.standard_normal((n_states, n_actions, d))
    psi /= np.linalg.norm(psi, axis=2, keepdims=True)
    return QuadraticMDP(H, d, k, U, R, D, q, psi, seed)


# -- recovery --------------------------------------------------------------------

def recovery_schedule(d: int, k: int, eps: float, delta: float, C: Constants = DEFAULT, kappa: float = 1.0):
    n = int(ceil(C.C_n * d * d * k * k * kappa * kappa * log(d / delta) / (eps * eps)))
    L = int(C.C_L * log(d / eps)) + 1
    return max(n, 1), L


def _core_design(k: int):
    W = [np.eye(k)[i] for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            e = np.zeros(k)
            e[i], e[j] = 1, 1
            W.append(e / np.sqrt(2))
            e = e.copy()
            e[j] = -1
            W.append(e / np.sqrt(2))
    W = np.array(W)
    iu = np.triu_indices(k)
    # w^T C w = sum_i C_ii w_i^2 + 2 sum_{i<j} C_ij w_i w_j
    F = np.column_stack([W[:, i] * W[:, j] * (1.0 if i == j else 2.0) for i, j in zip(*iu)])
    return W, F, iu


def _polarized_MX(probe, X):
    # u^T M x = f((u + x)/2) - f((u - x)/2), exact for a noiseless quadratic
    d = X.shape[0]
    E = np.eye(d)
    Y = np.empty_like(X)
    for s in range(X.shape[1]):
        x = X[:, s]
        Y[:, s] = probe(0.5 * (E + x)) - probe(0.5 * (E - x))
    return Y


def recover_quadratic_matrix(probe, d: int, k: int, eps: float, delta: float = 0.1,
                             constants: Constants = DEFAULT, *, n: Optional[int] = None,
                             L: Optional[int] = None, n2: Optional[int] = None, exact: bool = False,
                             seed: int = 0, residual_threshold: Optional[float] = None):
    """Two-stage estimate of M from probes a -> a^T M a + noise.

    Stage 1 runs orthogonal iteration with 2k columns and takes the top-k
    eigenvectors of sym(X^T Y); stage 2 regresses the k x k core from
    actions a = X w.  ``exact=True`` swaps the Gaussian estimator for
    polarization probes, which are exact without noise.  Returns
    (M_hat, info).
    """
    kp = min(2 * k, d)
    n0, L0 = recovery_schedule(d, k, eps, delta, constants)
    n = n0 if n is None else n
    L = L0 if L is None else L
    n2 = n if n2 is None else n2
    m = probe_scale(n, d, delta, constants.C_m)
    X = orthonormalize(stream(seed, "recover", "start").standard_normal((d, kp)))
    used = 0
    Y = X_prev = None
    for l in range(1, L + 1):
        X_prev = X
        if exact:
            Y = _polarized_MX(probe, X)
            used += 2 * d * kp
        else:
            batch = sample_probes(stream(seed, "recover", 0, l), n, m, d)
            Y = np.empty_like(X)
            for s in range(kp):
                r = probe(0.5 * (X[:, s] + batch.z))
                Y[:, s] = (2.0 * m / n) * (r @ batch.z)
            used += n * kp
        X = orthonormalize(Y)
    S = X_prev.T @ Y
    w, E = np.linalg.eigh(0.5 * (S + S.T))
    top = np.argsort(-np.abs(w), kind="stable")[:k]
    F_frame = orthonormalize(X_prev @ E[:, top])
    W, F, iu = _core_design(k)
    A = W @ F_frame.T
    if exact:
        r = probe(A)
        used += A.shape[0]
    else:
        reps = max(1, int(n2))
        r = np.array([probe(np.repeat(a[None], reps, axis=0)).mean() for a in A])
        used += reps * A.shape[0]
    c, *_ = np.linalg.lstsq(F, r, rcond=None)
    resid = float(np.max(np.abs(F @ c - r))) if r.size else 0.0
    if residual_threshold is not None and resid > residual_threshold:
        raise RecoveryError(f"core regression residual {resid:.3e} above {residual_threshold:g}")
    Cc = np.zeros((k, k))
    Cc[iu] = c
    Cc = Cc + Cc.T - np.diag(np.diag(Cc))
    M_hat = F_frame @ Cc @ F_frame.T
    return M_hat, {"samples": used, "n": n, "L": L, "m": m, "frame": F_frame, "residual": resid}


# -- policy learning --------------------------------------------------------------------

@dataclass
class PolicyResult:
    matrices: list
    actions: list
    samples: int
    level_samples: list
    level_errors: list
    rows: list = field(default_factory=list)
    value_gap: float = float("nan")


def learn_policy(mdp: QuadraticMDP, eps: float, delta: float = 0.1, constants: Constants = DEFAULT,
                 *, seed: int = 0, exact: bool = False, n: Optional[int] = None) -> PolicyResult:
    """Backward recovery at accuracy eps/H per level, then greedy actions on the core."""
    H = mdp.H
    eps_h = eps / H
    mats, acts = [None] * H, [None] * H
    level_samples, level_errors, rows = [0] * H, [0.0] * H, []
    nxt = None
    total = 0
    for h in reversed(range(H)):
        oracle = mdp.oracle(h, nxt, seed=seed, noiseless=exact)
        try:
            M_hat, info = recover_quadratic_matrix(oracle, mdp.d, mdp.k, eps_h, delta / H, constants,
                                                   n=n, exact=exact, seed=int(seed) * 1000 + h)
        except Exception as e:
            raise RecoveryError(str(e), level=h + 1) from e
        target = mdp.bellman_image(h, nxt)
        err = float(np.linalg.norm(M_hat - target, 2))
        mats[h] = M_hat
        acts[h] = mdp.greedy(M_hat)
        level_samples[h] = oracle.samples
        level_errors[h] = err
        total += oracle.samples
        rows.append({"h": h + 1, "samples": total, "err": err, "target": eps_h})
        nxt = M_hat
    res = PolicyResult(mats, acts, total, level_samples, level_errors, rows)
    res.value_gap = float(np.max(mdp.optimal_values() - mdp.policy_values(acts)))
    return res
