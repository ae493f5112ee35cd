"""Noiseless polynomial bandits.

Identification from random actions, low-rank polynomial fitting,
identify-then-commit, and the hard instance on which optimistic play
must visit every vertex of the action polytope.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import comb
from typing import Optional

import numpy as np

from .env import BanditSession, ModelError, hardcase_vertices
from .streams import stream
from .trace import RegretTrace

TENSOR_CAP = 10**7
ID_TOL = 1e-9
FIT_TOL = 1e-6


class IdentificationError(RuntimeError):
    pass


class FitFailed(RuntimeError):
    pass


# -- lifting -------------------------------------------------------------------

def tensorize(a, p: int, cap: int = TENSOR_CAP) -> np.ndarray:
    """Row-major flattening of [1, a]^{(x)p}."""
    a = np.asarray(a, dtype=float).ravel()
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    n = (a.size + 1) ** p
    if n > cap:
        raise ValueError(f"lift has {n} entries, above cap {cap}")
    at = np.concatenate([[1.0], a])
    out = at
    for _ in range(p - 1):
        out = np.multiply.outer(out, at).ravel()
    return out


@dataclass
class TensorizedSample:
    action: np.ndarray
    reward: float
    p: int

    @property
    def feature(self) -> np.ndarray:
        return tensorize(self.action, self.p)


def regret_bound_noiseless(T: float, dim_V: float) -> float:
    return float(min(T, 2 * dim_V))


# -- finite class identification --------------------------------------------------

def hardcase_predictions(d: int, p: int, X: np.ndarray, alive=None) -> np.ndarray:
    """Predicted rewards prod_i x[alpha_i] for every (alive) alpha; X is (n, d) points."""
    idx, _ = hardcase_vertices(d, p)
    if alive is not None:
        idx = idx[alive]
    return np.prod(X[:, idx], axis=2)


def random_polytope_weights(rng, N: int, size: int = 1) -> np.ndarray:
    """Uniform points of conv(vertices, 0) as weights over the N vertices."""
    w = rng.dirichlet(np.ones(N + 1), size=size)
    return w[:, :N]


def identify_finite_class(session: BanditSession, rng, cap: Optional[int] = None):
    """Random play on conv(A0, 0) with exact consistency elimination.

    Returns (alpha_hat as a tuple, number of actions used).
    """
    model = session.model
    if model.kind != "HARDCASE":
        raise ModelError("identify_finite_class needs a HARDCASE session")
    d, p = model.d, model.p
    idx, vert = hardcase_vertices(d, p)
    alive = np.ones(idx.shape[0], dtype=bool)
    cap = 10 * d if cap is None else cap
    used = 0
    while alive.sum() > 1:
        if used >= cap:
            raise IdentificationError(f"class not separated after {cap} actions")
        w = random_polytope_weights(rng, idx.shape[0])[0]
        r = session.pull(w)
        used += 1
        pred = hardcase_predictions(d, p, (w @ vert)[None])[0]
        alive &= np.abs(pred - r) <= ID_TOL
    if alive.sum() == 0:
        raise IdentificationError("every model eliminated")
    return tuple(int(i) for i in idx[np.flatnonzero(alive)[0]]), used


# -- optimistic play on the hard instance ----------------------------------------------

@dataclass
class HardCaseState:
    d: int
    p: int
    alpha_star: tuple
    alive: np.ndarray = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        idx, _ = hardcase_vertices(self.d, self.p)
        if self.alive is None:
            self.alive = np.ones(idx.shape[0], dtype=bool)
        self.star = int(np.flatnonzero((idx == np.array(self.alpha_star)).all(axis=1))[0])

    @property
    def Lambda(self) -> np.ndarray:
        return hardcase_vertices(self.d, self.p)[0]


def ucb_values(state: HardCaseState, X: np.ndarray) -> np.ndarray:
    """max over surviving models of the predicted reward at each point of X."""
    return hardcase_predictions(state.d, state.p, X, state.alive).max(axis=1)


def _tie_order(state, tie_break, rng):
    N = state.alive.size
    if tie_break == "adversarial":
        order = [i for i in range(N) if i != state.star] + [state.star]
    elif tie_break == "lex":
        order = list(range(N))
    elif tie_break == "first":
        order = [state.star] + [i for i in range(N) if i != state.star]
    elif tie_break == "uniform":
        order = list(rng.permutation(N))
    else:
        raise ValueError(f"unknown tie-break {tie_break!r}")
    return order


def ucb_hard_case_run(session: BanditSession, tie_break: str = "adversarial", rng=None,
                      certificate: int = 1000, meta: Optional[dict] = None):
    """Optimistic play until one model remains.

    Each round the UCB maximizers over the polytope are the vertices of
    surviving models (value 1); the certificate draws ``certificate``
    random non-vertex points and checks their UCB is below 1.  Returns
    (plays, trace); the trace summary carries the certificate outcome.
    """
    model = session.model
    if model.kind != "HARDCASE":
        raise ModelError("needs a HARDCASE session")
    d, p = model.d, model.p
    rng = stream(session.seed, "hardcase", tie_break) if rng is None else rng
    state = HardCaseState(d, p, model.alpha_star)
    idx, vert = hardcase_vertices(d, p)
    N = idx.shape[0]
    order = _tie_order(state, tie_break, rng)
    cert_ok, all_vertices = True, True
    plays = 0
    while state.alive.sum() > 1:
        if certificate:
            W = random_polytope_weights(rng, N, certificate)
            if np.any(ucb_values(state, W @ vert) >= 1.0):
                cert_ok = False
        vals = ucb_values(state, vert)
        top = vals.max()
        if top < 1.0:
            raise AssertionError("no vertex attains UCB 1")
        choice = next(i for i in order if state.alive[i] and vals[i] >= top)
        w = np.zeros(N)
        w[choice] = 1.0
        all_vertices &= bool(np.count_nonzero(w) == 1 and w.max() == 1.0)
        r = session.pull(w)
        plays += 1
        state.history.append((choice, r))
        state.alive &= np.abs(hardcase_predictions(d, p, vert[choice][None], None)[0] - r) <= ID_TOL
        if not state.alive[state.star]:
            raise AssertionError("ground truth eliminated")
    tr = RegretTrace.from_session(session, meta)
    tr.summary.update({"plays": plays, "certificate_ok": cert_ok, "all_vertices": all_vertices,
                       "tie_break": tie_break, "models": N})
    return plays, tr


def expected_uniform_plays(N: int) -> float:
    """Mean plays under a uniformly random tie order: position j costs j, except the last costs N-1."""
    return (N * (N - 1) / 2 + (N - 1)) / N


# -- low-rank fitting ---------------------------------------------------------------------

@dataclass
class LowRankFit:
    W: np.ndarray        # (k, d)
    signs: np.ndarray    # (k,)
    p: int
    residual: float

    def predict(self, A) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return ((A @ self.W.T) ** self.p) @ self.signs

    def gradient(self, a) -> np.ndarray:
        c = self.W @ a
        return self.p * (self.signs * c ** (self.p - 1)) @ self.W

    def components(self):
        """(lambda_i, unit v_i) with f = sum lambda_i (v_i.a)^p."""
        nrm = np.linalg.norm(self.W, axis=1)
        lam = self.signs * nrm**self.p
        V = np.divide(self.W, nrm[:, None], out=np.zeros_like(self.W), where=nrm[:, None] > 0)
        return lam, V


def _fit_once(A, r, k, p, signs, w0):
    from scipy.optimize import least_squares
    d = A.shape[1]

    def res(x):
        W = x.reshape(k, d)
        return ((A @ W.T) ** p) @ signs - r

    def jac(x):
        W = x.reshape(k, d)
        c = A @ W.T                                     # (T, k)
        g = p * c ** (p - 1) * signs                    # (T, k)
        return (g[:, :, None] * A[:, None, :]).reshape(A.shape[0], k * d)

    sol = least_squares(res, w0.ravel(), jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=2000 * k * d)
    return sol.x.reshape(k, d), float(np.max(np.abs(sol.fun)))


def fit_lowrank_polynomial(samples, k: int, p: int, d: int, rng=None, restarts: int = 20,
                           tol: float = FIT_TOL) -> LowRankFit:
    """Least squares over f(a) = sum_i s_i (w_i.a)^p.

    Odd p absorbs signs into w_i; even p tries every sign pattern.
    Accepts only a max residual <= tol, else raises FitFailed.
    """
    if isinstance(samples, tuple) and len(samples) == 2:
        A, r = samples
    else:
        A = np.array([s.action for s in samples])
        r = np.array([s.reward for s in samples])
    A = np.asarray(A, dtype=float).reshape(-1, d)
    r = np.asarray(r, dtype=float)
    if np.all(r == 0):
        return LowRankFit(np.zeros((k, d)), np.ones(k), p, 0.0)
    rng = np.random.default_rng(0) if rng is None else rng
    patterns = [np.ones(k)] if p % 2 else [np.array(s, dtype=float) for s in product((1.0, -1.0), repeat=k)]
    scale = (np.max(np.abs(r)) / max(np.mean(np.linalg.norm(A, axis=1)) ** p, 1e-12)) ** (1.0 / p)
    best = None
    for _ in range(restarts):
        for signs in patterns:
            w0 = rng.standard_normal((k, d)) * scale / np.sqrt(d)
            W, err = _fit_once(A, r, k, p, signs, w0)
            if best is None or err < best.residual:
                best = LowRankFit(W, signs, p, err)
            if err <= tol:
                return best
    raise FitFailed(f"best max residual {best.residual:.3e} above {tol:g} after {restarts} restarts")


def maximize_fit(fit: LowRankFit, rng, starts: int = 20, iters: int = 500) -> np.ndarray:
    """Maximize the fitted polynomial on the unit sphere by gradient power steps."""
    d = fit.W.shape[1]
    cands = []
    for w in fit.W:
        n = np.linalg.norm(w)
        if n > 0:
            cands += [w / n, -w / n]
    for _ in range(starts):
        g = rng.standard_normal(d)
        cands.append(g / np.linalg.norm(g))
    best, best_val = None, -np.inf
    for a in cands:
        for _ in range(iters):
            g = fit.gradient(a)
            ng = np.linalg.norm(g)
            if ng == 0:
                break
            nxt = g / ng
            if np.linalg.norm(nxt - a) < 1e-15:
                break
            a = nxt
        val = float(fit.predict(a)[0])
        if val > best_val:
            best, best_val = a, val
    if best_val <= 0:
        return np.zeros(d)      # the origin is optimal for a nonpositive fit
    return best


def ball_uniform(rng, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(0, 1, (n, 1)) ** (1.0 / d)


def identify_then_commit(session: BanditSession, k: int, T: int, rng=None, meta: Optional[dict] = None,
                         holdout: int = 200, restarts: int = 20):
    """Play 2dk+1 random ball actions, fit, commit to the fitted maximizer.

    Returns (trace, fit).  The summary records the held-out reward error
    and the certificate bound min(T, 2dk).
    """
    model = session.model
    d, p = model.d, model.p
    rng = stream(session.seed, "itc") if rng is None else rng
    n0 = min(2 * d * k + 1, T)
    session.phase = "explore"
    A = ball_uniform(rng, n0, d)
    r = session.pull_batch(A)
    flags = {}
    try:
        fit = fit_lowrank_polynomial((A, r), k, p, d, rng, restarts=restarts)
    except FitFailed as e:
        fit = None
        flags["fit_failed"] = str(e)
    summary = {"explore": n0, "bound": regret_bound_noiseless(T, d * k)}
    if fit is not None:
        H = ball_uniform(rng, holdout, d)
        from .env import mean_batch
        summary["holdout_error"] = float(np.max(np.abs(fit.predict(H) - mean_batch(model, H))))
        a = maximize_fit(fit, rng)
        session.phase = "commit"
        if T > n0:
            session.play_fixed(a, T - n0)
    tr = RegretTrace.from_session(session, meta, flags=flags, summary=summary)
    return tr, fit
