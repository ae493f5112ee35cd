"""Power-method style explorers for quadratic rewards and their commit wrappers.

All explorers take a :class:`~polybandit.env.BanditSession`, spend pulls on
Gaussian-perturbed probes, and return an :class:`ExploreResult`.  Model
quantities such as the eigengap are "oracle parameters": when not passed
explicitly they are read from the session's model, which is how the scaling
experiments are parameterized.  ``run_npm_doubling`` is the agnostic variant.

Probe randomness for iteration ``l`` of candidate ``c`` comes from
``stream(seed, <algorithm>, c, l)`` so reruns and parallel evaluation agree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import log
from typing import Callable, Optional

import numpy as np

from .constants import DEFAULT, Constants
from .env import BanditSession, ModelError, RewardModel, _sign_fix, eval_mean
from .streams import stream
from .trace import RegretTrace
from .zorder import probe_scale, sample_probes

ORTHO_TOL = 1e-9


class GapError(ValueError):
    """Degenerate eigengap (alpha >= 1) or invalid gap-free accuracy."""


# -- geometry ------------------------------------------------------------------

def tan_angle(a, v) -> float:
    """tan of the angle between the lines through a and v (residual form, accurate near 0)."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    a = a / np.linalg.norm(a)
    v = v / np.linalg.norm(v)
    c = float(a @ v)
    if c == 0:
        return np.inf
    return float(np.linalg.norm(a - c * v) / abs(c))


def subspace_distance(X, V) -> float:
    """sin of the largest principal angle between span(V) and span(X) (X orthonormal)."""
    R = V - X @ (X.T @ V)
    return float(np.linalg.norm(R, 2))


def orthonormalize(Y) -> np.ndarray:
    """Householder QR with the signs chosen so that diag(R) >= 0."""
    Q, R = np.linalg.qr(Y)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def top_eigvec(S) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    return _sign_fix(U[:, np.argmax(w)])


def uniform_sphere(rng, d) -> np.ndarray:
    a = rng.standard_normal(d)
    return a / np.linalg.norm(a)


# -- results ---------------------------------------------------------------------

@dataclass
class IterateState:
    iterate: np.ndarray
    l: int = 0
    samples: int = 0
    diagnostics: list = field(default_factory=list)

    def check(self):
        x = self.iterate
        if x.ndim == 1:
            if abs(np.linalg.norm(x) - 1.0) > 1e-12:
                raise AssertionError("iterate lost unit norm")
        else:
            err = np.max(np.abs(x.T @ x - np.eye(x.shape[1])))
            if err > ORTHO_TOL:
                raise AssertionError(f"frame lost orthonormality ({err:.2e})")


@dataclass
class ExploreResult:
    action: np.ndarray
    samples: int
    iterations: int = 0
    n: int = 0
    m: int = 0
    diagnostics: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.action
        yield self.samples


# -- schedules -------------------------------------------------------------------

def _oracle_spectrum(session: BanditSession):
    model = session.model
    if model.kind not in ("EV", "LR"):
        raise ModelError("quadratic explorers need an EV or LR model")
    lam = np.abs(model.spectrum) if model.kind == "LR" else model.spectrum
    return lam


def npm_schedule(d: int, eps: float, delta: float, lam1: float, alpha: float,
                 C: Constants = DEFAULT) -> tuple:
    """(n, L) for the noisy power method; the gap is lam1 (1 - alpha)."""
    if not 0 <= alpha < 1:
        raise GapError(f"degenerate gap: alpha = {alpha}")
    gap = lam1 * (1.0 - alpha)
    n = int(np.ceil(C.C_n * d * d * log(d / delta) / (gap * gap * eps * eps)))
    L = int(np.floor(C.C_L * log(d / eps) / (1.0 - alpha))) + 1
    return max(n, 1), L


def subspace_schedule(d: int, eps: float, delta: float, lam_k: float,
                      C: Constants = DEFAULT) -> tuple:
    n = int(np.ceil(C.C_n * d * d * log(d / delta) ** 2 / (lam_k * lam_k * eps * eps)))
    L = int(np.floor(C.C_L * log(d / eps))) + 1
    return max(n, 1), L


# -- noisy power method ----------------------------------------------------------

def _npm_step(session, a, n, m, rng, exact, M):
    if exact:
        return 0.5 * (M @ a), 0
    batch = sample_probes(rng, n, m, a.shape[0])
    r = session.pull_batch(0.5 * (a + batch.z), check=False)
    return (m / n) * (r @ batch.z), n


def _npm_loop(session, a, L, n, m, eps, gap, seed, tag, exact, stop=None):
    model = session.model
    M = model.matrix
    v1 = session.a_star
    state = IterateState(a)
    for l in range(1, L + 1):
        rng = stream(seed, tag, 0, l)
        y, used = _npm_step(session, state.iterate, n, m, rng, exact, M)
        G = 2.0 * y - M @ state.iterate
        gn = float(np.linalg.norm(G))
        a = y / np.linalg.norm(y)
        state.iterate, state.l = a, l
        state.samples += used
        state.diagnostics.append({
            "l": l, "samples": state.samples, "tan": tan_angle(a, v1), "G": gn,
            "VG": float(abs(v1 @ G)), "noise_ok": bool(5 * gn <= eps * gap),
        })
        if stop is not None and stop(state):
            break
    return state


def run_npm(session: BanditSession, eps: float, delta: float = 0.1, constants: Constants = DEFAULT,
            *, lam1: Optional[float] = None, lam2: Optional[float] = None, n: Optional[int] = None,
            L: Optional[int] = None, exact: bool = False, start=None, seed=None,
            stop: Optional[Callable[[IterateState], bool]] = None) -> ExploreResult:
    """Noisy power method on an EV session.

    Plays (a + z)/2, forms y = (m/n) sum r z (so E[y] = M a / 2) and
    normalizes.  ``exact=True`` replaces the estimate with M a / 2 and
    spends no pulls.  ``stop`` is checked after every step; when it fires
    early ``info["stopped"]`` is true.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if session.model.kind != "EV":
        raise ModelError("run_npm needs an EV session")
    lam = _oracle_spectrum(session)
    lam1 = float(lam[0]) if lam1 is None else lam1
    if lam2 is None:
        lam2 = lam1 - session.model.gap
    alpha = abs(lam2 / lam1)
    d = session.model.d
    n0, L0 = npm_schedule(d, eps, delta, lam1, alpha, constants)
    n = n0 if n is None else int(n)
    L = L0 if L is None else int(L)
    m = probe_scale(n, d, delta, constants.C_m)
    seed = session.seed if seed is None else seed
    a = uniform_sphere(stream(seed, "npm", 0, "start"), d) if start is None else np.asarray(start, float)
    a = a / np.linalg.norm(a)
    state = _npm_loop(session, a, L, n, m, eps, lam1 * (1 - alpha), seed, "npm", exact, stop)
    stopped = stop is not None and bool(state.diagnostics) and bool(stop(state))
    return ExploreResult(state.iterate, state.samples, state.l, n, m, state.diagnostics,
                         {"alpha": alpha, "lam1": lam1, "L": L, "stopped": stopped})


def run_npm_gap_free(session: BanditSession, eps: float, delta: float = 0.1,
                     constants: Constants = DEFAULT, *, lam1: Optional[float] = None,
                     exact: bool = False, seed=None) -> ExploreResult:
    """Power method run as if the eigengap were lam1 eps^2 / 2."""
    if not 0 < eps < np.sqrt(2.0):
        raise GapError("gap-free accuracy needs 0 < eps < sqrt(2)")
    if session.model.kind != "EV":
        raise ModelError("run_npm_gap_free needs an EV session")
    if np.any(session.model.spectrum < -1e-12):
        raise ModelError("gap-free mode needs a PSD model; apply shift_psd first")
    lam1 = float(session.model.spectrum[0]) if lam1 is None else lam1
    alpha = 1.0 - eps * eps / 2.0
    d = session.model.d
    n, L = npm_schedule(d, eps, delta, lam1, alpha, constants)
    m = probe_scale(n, d, delta, constants.C_m)
    seed = session.seed if seed is None else seed
    a = uniform_sphere(stream(seed, "npm-gf", 0, "start"), d)
    state = _npm_loop(session, a, L, n, m, eps, lam1 * (1 - alpha), seed, "npm-gf", exact)
    return ExploreResult(state.iterate, state.samples, state.l, n, m, state.diagnostics,
                         {"alpha": alpha, "lam1": lam1, "L": L})


def run_npm_doubling(session: BanditSession, stop: Callable[[IterateState], bool],
                     delta: float = 0.1, constants: Constants = DEFAULT, *, n0: int = 256,
                     growth: float = 2.0, max_samples: float = np.inf, seed=None) -> ExploreResult:
    """Agnostic schedule: one power step per round with batch n0 * growth^j.

    Stops when ``stop(state)`` is true or the next batch would exceed
    ``max_samples``; ``info["stopped"]`` tells which.
    """
    if growth <= 1:
        raise ValueError("growth must exceed 1")
    model = session.model
    d = model.d
    M = model.matrix
    seed = session.seed if seed is None else seed
    state = IterateState(uniform_sphere(stream(seed, "npm-dbl", 0, "start"), d))
    v1 = session.a_star
    j, stopped, m = 0, False, 0
    while True:
        n = int(np.ceil(n0 * growth**j))
        if state.samples + n > max_samples:
            break
        m = probe_scale(n, d, delta, constants.C_m)
        y, used = _npm_step(session, state.iterate, n, m, stream(seed, "npm-dbl", 0, j), False, M)
        state.iterate = y / np.linalg.norm(y)
        state.l = j + 1
        state.samples += used
        state.diagnostics.append({"l": j + 1, "samples": state.samples, "n": n,
                                  "tan": tan_angle(state.iterate, v1)})
        j += 1
        if stop(state):
            stopped = True
            break
    return ExploreResult(state.iterate, state.samples, state.l, n, m, state.diagnostics,
                         {"stopped": stopped})


# -- reductions -------------------------------------------------------------------

def shift_psd(model: RewardModel) -> RewardModel:
    """Add |lambda_min| I so the spectrum is nonnegative; eigenvectors are unchanged.

    Trailing eigenvalues outside the stored frame are zero, so the most
    negative eigenvalue is min(0, lambda) when k < d.
    """
    if model.kind != "EV":
        raise ModelError("shift_psd needs an EV model")
    lam = model.spectrum
    low = float(lam.min()) if model.k == model.d else min(0.0, float(lam.min()))
    s = model.shift + abs(low)
    return RewardModel("EV", model.d, model.k, 2, model.lambdas, model.vectors, shift=s, seed=model.seed)


def asym_to_sym(Mt) -> np.ndarray:
    """Symmetric block embedding [[0, Mt^T], [Mt, 0]] with eigenvalues +-sigma_i(Mt)."""
    Mt = np.atleast_2d(np.asarray(Mt, dtype=float))
    if np.linalg.norm(Mt, 2) > 1 + 1e-9:
        raise ValueError("need ||Mt||_2 <= 1")
    d1, d2 = Mt.shape
    B = np.zeros((d1 + d2, d1 + d2))
    B[:d2, d2:] = Mt.T
    B[d2:, :d2] = Mt
    return B


def model_from_matrix(M, seed=None) -> RewardModel:
    """EV model from a symmetric matrix (drops exactly-zero eigenvalues)."""
    M = np.asarray(M, dtype=float)
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(-np.abs(w), kind="stable")
    keep = [i for i in order if abs(w[i]) > 1e-14]
    w, U = w[keep], U[:, keep]
    if w[0] < 0:
        # make the leading eigenvalue positive by shifting, so the model is valid
        raise ModelError("leading eigenvalue must be positive")
    return RewardModel("EV", M.shape[0], len(keep), 2, w, U, seed=seed)


def asym_model(Mt, seed=None) -> RewardModel:
    return model_from_matrix(asym_to_sym(Mt), seed=seed)


# -- subspace iteration --------------------------------------------------------------

def _subspace_loop(session, X, L, n, m, eps, sigma_gap, seed, tag, exact, scale=1.0, probe_half=False, cand=0):
    """Shared orthogonal-iteration loop on LR (rank-1 probes) or EV (half probes).

    Returns the state plus the last (Y_L, X_{L-1}) pair.
    """
    model = session.model
    M = model.matrix
    d, kp = X.shape
    V = model.vectors
    state = IterateState(X)
    Y = X_prev = None
    for l in range(1, L + 1):
        X_prev = state.iterate
        if exact:
            Y = M @ X_prev
            used = 0
        else:
            rng = stream(seed, tag, cand, l)
            batch = sample_probes(rng, n, m, d)
            Y = np.empty_like(X_prev)
            for s in range(kp):
                if probe_half:
                    r = session.pull_batch(0.5 * (X_prev[:, s] + batch.z), check=False)
                else:
                    r = session.pull_outer(X_prev[:, s], batch.z)
                Y[:, s] = (scale * m / n) * (r @ batch.z)
            used = n * kp
        G = Y - M @ X_prev
        gn = float(np.linalg.norm(G, 2))
        Xn = orthonormalize(Y)
        state.iterate, state.l = Xn, l
        state.samples += used
        state.check()
        state.diagnostics.append({
            "l": l, "samples": state.samples, "sin": subspace_distance(Xn, V), "G": gn,
            "VG": float(np.linalg.norm(V.T @ G, 2)), "noise_ok": bool(5 * gn <= eps * sigma_gap),
        })
    return state, Y, X_prev


def run_subspace_iteration(session: BanditSession, k: int, eps: float, delta: float = 0.1,
                           constants: Constants = DEFAULT, *, lam_k: Optional[float] = None,
                           n: Optional[int] = None, L: Optional[int] = None, exact: bool = False,
                           seed=None) -> ExploreResult:
    """Noisy orthogonal iteration for a low-rank linear reward <M, A>.

    Uses k' = 2k columns.  Each column s pulls the rank-1 actions
    X(s) z_i^T, whose Frobenius norm is ||z_i|| <= 1.  The output is
    A = Y_L X_{L-1}^T, normalized to unit Frobenius norm.
    """
    model = session.model
    if model.kind != "LR":
        raise ModelError("run_subspace_iteration needs an LR session")
    d = model.d
    kp = 2 * k
    if kp > d:
        raise ValueError(f"k' = {kp} exceeds d = {d}")
    lam = _oracle_spectrum(session)
    lam_k = float(lam[min(k, len(lam)) - 1]) if lam_k is None else lam_k
    n0, L0 = subspace_schedule(d, eps, delta, lam_k, constants)
    n = n0 if n is None else int(n)
    L = L0 if L is None else int(L)
    m = probe_scale(n, d, delta, constants.C_m)
    seed = session.seed if seed is None else seed
    X0 = orthonormalize(stream(seed, "subspace", 0, "start").standard_normal((d, kp)))
    state, Y, X_prev = _subspace_loop(session, X0, L, n, m, eps, lam_k, seed, "subspace", exact)
    A = Y @ X_prev.T
    A = A / np.linalg.norm(A)
    return ExploreResult(A, state.samples, L, n, m, state.diagnostics,
                         {"frame": state.iterate, "k_prime": kp, "lam_k": lam_k})


def best_gap_index(lam, k: int) -> int:
    """l maximizing |lam_l| - |lam_{l+1}| over l <= k (lam_{k+1} = 0); checks the pigeonhole bound."""
    a = np.abs(np.asarray(lam, dtype=float)[:k])
    gaps = a - np.append(a[1:], 0.0)
    l = int(np.argmax(gaps))
    if gaps[l] < a[0] / k - 1e-12:
        raise AssertionError("eigengap pigeonhole bound violated")
    return l + 1


def run_gap_free_subspace(session: BanditSession, k: int, eps: float, delta: float = 0.1,
                          mode: str = "EV", constants: Constants = DEFAULT, *,
                          restarts: bool = False, lam1: Optional[float] = None,
                          lam_k: Optional[float] = None, n: Optional[int] = None,
                          L: Optional[int] = None, n_eval: int = 0, exact: bool = False,
                          seed=None) -> ExploreResult:
    """Gap-free subspace iteration.

    EV mode plays (X(s) + z)/2 per column with Y(s) = 4 (m/n) sum r z and
    returns the top eigenvector of sym(Y_L X_{L-1}^T).  With
    ``restarts=True`` it runs k' = 2, 4, ..., 2k and keeps the candidate
    with the best estimated reward (``n_eval`` pulls each; exact reward if
    ``n_eval == 0``).  LR mode uses the batch size d^2 k^2 / (r*^2 eps^4)
    with k' = 2k.
    """
    model = session.model
    d = model.d
    seed = session.seed if seed is None else seed
    logd = log(d / delta)
    if mode == "LR":
        if model.kind != "LR":
            raise ModelError("LR mode needs an LR session")
        r_star = session.r_star
        n_lr = int(np.ceil(constants.C_n * d * d * k * k * logd / (r_star**2 * eps**4)))
        return run_subspace_iteration(session, k, eps, delta, constants, lam_k=1.0,
                                      n=n_lr if n is None else n, L=L, exact=exact, seed=seed)
    if mode != "EV":
        raise ValueError(f"unknown mode {mode!r}")
    if model.kind != "EV":
        raise ModelError("EV mode needs an EV session")
    lam = model.spectrum
    lam1 = float(lam[0]) if lam1 is None else lam1
    if lam_k is None:
        lam_k = float(abs(lam[min(k, len(lam)) - 1]))
    L = int(np.floor(constants.C_L * log(d / eps))) + 1 if L is None else L
    if restarts:
        best_gap_index(lam, min(k, len(lam)))
        n = int(np.ceil(constants.C_n * d * d * k * k * logd / eps**2)) if n is None else n
        widths = [min(2 * j, d) for j in range(1, k + 1)]
    else:
        n = int(np.ceil(constants.C_n * d * d * lam1**2 * logd / (eps**2 * lam_k**2))) if n is None else n
        widths = [min(2 * k, d)]
    m = probe_scale(n, d, delta, constants.C_m)
    cands, total, diags = [], 0, []
    for ci, kp in enumerate(widths):
        X0 = orthonormalize(stream(seed, "gf-subspace", ci, "start").standard_normal((d, kp)))
        state, Y, X_prev = _subspace_loop(session, X0, L, n, m, eps, lam_k, seed,
                                          "gf-subspace", exact, scale=4.0, probe_half=True, cand=ci)
        a = top_eigvec(Y @ X_prev.T)
        total += state.samples
        for row in state.diagnostics:
            diags.append(dict(row, candidate=ci, k_prime=kp))
        if n_eval and not exact:
            est = float(np.mean(session.play_fixed(a, n_eval)))
            total += n_eval
        else:
            est = eval_mean(model, a)
        cands.append((est, ci, a))
    best = max(cands, key=lambda c: (c[0], -c[1]))
    return ExploreResult(best[2], total, L, n, m, diags,
                         {"estimates": [c[0] for c in cands], "widths": widths, "chosen": best[1]})


# -- commit ------------------------------------------------------------------------

def pac_zeta(A: float, a: float, p: float, T: float) -> float:
    """Exploration accuracy minimizing A zeta^-a + T p zeta^2: zeta = (A / (T p))^(1/(a+2))."""
    return float((A / (T * p)) ** (1.0 / (a + 2.0)))


def etc_commit(session: BanditSession, result, T: int, meta: Optional[dict] = None) -> RegretTrace:
    """Play the explorer's action for the rest of the horizon and return the trace.

    ``result`` is an :class:`ExploreResult`, a bare action, or None when
    exploration ran out of budget; in the last case the trace is flagged.
    """
    flags = {}
    used = session.t
    if used > T:
        raise ValueError("session already past the horizon")
    action = None
    if result is not None:
        action = result.action if isinstance(result, ExploreResult) else np.asarray(result)
    if result is None:
        flags["exploration_overran"] = True
    elif T > used:
        session.phase = "commit"
        session.play_fixed(action, T - used)
    trace = RegretTrace.from_session(session, meta, getattr(result, "diagnostics", None), flags=flags)
    trace.summary.update({"explore_samples": used, "T": T})
    if action is not None:
        trace.summary["committed_gap"] = float(session.r_star - eval_mean(session.model, action))
    return trace
