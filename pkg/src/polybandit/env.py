"""Reward models, action validation, noisy pulls and the regret ledger.

Actions are plain numpy arrays whose shape depends on the model kind:

* EV, SYM, POLY-LOWRANK, POLY-QUX: vector of shape (d,), ||a|| <= 1
* LR: matrix of shape (d, d), ||A||_F <= 1
* ASYM: array of shape (p, d), one unit-ball vector per slot
* HARDCASE: convex weights of shape (C(d, p),) over the vertex set; weights
  summing to less than one put the remainder on the origin.

Batched evaluation takes the same layouts with a leading batch axis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Optional, Sequence

import numpy as np

from .streams import stream

KINDS = ("EV", "LR", "SYM", "ASYM", "POLY-LOWRANK", "POLY-QUX", "HARDCASE")
FRAME_TOL = 1e-9
NORM_TOL = 1e-9


class ModelError(ValueError):
    pass


class ActionError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    def __init__(self, msg, consumed=0):
        super().__init__(msg)
        self.consumed = consumed


@lru_cache(maxsize=32)
def hardcase_vertices(d: int, p: int):
    """(index tuples, 0/1 vertex matrix) for all strictly increasing p-tuples, in lex order."""
    idx = np.array(list(combinations(range(d), p)), dtype=np.int64).reshape(-1, p)
    vert = np.zeros((idx.shape[0], d))
    np.put_along_axis(vert, idx, 1.0, axis=1)
    idx.setflags(write=False)
    vert.setflags(write=False)
    return idx, vert


def _frozen(x):
    if x is None:
        return None
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class RewardModel:
    kind: str
    d: int
    k: int
    p: int
    lambdas: np.ndarray
    vectors: Optional[np.ndarray] = None   # (d, k); (p, d, k) for ASYM
    coef: Optional[np.ndarray] = None      # POLY-QUX coefficients over [1, U^T a]
    alpha_star: Optional[tuple] = None     # HARDCASE ground truth
    shift: float = 0.0                     # EV only: adds shift * ||a||^2
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "lambdas", _frozen(self.lambdas if self.lambdas is not None else []))
        object.__setattr__(self, "vectors", _frozen(self.vectors))
        object.__setattr__(self, "coef", _frozen(self.coef))
        if self.alpha_star is not None:
            object.__setattr__(self, "alpha_star", tuple(int(i) for i in self.alpha_star))
        self._validate()

    def _validate(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown kind {self.kind!r}")
        d, k, p = self.d, self.k, self.p
        if d < 1 or k < 1 or k > d:
            raise ModelError(f"need 1 <= k <= d, got d={d}, k={k}")
        if p < 2:
            raise ModelError("degree p must be >= 2")
        if self.kind in ("EV", "LR") and p != 2:
            raise ModelError("EV and LR models are quadratic (p = 2)")
        if self.kind == "LR" and 2 * k > d:
            raise ModelError("LR needs k <= d/2")
        if self.shift and self.kind != "EV":
            raise ModelError("shift only applies to EV models")
        if self.kind == "HARDCASE":
            a = self.alpha_star
            if a is None or len(a) != p or list(a) != sorted(set(a)) or a[0] < 0 or a[-1] >= d:
                raise ModelError("alpha_star must be a strictly increasing p-tuple in [0, d)")
            return
        if self.kind == "POLY-QUX":
            if self.vectors is None or self.vectors.shape != (d, k):
                raise ModelError("POLY-QUX needs a (d, k) frame")
            _check_frame(self.vectors)
            if self.coef is None or self.coef.shape != (k + 1,) * p:
                raise ModelError("POLY-QUX needs a coefficient tensor of shape (k+1,)*p")
            return
        lam = self.lambdas
        if lam.shape != (k,):
            raise ModelError(f"expected {k} eigenvalues, got {lam.shape}")
        if np.any(lam == 0):
            raise ModelError("zero eigenvalue: a rank-k model needs k nonzero eigenvalues")
        if np.any(np.diff(np.abs(lam)) > 0):
            raise ModelError("eigenvalues must be ordered by decreasing magnitude")
        if lam[0] > 1 + NORM_TOL:
            raise ModelError("lambda_1 must be <= 1")
        if self.kind in ("EV", "SYM", "POLY-LOWRANK") and lam[0] <= 0:
            raise ModelError("leading eigenvalue must be positive")
        if self.kind == "ASYM":
            if self.vectors is None or self.vectors.shape != (p, d, k):
                raise ModelError("ASYM needs p frames of shape (d, k)")
            for q in range(p):
                _check_frame(self.vectors[q])
        else:
            if self.vectors is None or self.vectors.shape != (d, k):
                raise ModelError("model needs a (d, k) frame")
            _check_frame(self.vectors)
        if self.kind == "LR" and np.sqrt(np.sum(lam**2)) > 1 + NORM_TOL:
            raise ModelError("LR model needs ||M||_F <= 1")

    # -- derived quantities -------------------------------------------------
    @property
    def matrix(self) -> np.ndarray:
        if self.kind not in ("EV", "LR"):
            raise ModelError("matrix only defined for EV/LR")
        V = self.vectors
        M = (V * self.lambdas) @ V.T
        if self.shift:
            M = M + self.shift * np.eye(self.d)
        return M

    @property
    def spectrum(self) -> np.ndarray:
        """Eigenvalues along the stored frame (shift included)."""
        return np.asarray(self.lambdas) + self.shift

    @property
    def gap(self) -> float:
        lam = self.spectrum
        l2 = float(np.max(np.abs(lam[1:]))) if len(lam) > 1 else 0.0
        if self.shift and self.k < self.d:
            l2 = max(l2, abs(self.shift))
        return float(lam[0] - l2)

    def tensor(self) -> np.ndarray:
        """Dense order-p tensor (SYM / POLY-LOWRANK / EV); small d only."""
        if self.kind not in ("EV", "SYM", "POLY-LOWRANK"):
            raise ModelError("dense tensor only for symmetric kinds")
        T = np.zeros((self.d,) * self.p)
        for lam, v in zip(self.spectrum, self.vectors.T):
            T += lam * _outer_power(v, self.p)
        if self.shift:
            T += self.shift * np.eye(self.d)
        return T

    def theta(self, cap: int = 10**7) -> np.ndarray:
        """Tensorized parameter over [1, a] so that f(a) = <theta, [1,a]^{(x)p}>."""
        d, p = self.d, self.p
        if (d + 1) ** p > cap:
            raise ModelError(f"(d+1)^p = {(d + 1) ** p} above cap {cap}")
        th = np.zeros((d + 1,) * p)
        if self.kind in ("EV", "SYM", "POLY-LOWRANK"):
            th[(slice(1, None),) * p] = self.tensor()
        elif self.kind == "POLY-QUX":
            U = np.zeros((d + 1, self.k + 1))
            U[0, 0] = 1.0
            U[1:, 1:] = self.vectors
            th = self.coef
            for _ in range(p):
                th = np.tensordot(th, U.T, axes=([0], [0]))
        else:
            raise ModelError(f"no tensorized parameter for {self.kind}")
        return th

    def __repr__(self):
        return f"RewardModel(kind={self.kind}, d={self.d}, k={self.k}, p={self.p}, lambdas={np.round(self.lambdas, 4).tolist()})"

    # -- serialization -----------------------------------------------------
    def to_json(self) -> str:
        doc = {"kind": self.kind, "d": self.d, "k": self.k, "p": self.p,
               "lambdas": [float(x) for x in self.lambdas], "seed": self.seed}
        if self.vectors is not None:
            V = self.vectors if self.vectors.ndim == 3 else self.vectors[None]
            doc["frames"] = [f.tolist() for f in V]   # row-major d x k per frame
        if self.coef is not None:
            doc["coef"] = self.coef.ravel().tolist()
        if self.alpha_star is not None:
            doc["alpha_star"] = list(self.alpha_star)
        if self.shift:
            doc["shift"] = self.shift
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "RewardModel":
        doc = json.loads(text)
        vec = None
        if "frames" in doc:
            fr = np.array(doc["frames"], dtype=float)
            vec = fr if doc["kind"] == "ASYM" else fr[0]
        coef = None
        if "coef" in doc:
            coef = np.array(doc["coef"]).reshape((doc["k"] + 1,) * doc["p"])
        return cls(doc["kind"], doc["d"], doc["k"], doc["p"], np.array(doc["lambdas"]), vec,
                   coef, tuple(doc["alpha_star"]) if "alpha_star" in doc else None,
                   doc.get("shift", 0.0), doc.get("seed"))


def _check_frame(V):
    err = np.max(np.abs(V.T @ V - np.eye(V.shape[1])))
    if err > FRAME_TOL:
        raise ModelError(f"frame not orthonormal (max error {err:.2e})")


def _outer_power(v, p):
    out = v
    for _ in range(p - 1):
        out = np.multiply.outer(out, v)
    return out


# -- evaluation ---------------------------------------------------------------

def action_shape(model: RewardModel) -> tuple:
    if model.kind == "LR":
        return (model.d, model.d)
    if model.kind == "ASYM":
        return (model.p, model.d)
    if model.kind == "HARDCASE":
        return (comb(model.d, model.p),)
    return (model.d,)


def check_action(model: RewardModel, a, tol: float = NORM_TOL) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != action_shape(model):
        raise ActionError(f"action shape {a.shape} does not match {action_shape(model)}")
    if not np.all(np.isfinite(a)):
        raise ActionError("non-finite action")
    if model.kind == "HARDCASE":
        if a.min() < -tol or a.sum() > 1 + tol:
            raise ActionError("hard-case weights must be nonnegative and sum to at most 1")
    elif model.kind == "ASYM":
        if np.any(np.linalg.norm(a, axis=1) > 1 + tol):
            raise ActionError("slot vector outside the unit ball")
    elif np.linalg.norm(a) > 1 + tol:
        raise ActionError("action outside the unit ball")
    return a


def mean_batch(model: RewardModel, X) -> np.ndarray:
    """Noiseless mean rewards for a batch of actions (no validation)."""
    X = np.asarray(X, dtype=float)
    kind = model.kind
    if kind in ("EV", "SYM", "POLY-LOWRANK"):
        c = X @ model.vectors
        out = (c**model.p) @ model.lambdas
        if model.shift:
            out = out + model.shift * np.einsum("ij,ij->i", X, X)
        return out
    if kind == "LR":
        V = model.vectors
        return np.einsum("nij,ik,jk,k->n", X, V, V, model.lambdas)
    if kind == "ASYM":
        prod = np.ones((X.shape[0], model.k))
        for q in range(model.p):
            prod *= X[:, q, :] @ model.vectors[q]
        return prod @ model.lambdas
    if kind == "HARDCASE":
        _, vert = hardcase_vertices(model.d, model.p)
        pts = X @ vert
        return np.prod(pts[:, list(model.alpha_star)], axis=1)
    if kind == "POLY-QUX":
        y = X @ model.vectors
        y = np.hstack([np.ones((y.shape[0], 1)), y])
        out = model.coef
        # contract the first axis p times against the batch
        acc = np.einsum("i...,ni->n...", out, y)
        for _ in range(model.p - 1):
            acc = np.einsum("ni...,ni->n...", acc, y)
        return acc
    raise ModelError(kind)


def eval_mean(model: RewardModel, a) -> float:
    a = check_action(model, a)
    return float(mean_batch(model, a[None])[0])


def optimal_reward(model: RewardModel):
    """(r*, a*) for the model."""
    kind = model.kind
    if kind in ("EV", "SYM", "POLY-LOWRANK"):
        # lambda_1 > 0 is the largest magnitude, and a shift only adds to it
        lam = model.spectrum
        v = model.vectors[:, 0].copy()
        return float(lam[0]), (_sign_fix(v) if model.p % 2 == 0 else v)
    if kind == "LR":
        M = model.matrix
        r = float(np.linalg.norm(M))
        return r, M / r
    if kind == "ASYM":
        a = model.vectors[:, :, 0].copy()
        if model.lambdas[0] < 0:
            a[0] = -a[0]
        return float(abs(model.lambdas[0])), a
    if kind == "HARDCASE":
        idx, _ = hardcase_vertices(model.d, model.p)
        w = np.zeros(idx.shape[0])
        w[_vertex_index(model.d, model.alpha_star)] = 1.0
        return 1.0, w
    if kind == "POLY-QUX":
        return _qux_optimum(model)
    raise ModelError(kind)


def _vertex_index(d, alpha) -> int:
    # rank of a combination in lexicographic order
    p = len(alpha)
    r, prev = 0, -1
    for i, a in enumerate(alpha):
        for x in range(prev + 1, a):
            r += comb(d - 1 - x, p - 1 - i)
        prev = a
    return r


def _sign_fix(v):
    nz = np.flatnonzero(np.abs(v) > 1e-15)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def _qux_optimum(model):
    # f depends on a only through w = U^T a; maximize over the k-ball
    k = model.k
    rng = np.random.default_rng(12345)
    W = rng.standard_normal((4000, k))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    W *= rng.uniform(0, 1, (4000, 1)) ** (1.0 / k)
    W = np.vstack([W, np.zeros((1, k))])
    A = W @ model.vectors.T
    vals = mean_batch(model, A)
    from scipy.optimize import minimize

    def neg(w):
        nw = np.linalg.norm(w)
        if nw > 1:
            w = w / nw
        return -mean_batch(model, (w @ model.vectors.T)[None])[0]

    best_w, best = None, -np.inf
    for i in np.argsort(vals)[-5:]:
        res = minimize(neg, W[i], method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        w = res.x / max(1.0, np.linalg.norm(res.x))
        v = -neg(w)
        if v > best:
            best, best_w = v, w
    return float(best), best_w @ model.vectors.T


# -- construction ---------------------------------------------------------------

def random_frame(rng, d, k):
    Q, R = np.linalg.qr(rng.standard_normal((d, k)))
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def make_random_model(kind: str, d: int, k: int = 1, p: Optional[int] = None,
                      spectrum: Optional[Sequence[float]] = None, seed: int = 0) -> RewardModel:
    """Random instance with orthonormalized Gaussian frames; deterministic per seed."""
    if kind not in KINDS:
        raise ModelError(f"unknown kind {kind!r}")
    if p is None:
        p = 2 if kind in ("EV", "LR") else 3
    rng = stream(seed, "env", kind, d, k, p)
    if kind == "HARDCASE":
        alpha = tuple(sorted(rng.choice(d, size=p, replace=False).tolist()))
        return RewardModel(kind, d, 1, p, np.array([1.0]), alpha_star=alpha, seed=seed)
    if kind == "POLY-QUX":
        U = random_frame(rng, d, k)
        C = rng.standard_normal((k + 1,) * p)
        C = _symmetrize(C)
        C /= np.abs(C).sum()
        return RewardModel(kind, d, k, p, np.array([]), U, coef=C, seed=seed)
    if spectrum is None:
        lam = np.sort(rng.uniform(0.1, 1.0, k - 1))[::-1] if k > 1 else np.array([])
        lam = np.concatenate([[1.0], lam])
        if kind == "LR":
            lam = lam / np.linalg.norm(lam)
    else:
        lam = np.asarray(spectrum, dtype=float)
        if lam.shape != (k,):
            raise ModelError(f"spectrum needs {k} entries")
        if lam[0] > 1 + NORM_TOL:
            raise ModelError("infeasible spectrum: lambda_1 > 1")
    if kind == "ASYM":
        V = np.stack([random_frame(rng, d, k) for _ in range(p)])
    else:
        V = random_frame(rng, d, k)
    return RewardModel(kind, d, k, p, lam, V, seed=seed)


def _symmetrize(C):
    from itertools import permutations
    perms = list(permutations(range(C.ndim)))
    return sum(np.transpose(C, q) for q in perms) / len(perms)


# -- ledger and session -----------------------------------------------------------

@dataclass
class RegretLedger:
    r_star: float
    t: int = 0
    cumulative_regret: float = 0.0
    keep_log: bool = True
    chunks: list = field(default_factory=list)   # (instantaneous regrets, phase)
    tol: float = 1e-9

    def add(self, inst: np.ndarray, phase: str = ""):
        inst = np.asarray(inst, dtype=float)
        if inst.size == 0:
            return
        lo, hi = inst.min(), inst.max()
        if lo < -self.tol or hi > 2 * self.r_star + self.tol:
            raise ValueError(f"regret increment outside [0, 2 r*]: [{lo}, {hi}]")
        # gaps below float resolution of the mean evaluation count as zero
        inst = np.where(inst <= 1e-12 * max(1.0, self.r_star), 0.0, inst)
        self.t += inst.size
        self.cumulative_regret += float(inst.sum())
        if self.keep_log:
            self.chunks.append((inst, phase))

    def instantaneous(self) -> np.ndarray:
        if not self.chunks:
            return np.zeros(0)
        return np.concatenate([c for c, _ in self.chunks])

    def phases(self) -> np.ndarray:
        if not self.chunks:
            return np.zeros(0, dtype=object)
        return np.concatenate([np.full(c.size, ph, dtype=object) for c, ph in self.chunks])


class BanditSession:
    """Environment handle: model, Gaussian noise law, step counter and regret ledger.

    ``horizon`` caps the number of pulls; a batch that crosses the cap is
    charged up to the cap and then raises :class:`BudgetExhausted`.
    """

    def __init__(self, model: RewardModel, sigma: float = 1.0, seed: int = 0,
                 horizon: Optional[int] = None, keep_log: bool = True, validate: bool = True):
        self.model = model
        self.sigma = float(sigma)
        self.seed = seed
        self.horizon = horizon
        self.validate = validate
        self.rng = stream(seed, "noise")
        r_star, a_star = optimal_reward(model)
        self.r_star = r_star
        self.a_star = a_star
        self.ledger = RegretLedger(r_star, keep_log=keep_log)
        self.phase = ""
        if model.kind == "POLY-QUX":
            self.ledger.tol = np.inf   # numeric optimum, no two-sided bound

    @property
    def t(self) -> int:
        return self.ledger.t

    @property
    def remaining(self) -> float:
        return np.inf if self.horizon is None else self.horizon - self.ledger.t

    def draw_noise(self, n: int) -> np.ndarray:
        if self.sigma == 0.0:
            return np.zeros(n)
        return self.sigma * self.rng.standard_normal(n)

    def _charge(self, means: np.ndarray):
        n = means.shape[0]
        if n > self.remaining:
            take = int(self.remaining)
            self.ledger.add(self.r_star - means[:take], self.phase)
            raise BudgetExhausted(f"horizon {self.horizon} reached", consumed=take)
        self.ledger.add(self.r_star - means, self.phase)

    def pull(self, a) -> float:
        a = check_action(self.model, a)
        return float(self.pull_batch(a[None], check=False)[0])

    def pull_batch(self, X, check: bool = True) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if check and self.validate:
            _check_batch(self.model, X)
        means = mean_batch(self.model, X)
        self._charge(means)
        return means + self.draw_noise(means.shape[0])

    def pull_outer(self, u: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """Pull the rank-1 matrix actions u z_i^T (LR models)."""
        if self.model.kind != "LR":
            raise ModelError("outer-product actions need an LR model")
        if self.validate:
            nz = np.linalg.norm(u) * np.linalg.norm(Z, axis=1)
            if np.any(nz > 1 + NORM_TOL):
                raise ActionError("rank-1 action outside the Frobenius ball")
        V = self.model.vectors
        means = ((Z @ V) * (u @ V)) @ self.model.lambdas
        self._charge(means)
        return means + self.draw_noise(means.shape[0])

    def play_fixed(self, a, n: int, check: bool = True) -> np.ndarray:
        """Play the same action n times (commit phases); returns the noisy rewards."""
        a = np.asarray(a, dtype=float)
        if check and self.validate:
            a = check_action(self.model, a)
        mu = float(mean_batch(self.model, a[None])[0])
        self._charge(np.full(int(n), mu))
        return mu + self.draw_noise(int(n))

    def charge_means(self, means: np.ndarray):
        """Record plays whose means were computed elsewhere (compiled loops)."""
        self._charge(np.asarray(means, dtype=float))


def _check_batch(model, X):
    shp = action_shape(model)
    if X.shape[1:] != shp:
        raise ActionError(f"batch action shape {X.shape[1:]} does not match {shp}")
    if model.kind == "HARDCASE":
        if X.min() < -NORM_TOL or np.any(X.sum(axis=1) > 1 + NORM_TOL):
            raise ActionError("invalid hard-case weights")
        return
    axes = tuple(range(1, X.ndim)) if model.kind != "ASYM" else (2,)
    if np.any(np.sqrt(np.sum(X * X, axis=axes)) > 1 + NORM_TOL):
        raise ActionError("action outside the unit ball")
