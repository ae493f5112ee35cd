"""Degree-p explorers: phased elimination, the burn-in variant, alternating power."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log
from typing import Optional

import numpy as np

from .constants import DEFAULT, Constants
from .env import BanditSession, ModelError, mean_batch
from .streams import stream
from .zorder import closed_form_G, estimate_tensor_G, probe_scale, sample_probes


class EmptyPool(RuntimeError):
    """Every candidate was eliminated; the hint or the budget is off."""


@dataclass
class CandidatePool:
    s: int
    eps: float
    actions: list
    rewards: Optional[np.ndarray] = None
    n: int = 0
    m: int = 0
    ids: list = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = list(range(len(self.actions)))

    def __len__(self):
        return len(self.actions)

    def best(self):
        if self.rewards is None:
            return self.actions[0]
        return self.actions[int(np.argmax(self.rewards))]


@dataclass
class PhasedResult:
    pool: CandidatePool
    samples: int
    telemetry: list
    history: list          # pool sizes per stage


def initial_pool_size(k: int, delta: float, C: Constants = DEFAULT) -> int:
    return max(1, ceil(C.C_L * k * log(1.0 / delta)))


def init_candidates(rng, d: int, k: int, delta: float, C: Constants = DEFAULT,
                    size: Optional[int] = None) -> CandidatePool:
    """Uniform-sphere starting candidates."""
    L0 = initial_pool_size(k, delta, C) if size is None else size
    A = rng.standard_normal((L0, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    return CandidatePool(0, 1.0, list(A))


def good_initial(a, V) -> bool:
    """max_{j>=2} |v_j.a| <= |v_1.a| / 2 and |v_1.a| >= 1/sqrt(d)."""
    c = np.abs(V.T @ a)
    d = V.shape[0]
    rest = c[1:].max() if c.size > 1 else 0.0
    return bool(rest <= 0.5 * c[0] and c[0] >= 1.0 / np.sqrt(d))


def tan_to(a, v) -> float:
    from .spectral import tan_angle
    return tan_angle(a, v)


def angle_to_regret(zeta: float, p: int, r_star: float) -> float:
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    return float(r_star * min(2.0, p * zeta * zeta))


def inner_steps(d: int) -> int:
    # the inner count with alpha = 1/2
    return int(ceil(2 * log(2 * d)))


def stage_count(eps: float, C: Constants = DEFAULT) -> int:
    return int(C.C_S * ceil(log(1.0 / eps))) + 1


def stage_batch(d: int, p: int, delta: float, lam1: float, eps_s: float, C: Constants = DEFAULT) -> int:
    """C_n d^p log(d/delta) / (lam1 eps_s)^2, then multiplied once by log^3(n/delta)."""
    n = C.C_n * d**p * log(d / delta) / (lam1 * lam1 * eps_s * eps_s)
    n = n * log(max(n, 2.0) / delta) ** 3
    return max(1, int(ceil(n)))


def phase2_batch(d: int, delta: float, lam1: float, eps_s: float, C: Constants = DEFAULT,
                 integer: bool = True):
    """Refinement-phase batch: quadratic in d, independent of p (``integer=False`` skips rounding)."""
    n = C.C_n * d * d * log(1.0 / delta) / (lam1 * lam1 * eps_s * eps_s)
    return max(1, int(ceil(n))) if integer else n


def elimination_threshold(hint: float, p: int, slack: float) -> float:
    """Keep a candidate iff r_n >= hint (1 - p slack); abs() guards a noisy negative hint."""
    return hint - abs(hint) * p * slack


def _estimate_reward(session, a, n):
    return float(np.mean(session.play_fixed(a, n, check=False)))


def _refine(session, a, p, n, m, steps, rng, oracle):
    used = 0
    for _ in range(steps):
        if oracle:
            g = closed_form_G(session.model, a, p, m)
        else:
            g, _b = estimate_tensor_G(session, a, p, n, m, rng)
            used += 2 * n
        ng = np.linalg.norm(g)
        if ng == 0:
            break
        a = g / ng
    return a, used


def _run_stages(session, pool, p, stages, batch_of, delta_split, C, hint, oracle, seed, tag,
                telemetry, history, v1, n_eval=None):
    d = session.model.d
    samples = 0
    steps = inner_steps(d)
    for s in stages:
        eps_s = 2.0 ** (-s)
        n = batch_of(eps_s)
        m = probe_scale(n, d, delta_split, C.C_m)
        new, r = [], []
        for cid, a in zip(pool.ids, pool.actions):
            rng = stream(seed, tag, cid, s)
            a, used = _refine(session, a, p, n, m, steps, rng, oracle)
            ne = n if n_eval is None else n_eval
            if oracle:
                rn = float(mean_batch(session.model, a[None])[0])
            else:
                rn = _estimate_reward(session, a, ne)
                used += ne
            samples += used
            new.append(a)
            r.append(rn)
            row = {"s": s, "candidate": cid, "steps": steps, "samples": used, "r_n": rn}
            if v1 is not None:
                row["tan"] = tan_to(a, v1)
            telemetry.append(row)
        r = np.array(r)
        h = float(r.max()) if hint == "empirical" else float(hint)
        keep = np.flatnonzero(r >= elimination_threshold(h, p, eps_s * eps_s))
        if keep.size == 0:
            raise EmptyPool(f"stage {s}: all {len(new)} candidates eliminated (hint {h:.4g})")
        pool = CandidatePool(s, eps_s, [new[i] for i in keep], r[keep], n, m,
                             [pool.ids[i] for i in keep])
        history.append(len(pool))
    return pool, samples


def run_phased_elimination(session: BanditSession, p: int, k: int, eps: float, delta: float = 0.1,
                           r_star_hint="empirical", constants: Constants = DEFAULT, *,
                           lam1: Optional[float] = None, oracle: bool = False,
                           pool_size: Optional[int] = None, n_eval: Optional[int] = None,
                           seed=None) -> PhasedResult:
    """Stagewise zeroth-order refinement of random candidates with elimination.

    ``r_star_hint`` is ``"empirical"`` (best estimated reward of the stage)
    or a number (oracle scale).  ``oracle=True`` substitutes the closed-form
    operator for the sampled one and reads rewards without noise.  Budget
    uses ``lam1`` if given, otherwise the model's leading eigenvalue.
    """
    model = session.model
    if model.kind not in ("SYM", "POLY-LOWRANK"):
        raise ModelError("phased elimination needs a symmetric tensor session")
    if p < 3:
        raise ValueError("p must be >= 3; use spectral for p = 2")
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    d = model.d
    seed = session.seed if seed is None else seed
    lam1 = float(model.spectrum[0]) if lam1 is None else lam1
    pool = init_candidates(stream(seed, "phased", "init"), d, k, delta, constants, pool_size)
    S = stage_count(eps, constants)
    dlt = delta / (S * len(pool))
    telemetry, history = [], [len(pool)]
    v1 = model.vectors[:, 0]
    pool, samples = _run_stages(
        session, pool, p, range(1, S + 1),
        lambda e: stage_batch(d, p, dlt, lam1, e, constants), dlt, constants,
        r_star_hint, oracle, seed, "phased", telemetry, history, v1, n_eval)
    return PhasedResult(pool, samples, telemetry, history)


def run_burn_in(session: BanditSession, p: int, k: int, T: int, delta: float = 0.1,
                constants: Constants = DEFAULT, *, lam1: Optional[float] = None,
                pool_size: Optional[int] = None, seed=None, meta: Optional[dict] = None,
                phase2_constants: Optional[Constants] = None):
    """Coarse phased elimination at eps = 1/p, refinement at the horizon-tuned
    accuracy with d^2 batches, then finite-arm UCB on the surviving pool.

    Returns a RegretTrace; if the horizon runs out during exploration the
    trace carries the flag ``exploration_overran``.  ``phase2_constants``
    sets the refinement batch separately (the two batch formulas differ in
    scale by orders of magnitude).
    """
    from .baselines import run_finite_ucb
    from .env import BudgetExhausted
    from .trace import RegretTrace

    model = session.model
    d = model.d
    seed = session.seed if seed is None else seed
    lam1 = float(model.spectrum[0]) if lam1 is None else lam1
    v1 = model.vectors[:, 0]
    C2 = constants if phase2_constants is None else phase2_constants
    flags, summary = {}, {"T": T}
    telemetry, history = [], []
    eps1 = 1.0 / p
    eps2 = min(k**0.25 * d**0.5 * lam1**-0.5 * T**-0.25, eps1)
    S1 = stage_count(eps1, constants)
    S2 = max(S1, int(ceil(log(1.0 / eps2) / log(2.0))))
    session.horizon = T if session.horizon is None else min(session.horizon, T)
    try:
        session.phase = "burn-in"
        pool = init_candidates(stream(seed, "burn-in", "init"), d, k, delta, constants, pool_size)
        history.append(len(pool))
        dlt = delta / ((S2 + 1) * len(pool))
        pool, n1 = _run_stages(session, pool, p, range(1, S1 + 1),
                               lambda e: stage_batch(d, p, dlt, lam1, e, constants), dlt, constants,
                               "empirical", False, seed, "burn-in", telemetry, history, v1)
        a1 = pool.best()
        summary["phase1_samples"] = n1
        summary["phase1_alignment"] = float(abs(a1 @ v1))
        summary["phase1_ok"] = bool(abs(a1 @ v1) >= 1 - 1.0 / p)
        session.phase = "refine"
        pool, n2 = _run_stages(session, pool, p, range(S1 + 1, S2 + 1),
                               lambda e: phase2_batch(d, dlt, lam1, e, C2), dlt, C2,
                               "empirical", False, seed, "refine", telemetry, history, v1)
        summary["phase2_samples"] = n2
        summary["eps2"] = eps2
        session.phase = "ucb"
        run_finite_ucb(session, pool.actions, T - session.t, delta)
    except BudgetExhausted:
        flags["exploration_overran"] = True
    except EmptyPool as e:
        flags["empty_pool"] = str(e)
    if session.t < T and not flags.get("exploration_overran"):
        flags.setdefault("short", True)
    summary["pool_history"] = history
    return RegretTrace.from_session(session, meta, telemetry, flags=flags, summary=summary)


# -- asymmetric -------------------------------------------------------------------

def _slot_pulls(session, tup, q, z):
    X = np.repeat(tup[None], z.shape[0], axis=0)
    X[:, q, :] = z
    return session.pull_batch(X, check=False)


def slot_estimate(session, tup, q, n, m, rng):
    """y = (m/n) sum r_i z_i with slot q replaced by z_i; E[y] = T(a(1),..,I,..,a(p))."""
    batch = sample_probes(rng, n, m, tup.shape[1])
    r = _slot_pulls(session, tup, q, batch.z)
    return (m / n) * (r @ batch.z), batch


def slot_contraction(model, tup, q) -> np.ndarray:
    """Dense T(a(1), .., I, .., a(p)) for an ASYM model."""
    coef = np.array(model.lambdas, dtype=float)
    for r in range(model.p):
        if r != q:
            coef = coef * (tup[r] @ model.vectors[r])
    return model.vectors[q] @ coef


def run_alternating_power(session: BanditSession, p: int, k: int, eps: float, delta: float = 0.1,
                          r_star_hint="empirical", constants: Constants = DEFAULT, *,
                          lam1: Optional[float] = None, pool_size: Optional[int] = None,
                          oracle: bool = False, seed=None):
    """Alternating slot-wise power iteration with stagewise elimination (ASYM).

    Returns (best tuple, PhasedResult).
    """
    model = session.model
    if model.kind != "ASYM":
        raise ModelError("alternating power needs an ASYM session")
    if p < 3 or model.p != p:
        raise ValueError("p must be >= 3 and match the model")
    d = model.d
    seed = session.seed if seed is None else seed
    lam1 = float(abs(model.lambdas[0])) if lam1 is None else lam1
    size = pool_size or max(1, ceil(constants.C_L * (2 * k * log(p / delta)) ** p))
    rng0 = stream(seed, "alt", "init")
    tuples = rng0.standard_normal((size, p, d))
    tuples /= np.linalg.norm(tuples, axis=2, keepdims=True)
    pool = CandidatePool(0, 1.0, list(tuples))
    S = stage_count(eps, constants)
    dlt = delta / (S * size)
    cycles = int(ceil(log(2 * d)))
    telemetry, history, samples = [], [size], 0
    for s in range(1, S + 1):
        eps_s = 2.0 ** (-s)
        n = phase2_batch(d, dlt, lam1, eps_s, constants)
        n = max(n, 1)
        m = probe_scale(n, d, dlt, constants.C_m)
        new, r = [], []
        for cid, tup in zip(pool.ids, pool.actions):
            tup = tup.copy()
            used = 0
            for c in range(cycles):
                for q in range(p):
                    if oracle:
                        y = slot_contraction(model, tup, q)
                    else:
                        y, _b = slot_estimate(session, tup, q, n, m, stream(seed, "alt", cid, s, c, q))
                        used += n
                    ny = np.linalg.norm(y)
                    if ny > 0:
                        tup[q] = y / ny
            if oracle:
                rn = float(mean_batch(model, tup[None])[0])
            else:
                rn = _estimate_reward(session, tup, n)
                used += n
            samples += used
            new.append(tup)
            r.append(rn)
            telemetry.append({"s": s, "candidate": cid, "steps": cycles * p, "samples": used, "r_n": rn})
        r = np.array(r)
        h = float(r.max()) if r_star_hint == "empirical" else float(r_star_hint)
        keep = np.flatnonzero(r >= elimination_threshold(h, p, eps_s))
        if keep.size == 0:
            raise EmptyPool(f"stage {s}: all candidates eliminated")
        pool = CandidatePool(s, eps_s, [new[i] for i in keep], r[keep], n, m, [pool.ids[i] for i in keep])
        history.append(len(pool))
    return pool.best(), PhasedResult(pool, samples, telemetry, history)
