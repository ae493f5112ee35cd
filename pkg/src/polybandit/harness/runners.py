"""Algorithm registry: config id -> runner producing a RegretTrace for one seed."""
from __future__ import annotations

from dataclasses import dataclass
from math import log
from typing import Callable

import numpy as np

from .. import baselines, noiseless, spectral, tensor
from ..env import BanditSession, BudgetExhausted
from ..spectral import ExploreResult, etc_commit, npm_schedule, subspace_schedule, tan_angle
from ..streams import stream
from ..trace import RegretTrace

VECTOR_KINDS = {"EV", "SYM", "POLY-LOWRANK", "POLY-QUX"}


@dataclass
class Algorithm:
    kinds: set
    defaults: dict
    run: Callable


ALGORITHMS: dict = {}


def register(name, kinds, **defaults):
    def deco(fn):
        ALGORITHMS[name] = Algorithm(set(kinds), defaults, fn)
        return fn
    return deco


def _meta(cfg, seed):
    return {"config": cfg.as_dict(), "seed": seed, "algorithm": cfg.algorithm}


def _session(cfg, seed, capped=True):
    model = cfg.environment.build(seed)
    return BanditSession(model, sigma=cfg.environment.sigma, seed=seed,
                         horizon=cfg.horizon if capped else None)


def run_config(cfg, seed: int) -> RegretTrace:
    return ALGORITHMS[cfg.algorithm].run(cfg, seed)


# -- horizon tuning ------------------------------------------------------------

def tune_accuracy(total_samples: Callable[[float], float], a_exp: float, p: float, T: int,
                  zeta_max: float, iters: int = 10):
    """Fixed point of zeta = (A / (T p))^(1/(a+2)) with A = samples(zeta) zeta^a.

    The exploration cost depends on zeta through log factors too, so the
    tuning iterates.  Returns (zeta, clamped, A).
    """
    eps = zeta_max
    A = total_samples(eps) * eps**a_exp
    for _ in range(iters):
        A = total_samples(eps) * eps**a_exp
        z, _, _ = baselines.pac_to_regret(A, a_exp, p, T)
        eps = min(z, zeta_max)
    return eps, bool(eps >= zeta_max), A


def _etc(session, cfg, seed, explore, flags_extra=None, cert=None):
    T = cfg.horizon
    meta = _meta(cfg, seed)
    session.phase = "explore"
    try:
        result = explore()
    except BudgetExhausted:
        result = None
    trace = etc_commit(session, result, T, meta)
    if flags_extra:
        trace.flags.update(flags_extra)
    if cert is not None:
        trace.summary["certificate"] = cert
    if result is not None:
        trace.summary["samples"] = result.samples
        trace.summary["final_tan"] = (tan_angle(result.action, session.a_star)
                                      if np.ndim(result.action) == 1 else None)
    return trace


@register("optimal", VECTOR_KINDS | {"LR", "ASYM", "HARDCASE"})
def run_optimal(cfg, seed):
    s = _session(cfg, seed)
    s.phase = "commit"
    s.play_fixed(s.a_star, cfg.horizon)
    return RegretTrace.from_session(s, _meta(cfg, seed))


@register("npm-etc", {"EV"}, delta=0.1, eps=None, zeta_max=0.49)
def run_npm_etc(cfg, seed):
    s = _session(cfg, seed)
    P, C, d = cfg.params, cfg.constants, s.model.d
    lam = s.model.spectrum
    alpha = abs((lam[0] - s.model.gap) / lam[0])

    def total(e):
        n, L = npm_schedule(d, e, P["delta"], lam[0], alpha, C)
        return n * L

    if P["eps"] is None:
        eps, clamped, A = tune_accuracy(total, 2, 2, cfg.horizon, P["zeta_max"])
    else:
        eps, clamped, A = P["eps"], False, total(P["eps"]) * P["eps"] ** 2
    cert = baselines.pac_to_regret(A, 2, 2, cfg.horizon, s.r_star)[2]
    return _etc(s, cfg, seed, lambda: spectral.run_npm(s, eps, P["delta"], C),
                {"zeta_clamped": clamped, "eps": eps}, cert)


@register("npm-gap-free-etc", {"EV"}, delta=0.1, eps=None, zeta_max=1.0, a_exp=8)
def run_npm_gf_etc(cfg, seed):
    s = _session(cfg, seed)
    P, C, d = cfg.params, cfg.constants, s.model.d
    lam1 = float(s.model.spectrum[0])

    def total(e):
        n, L = npm_schedule(d, e, P["delta"], lam1, 1 - e * e / 2, C)
        return n * L

    if P["eps"] is None:
        eps, clamped, A = tune_accuracy(total, P["a_exp"], 2, cfg.horizon, P["zeta_max"])
    else:
        eps, clamped, A = P["eps"], False, total(P["eps"]) * P["eps"] ** P["a_exp"]
    cert = baselines.pac_to_regret(A, P["a_exp"], 2, cfg.horizon, s.r_star)[2]
    return _etc(s, cfg, seed, lambda: spectral.run_npm_gap_free(s, eps, P["delta"], C),
                {"zeta_clamped": clamped, "eps": eps}, cert)


@register("subspace-etc", {"LR"}, delta=0.1, eps=None, zeta_max=0.5)
def run_subspace_etc(cfg, seed):
    s = _session(cfg, seed)
    P, C, d, k = cfg.params, cfg.constants, s.model.d, s.model.k
    lam_k = float(abs(s.model.spectrum[k - 1]))

    def total(e):
        n, L = subspace_schedule(d, e, P["delta"], lam_k, C)
        return n * 2 * k * L

    # committed regret is (r*/2) ||A - A*||_F^2, so the accuracy enters with weight 1/2
    if P["eps"] is None:
        eps, clamped, A = tune_accuracy(total, 2, 0.5, cfg.horizon, P["zeta_max"])
    else:
        eps, clamped, A = P["eps"], False, total(P["eps"]) * P["eps"] ** 2
    cert = baselines.pac_to_regret(A, 2, 0.5, cfg.horizon, s.r_star)[2]
    return _etc(s, cfg, seed, lambda: spectral.run_subspace_iteration(s, k, eps, P["delta"], C),
                {"zeta_clamped": clamped, "eps": eps}, cert)


@register("lr-gap-free-etc", {"LR"}, delta=0.1, eps=None, zeta_max=0.5)
def run_lr_gf_etc(cfg, seed):
    s = _session(cfg, seed)
    P, C, d, k = cfg.params, cfg.constants, s.model.d, s.model.k

    def total(e):
        n = C.C_n * d * d * k * k * log(d / P["delta"]) / (s.r_star**2 * e**4)
        L = int(C.C_L * log(d / e)) + 1
        return n * 2 * k * L

    if P["eps"] is None:
        eps, clamped, A = tune_accuracy(total, 4, 0.5, cfg.horizon, P["zeta_max"])
    else:
        eps, clamped, A = P["eps"], False, total(P["eps"]) * P["eps"] ** 4
    cert = baselines.pac_to_regret(A, 4, 0.5, cfg.horizon, s.r_star)[2]
    return _etc(s, cfg, seed,
                lambda: spectral.run_gap_free_subspace(s, k, eps, P["delta"], "LR", C),
                {"zeta_clamped": clamped, "eps": eps}, cert)


@register("gap-free-subspace-etc", {"EV"}, delta=0.1, eps=0.2, restarts=False, n_eval=0)
def run_gf_subspace_etc(cfg, seed):
    s = _session(cfg, seed)
    P, C, k = cfg.params, cfg.constants, s.model.k
    return _etc(s, cfg, seed, lambda: spectral.run_gap_free_subspace(
        s, k, P["eps"], P["delta"], "EV", C, restarts=P["restarts"], n_eval=P["n_eval"]))


@register("npm-samples", {"EV"}, delta=0.1, eps=0.1, schedule="fixed", n0=256, growth=2.0)
def run_npm_samples(cfg, seed):
    """Pulls until the iterate is within angle eps of the top eigenvector.

    ``schedule: fixed`` runs the batch size and iteration count set by eps
    and stops at the first step inside the target; ``doubling`` grows the
    batch geometrically instead and needs no knowledge of the gap.
    """
    s = _session(cfg, seed, capped=False)
    P = cfg.params
    v = s.a_star
    hit = lambda st: tan_angle(st.iterate, v) <= P["eps"]  # noqa: E731
    if P["schedule"] == "fixed":
        res = spectral.run_npm(s, P["eps"], P["delta"], cfg.constants, stop=hit)
    elif P["schedule"] == "doubling":
        res = spectral.run_npm_doubling(s, hit, P["delta"], cfg.constants, n0=P["n0"], growth=P["growth"],
                                        max_samples=cfg.horizon)
    else:
        from .config import ConfigError
        raise ConfigError(f"unknown schedule {P['schedule']!r}")
    tr = RegretTrace.from_session(s, _meta(cfg, seed), res.diagnostics)
    tr.summary.update({"samples": res.samples if res.info["stopped"] else None,
                       "stopped": res.info["stopped"]})
    return tr


@register("linucb", VECTOR_KINDS, p=None, lam_ridge=1.0, grid=None, delta=0.1, S=1.0, eps=None,
          checkpoint_growth=1.1)
def run_linucb(cfg, seed):
    """Lifted LinUCB for the horizon; with eps set (EV), stops at samples-to-eps."""
    s = _session(cfg, seed, capped=False)
    P = cfg.params
    p = P["p"] or s.model.p
    stop = None
    if P["eps"] is not None:
        if s.model.kind != "EV":
            from .config import ConfigError
            raise ConfigError("samples-to-eps stopping needs an EV model")
        v = s.a_star
        stop = lambda st: tan_angle(spectral.top_eigvec(st.quadratic_form()), v) <= P["eps"]  # noqa: E731
    tr = baselines.run_lin_ucb_vectorized(s, p, cfg.horizon, P["lam_ridge"], P["grid"], P["delta"], P["S"],
                                          stop, P["checkpoint_growth"], _meta(cfg, seed))
    if stop is not None:
        tr.summary["samples"] = tr.summary["stopped_at"]
    return tr


@register("phased-elimination", {"SYM", "POLY-LOWRANK"}, eps=0.25, delta=0.1, r_star_hint="empirical",
          pool_size=None)
def run_phased(cfg, seed):
    s = _session(cfg, seed)
    P, C = cfg.params, cfg.constants
    hint = P["r_star_hint"]
    if hint == "oracle":
        hint = float(s.model.spectrum[0])
    flags = {}
    s.phase = "explore"
    res = None
    try:
        res = tensor.run_phased_elimination(s, s.model.p, s.model.k, P["eps"], P["delta"], hint, C,
                                            pool_size=P["pool_size"])
        s.phase = "ucb"
        baselines.run_finite_ucb(s, res.pool.actions, cfg.horizon - s.t, P["delta"], trace=False)
    except BudgetExhausted:
        flags["exploration_overran"] = True
    except tensor.EmptyPool as e:
        flags["empty_pool"] = str(e)
    tr = RegretTrace.from_session(s, _meta(cfg, seed), res.telemetry if res else None, flags=flags)
    if res is not None:
        v1 = s.model.vectors[:, 0]
        tr.summary.update({"samples": res.samples, "pool_history": res.history,
                           "best_alignment": float(max(abs(a @ v1) for a in res.pool.actions))})
    return tr


@register("burn-in", {"SYM", "POLY-LOWRANK"}, delta=0.1, pool_size=None, phase2_C_n=None)
def run_burn(cfg, seed):
    s = BanditSession(cfg.environment.build(seed), cfg.environment.sigma, seed)
    P = cfg.params
    C2 = None if P["phase2_C_n"] is None else cfg.constants.with_(C_n=P["phase2_C_n"])
    return tensor.run_burn_in(s, s.model.p, s.model.k, cfg.horizon, P["delta"], cfg.constants,
                              pool_size=P["pool_size"], meta=_meta(cfg, seed), phase2_constants=C2)


@register("alternating-power", {"ASYM"}, eps=0.25, delta=0.1, r_star_hint="empirical", pool_size=None)
def run_alt(cfg, seed):
    s = _session(cfg, seed)
    P = cfg.params

    def explore():
        best, res = tensor.run_alternating_power(s, s.model.p, s.model.k, P["eps"], P["delta"],
                                                 P["r_star_hint"], cfg.constants, pool_size=P["pool_size"])
        return ExploreResult(best, res.samples, len(res.history), diagnostics=res.telemetry)

    return _etc(s, cfg, seed, explore)


@register("identify-then-commit", {"SYM", "POLY-LOWRANK"}, restarts=20)
def run_itc(cfg, seed):
    s = _session(cfg, seed)
    tr, _fit = noiseless.identify_then_commit(s, s.model.k, cfg.horizon, meta=_meta(cfg, seed),
                                              restarts=cfg.params["restarts"])
    tr.summary["samples"] = tr.summary["explore"]
    return tr


@register("hardcase-ucb", {"HARDCASE"}, tie_break="adversarial", certificate=1000)
def run_hardcase_ucb(cfg, seed):
    s = _session(cfg, seed, capped=False)
    plays, tr = noiseless.ucb_hard_case_run(s, cfg.params["tie_break"], certificate=cfg.params["certificate"],
                                            meta=_meta(cfg, seed))
    tr.summary["samples"] = plays
    return tr


@register("hardcase-random", {"HARDCASE"})
def run_hardcase_random(cfg, seed):
    s = _session(cfg, seed, capped=False)
    alpha, used = noiseless.identify_finite_class(s, stream(seed, "hardcase-random"))
    tr = RegretTrace.from_session(s, _meta(cfg, seed))
    tr.summary.update({"samples": used, "alpha_hat": list(alpha),
                       "correct": tuple(alpha) == tuple(s.model.alpha_star)})
    return tr


@register("rl-policy", {"QMDP"}, eps=0.1, delta=0.1, n_states=4, n_actions=8)
def run_rl(cfg, seed):
    from .. import rl
    env, P = cfg.environment, cfg.params
    s = env.instance_seed if env.instance_seed is not None else seed
    mdp = rl.make_bellman_complete_mdp(env.d, env.k, env.H, seed=s, n_states=P["n_states"],
                                       n_actions=P["n_actions"])
    res = rl.learn_policy(mdp, P["eps"], P["delta"], cfg.constants, seed=seed)
    empty = np.zeros(0)
    tr = RegretTrace(_meta(cfg, seed), empty.astype(int), empty, empty, empty.astype(object), res.rows)
    tr.summary.update({"samples": res.samples, "value_gap": res.value_gap,
                       "level_errors": res.level_errors, "level_samples": res.level_samples})
    return tr
