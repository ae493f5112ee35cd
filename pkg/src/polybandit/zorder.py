"""Gaussian probe batches and the zeroth-order estimators built on them."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, log
from typing import Optional

import numpy as np

from .env import ModelError, RewardModel

MAX_RETRIES = 100


class ProbeSamplingError(RuntimeError):
    pass


@dataclass
class ProbeBatch:
    n: int
    m: float
    z: np.ndarray
    resamples: int = 0
    rewards: Optional[np.ndarray] = None
    control: Optional[np.ndarray] = None


def probe_scale(n: int, d: int, delta: float, C_m: float) -> int:
    """Inverse probe variance m = ceil(C_m d log(n/delta)), at least 1."""
    return max(1, int(np.ceil(C_m * d * log(max(n, 1) / delta))))


def sample_probes(rng: np.random.Generator, n: int, m: float, d: int,
                  max_retries: int = MAX_RETRIES) -> ProbeBatch:
    """n probes z_i ~ N(0, I/m); the whole batch is redrawn if any ||z_i|| > 1."""
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    scale = 1.0 / np.sqrt(m)
    for attempt in range(max_retries + 1):
        z = rng.standard_normal((n, d)) * scale
        if np.max(np.einsum("ij,ij->i", z, z)) <= 1.0:
            return ProbeBatch(n, m, z, resamples=attempt)
    raise ProbeSamplingError(
        f"{max_retries} full-batch redraws failed (n={n}, m={m}, d={d}); "
        f"expected norm^2 is d/m = {d / m:.3f}, raise m"
    )


def estimate_matrix_action(session, a: np.ndarray, n: int, m: float, rng) -> tuple:
    """y = (m/n) sum r_i z_i from pulls at (a + z_i)/2; E[y] = M a / 2."""
    a = np.asarray(a, dtype=float)
    batch = sample_probes(rng, n, m, a.shape[0])
    r = session.pull_batch(0.5 * (a + batch.z), check=False)
    batch.rewards = r
    return (m / n) * (r @ batch.z), batch


def estimate_tensor_G(session, a: np.ndarray, p: int, n: int, m: float, rng) -> tuple:
    """Empirical operator with control pulls; uses 2n pulls.

    Pulls (1 - 1/2p) a + z_i/2p and the control z_i/2p, then averages
    (m/n) sum (r_i - r'_i) z_i.
    """
    a = np.asarray(a, dtype=float)
    zeta = 1.0 / (2 * p)
    batch = sample_probes(rng, n, m, a.shape[0])
    r = session.pull_batch((1 - zeta) * a + zeta * batch.z, check=False)
    rc = session.pull_batch(zeta * batch.z, check=False)
    batch.rewards, batch.control = r, rc
    return (m / n) * ((r - rc) @ batch.z), batch


def _dfact(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def moment_weights(p: int, m: float) -> list:
    """[(s, exponent of a, weight)] for the terms of E[G_n] along each component.

    With z ~ N(0, I/m), the term with l = 2s+1 probe factors contributes
    (2s+1)!! C(p, l) zeta^l (1-zeta)^(p-l) m^(-s) lambda_j (v_j.a)^(p-l) v_j.
    The control pull cancels the l = p term.
    """
    zeta = 1.0 / (2 * p)
    out = []
    for s in range(0, p // 2 + 1):
        l = 2 * s + 1
        if l > p - 1:
            break
        w = _dfact(l) * comb(p, l) * zeta**l * (1 - zeta) ** (p - l) / m**s
        out.append((s, p - l, w))
    return out


def _components(model: RewardModel, a):
    if model.kind not in ("SYM", "POLY-LOWRANK", "EV"):
        raise ModelError("closed form needs a symmetric orthonormal model")
    return model.vectors, model.spectrum, model.vectors.T @ np.asarray(a, dtype=float)


def expected_G(model: RewardModel, a, p: int, m: float) -> np.ndarray:
    """Exact expectation of the empirical operator (no bias removed)."""
    V, lam, c = _components(model, a)
    coeff = np.zeros_like(c)
    for _, e, w in moment_weights(p, m):
        coeff += w * lam * c**e
    return V @ coeff


def bias_coefficient(p: int, m: float) -> float:
    """Weight of the linear term (v_j.a) for even p; zero for odd p."""
    if p % 2:
        return 0.0
    return moment_weights(p, m)[-1][2]


def even_bias(model: RewardModel, a, p: int, m: float) -> np.ndarray:
    """The part of E[G_n] that is dropped from G for even p: sum over j >= 2."""
    V, lam, c = _components(model, a)
    w = bias_coefficient(p, m)
    coeff = w * lam * c
    coeff[0] = 0.0
    return V @ coeff


def closed_form_G(model: RewardModel, a, p: int, m: float) -> np.ndarray:
    """Population operator G(a); for even p the j >= 2 linear terms are removed."""
    if p < 3:
        raise ValueError("closed form operator needs p >= 3")
    return expected_G(model, a, p, m) - even_bias(model, a, p, m)


def probe_covariance_se(z: np.ndarray):
    """Empirical covariance of probes and its entrywise standard error."""
    n = z.shape[0]
    C = z.T @ z / n
    z2 = z * z
    second = z2.T @ z2 / n
    se = np.sqrt(np.maximum(second - C * C, 0.0) / n)
    return C, se
