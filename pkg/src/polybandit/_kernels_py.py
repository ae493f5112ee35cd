"""Pure-Python versions of the sequential inner loops (reference and fallback)."""
import numpy as np


def ucb_loop(means, noise, logterm, counts, sums):
    """Index policy over K arms for len(noise) rounds; arms not yet pulled go first.

    ``counts``/``sums`` are updated in place; returns the chosen arm per round.
    """
    means = np.asarray(means, dtype=np.float64)
    K = means.shape[0]
    T = noise.shape[0]
    choices = np.empty(T, dtype=np.int64)
    for t in range(T):
        best, best_val = -1, -np.inf
        for i in range(K):
            c = counts[i]
            if c == 0:
                best = i
                break
            v = sums[i] / c + np.sqrt(logterm / c)
            if v > best_val:
                best, best_val = i, v
        choices[t] = best
        counts[best] += 1
        sums[best] += means[best] + noise[t]
    return choices


def linucb_loop(Phi, means, noise, betas, Vinv, theta, pred, bon):
    """Optimistic ridge regression over a fixed arm grid with rank-1 inverse updates.

    Arrays Vinv (D, D), theta (D,), pred = Phi @ theta and bon = diag(Phi Vinv Phi^T)
    are updated in place.  Returns the chosen arm per round.
    """
    T = noise.shape[0]
    choices = np.empty(T, dtype=np.int64)
    for t in range(T):
        ucb = pred + betas[t] * np.sqrt(np.maximum(bon, 0.0))
        i = int(np.argmax(ucb))
        choices[t] = i
        x = Phi[i]
        r = means[i] + noise[t]
        Vx = Vinv @ x
        den = 1.0 + x @ Vx
        resid = (r - pred[i]) / den
        u = Phi @ Vx
        theta += resid * Vx
        pred += resid * u
        bon -= u * u / den
        Vinv -= np.outer(Vx, Vx / den)
    return choices
