import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polybandit import _kernels_py as py
from polybandit import kernels

cy = pytest.importorskip("polybandit._kernels")


def ucb_inputs(seed, K, T):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, K), rng.standard_normal(T), float(rng.uniform(1, 20))


@given(st.integers(0, 10**6), st.integers(1, 12), st.integers(1, 300))
def test_ucb_parity(seed, K, T):
    means, noise, lt = ucb_inputs(seed, K, T)
    outs = []
    for mod in (py, cy):
        counts, sums = np.zeros(K, dtype=np.int64), np.zeros(K)
        ch = mod.ucb_loop(means, noise, lt, counts, sums)
        outs.append((np.asarray(ch), counts, sums))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])
    assert np.allclose(outs[0][2], outs[1][2], rtol=0, atol=1e-12)


def linucb_inputs(seed, n, D, T):
    rng = np.random.default_rng(seed)
    Phi = rng.standard_normal((n, D))
    return (Phi, rng.uniform(-1, 1, n), 0.3 * rng.standard_normal(T), rng.uniform(0.5, 2, T))


@given(st.integers(0, 10**6), st.integers(2, 30), st.integers(1, 8), st.integers(1, 80))
def test_linucb_parity(seed, n, D, T):
    Phi, means, noise, betas = linucb_inputs(seed, n, D, T)
    outs = []
    for mod in (py, cy):
        Vinv, theta, pred = np.eye(D), np.zeros(D), np.zeros(n)
        bon = np.einsum("ij,ij->i", Phi, Phi)
        ch = mod.linucb_loop(Phi, means, noise, betas, Vinv, theta, pred, bon)
        outs.append((np.asarray(ch), Vinv, theta, pred, bon))
    assert np.array_equal(outs[0][0], outs[1][0])
    for a, b in zip(outs[0][1:], outs[1][1:]):
        assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_linucb_state_matches_ridge():
    Phi, means, noise, betas = linucb_inputs(0, 20, 5, 60)
    Vinv, theta, pred = np.eye(5) / 2.0, np.zeros(5), np.zeros(20)
    bon = np.einsum("ij,ij->i", Phi, Phi) / 2.0
    ch = kernels.linucb_loop(Phi, means, noise, betas, Vinv, theta, pred, bon)
    X = Phi[ch]
    V = 2.0 * np.eye(5) + X.T @ X
    assert np.allclose(Vinv, np.linalg.inv(V), atol=1e-10)
    assert np.allclose(theta, np.linalg.solve(V, X.T @ (means[ch] + noise)), atol=1e-10)
    assert np.allclose(pred, Phi @ theta, atol=1e-10)


def test_backend_selection():
    code = "from polybandit import kernels; print(kernels.BACKEND)"
    pure = subprocess.run([sys.executable, "-c", code], env={"POLYBANDIT_PURE": "1", "PATH": ""},
                          capture_output=True, text=True, check=True).stdout.strip()
    assert pure == "python"
    assert kernels.BACKEND == "cython"
