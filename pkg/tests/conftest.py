"""Shared test fixtures and independent oracles.

The weighted dummy-variable regression below is the reference
implementation the closed-form estimator is checked against; it solves the
full design matrix with unit/time dummies by least squares and must stay
independent of the production code path.
"""

from __future__ import annotations

import numpy as np
import pytest

from ripw.panel import PanelDataset


def wls_dummy_tau(Y: np.ndarray, W: np.ndarray, theta: np.ndarray, m_hat=None) -> float:
    """Treatment coefficient of the weighted regression of Y on treatment,
    unit dummies, time dummies, and an intercept (rank deficiency resolved
    by least squares)."""
    Yt = np.asarray(Y, dtype=float)
    if m_hat is not None:
        Yt = Yt - m_hat
    n, T = Yt.shape
    rows = n * T
    X = np.zeros((rows, 1 + n + T + 1))
    X[:, 0] = np.asarray(W, dtype=float).reshape(-1)
    for i in range(n):
        X[i * T : (i + 1) * T, 1 + i] = 1.0
    for t in range(T):
        X[t::T, 1 + n + t] = 1.0
    X[:, -1] = 1.0
    sw = np.sqrt(np.repeat(np.asarray(theta, dtype=float), T))
    coef, *_ = np.linalg.lstsq(X * sw[:, None], Yt.reshape(-1) * sw, rcond=None)
    return float(coef[0])


def random_panel(rng: np.random.Generator, max_n: int = 50, max_T: int = 5):
    """Random panel with weights guaranteed to give a usable denominator."""
    for _ in range(100):
        n = int(rng.integers(4, max_n + 1))
        T = int(rng.integers(2, max_T + 1))
        W = rng.integers(0, 2, size=(n, T))
        centered = W - W.mean(axis=1, keepdims=True)
        if np.unique(centered, axis=0).shape[0] < 2:
            continue
        Y = rng.normal(size=(n, T))
        theta = rng.uniform(0.2, 2.0, size=n)
        return PanelDataset(Y=Y, W=W), theta
    raise AssertionError("could not build a non-degenerate panel")


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
