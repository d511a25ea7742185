"""Shared independent oracles for optimizer tests.

These deliberately avoid the recursive state machines in momcorr.optim:
they evaluate the unrolled definitions directly so the recursions have
something honest to be checked against.
"""

from __future__ import annotations

import numpy as np


def corrected_momentum_brute_force(gs: np.ndarray, Zs: np.ndarray, alpha: float, beta: float):
    """Unrolled corrected momentum over a trajectory of (g_t, Z_t).

    mu_hat_t = mu_t - alpha (1-beta) * sum_{k=1}^{t-1} sum_{i=1}^{k}
               beta^(t-i) Z_i^T mu_hat_k,
    with the mu_hat history built up by this same formula (no eta/zeta
    recursion anywhere).  O(t^2) work per step; fine at test sizes.
    """
    T, n = gs.shape
    mu = np.zeros(n)
    mu_hats = []
    for t in range(1, T + 1):
        mu = (1.0 - beta) * gs[t - 1] + beta * mu
        corr = np.zeros(n)
        for k in range(1, t):
            for i in range(1, k + 1):
                corr += beta ** (t - i) * (Zs[i - 1].T @ mu_hats[k - 1])
        mu_hats.append(mu - alpha * (1.0 - beta) * corr)
    return np.array(mu_hats)


def discounted_grad_sum_at(theta: np.ndarray, grad_fns, beta: float) -> np.ndarray:
    """(1-beta) sum_i beta^(t-i) grad_i(theta) over the full history."""
    t = len(grad_fns)
    out = np.zeros_like(theta)
    for i, fn in enumerate(grad_fns, start=1):
        out += beta ** (t - i) * fn(theta)
    return (1.0 - beta) * out
