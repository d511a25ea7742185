"""First-order sensitivity terms for gradient staleness correction.

Each supported loss yields a term Z such that, to first order in the
parameter motion d,

    g(theta + d) ~= g(theta) + Z^T d.

Z is built from outer products of per-sample gradient factors; the
second-derivative contribution (which carries a factor of the residual)
is dropped throughout.  Terms come in full (n x n) and diagonal (n)
flavors; the diagonal of a full term always equals the diagonal term
built from the same factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

Kind = Literal["full", "diag"]


@dataclass
class TaylorTerm:
    kind: Kind
    data: np.ndarray  # (n, n) if full, (n,) if diag

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    def diagonal(self) -> np.ndarray:
        return np.diag(self.data) if self.kind == "full" else self.data

    def apply_T(self, v: np.ndarray) -> np.ndarray:
        """Z^T v (elementwise product for diagonal terms)."""
        return self.data.T @ v if self.kind == "full" else self.data * v

    @staticmethod
    def zeros(n: int, kind: Kind) -> "TaylorTerm":
        shape = (n, n) if kind == "full" else (n,)
        return TaylorTerm(kind, np.zeros(shape))


def _outer(u: np.ndarray, v: np.ndarray, kind: Kind) -> TaylorTerm:
    if kind == "full":
        return TaylorTerm("full", np.outer(u, v))
    return TaylorTerm("diag", u * v)


def z_regression(grad_f: np.ndarray, kind: Kind = "full") -> TaylorTerm:
    """Squared-loss term: Z = grad_f (x) grad_f (symmetric, PSD, rank <= 1)."""
    return _outer(grad_f, grad_f, kind)


def z_td0(
    grad_v_s: np.ndarray, grad_v_sp: np.ndarray, gamma: float, kind: Kind = "full"
) -> TaylorTerm:
    """One-step TD term: Z = (grad V(s) - gamma grad V(s')) (x) grad V(s).

    The bootstrap value is held constant in the semi-gradient itself, but
    its motion matters for how that gradient changes, hence the grad V(s')
    factor.  Terminal transitions pass grad_v_sp = 0.
    """
    return _outer(grad_v_s - gamma * grad_v_sp, grad_v_s, kind)


def z_td_n(
    grad_v_t: np.ndarray,
    grad_v_tn: np.ndarray,
    gamma: float,
    n_steps: int,
    kind: Kind = "full",
) -> TaylorTerm:
    """n-step TD term: Z = (grad V(x_t) - gamma^n grad V(x_{t+n})) (x) grad V(x_t)."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    return _outer(grad_v_t - gamma**n_steps * grad_v_tn, grad_v_t, kind)


def z_td_lambda(
    grads: np.ndarray, gamma: float, lam: float, kind: Kind = "full"
) -> TaylorTerm:
    """Forward-view TD(lambda) term, truncated at the provided horizon.

    ``grads`` has rows grad V(x_t), grad V(x_{t+1}), ..., grad V(x_{t+k});
    future row j gets weight (1 - lambda) (gamma lambda)^j.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] < 2:
        raise ValueError("need grad V at x_t plus at least one future state")
    k = grads.shape[0] - 1
    w = (1.0 - lam) * (gamma * lam) ** np.arange(1, k + 1)
    u = grads[0] - w @ grads[1:]
    return _outer(u, grads[0], kind)


def z_minibatch(
    per_sample: Iterable[TaylorTerm], scaling: Literal["sum", "mean"] = "mean"
) -> TaylorTerm:
    """Aggregate per-sample terms the same way the minibatch gradient is.

    The scaling must match the gradient's: a mean gradient needs a mean Z,
    a summed gradient a summed Z, or the correction drifts off scale.
    """
    terms = list(per_sample)
    if not terms:
        raise ValueError("empty minibatch")
    kinds = {t.kind for t in terms}
    if len(kinds) > 1:
        raise ValueError(f"mixed term kinds {kinds}")
    total = np.zeros_like(terms[0].data)
    for t in terms:
        total += t.data
    if scaling == "mean":
        total /= len(terms)
    return TaylorTerm(terms[0].kind, total)


def z_outer_batch(
    U: np.ndarray, V: np.ndarray, kind: Kind, scaling: Literal["sum", "mean"] = "mean"
) -> TaylorTerm:
    """Fast path for mean/sum of per-sample outer products u_j (x) v_j.

    Equivalent to z_minibatch over per-sample _outer terms (tested as such),
    but runs as one matrix product.  U, V are (m, n) factor stacks.
    """
    if U.shape != V.shape:
        raise ValueError(f"factor shapes differ: {U.shape} vs {V.shape}")
    if kind == "full":
        data = U.T @ V
    else:
        data = (U * V).sum(axis=0)
    if scaling == "mean":
        data = data / U.shape[0]
    return TaylorTerm(kind, data)
