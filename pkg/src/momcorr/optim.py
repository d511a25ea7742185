"""Optimizer state machines.

Three ways to move parameters with accumulated gradients:

* ``momentum_step`` -- plain dampened momentum,
  mu_t = beta mu_{t-1} + (1-beta) g_t,  theta_t = theta_{t-1} - alpha mu_t.

* ``corrected_step`` -- momentum with a recursive first-order staleness
  correction.  Past gradients in mu were computed at old parameters; the
  correction term eta integrates how those gradients would have rotated
  under the parameter motion actually taken, using the running average
  zeta of per-step Taylor terms:

      eta_t  = beta eta_{t-1} + alpha beta zeta_{t-1}^T mu_hat_{t-1}
      mu_t   = (1-beta) g_t + beta mu_{t-1}
      mu_hat = mu_t - eta_t
      zeta_t = (1-beta) Z_t + beta zeta_{t-1}
      theta_t = theta_{t-1} - alpha mu_hat_t

  The ordering matters: eta_t must use the pre-update zeta and the
  mu_hat actually applied at t-1.  ``tests/test_optim.py`` pins this
  against a brute-force evaluation of the unrolled double sum.

* ``oracle_step`` -- the exact recomputation baseline: keep the raw
  minibatches of the last h = ceil(2/(1-beta)) steps and rebuild the
  whole discounted gradient sum at the current parameters every step.
  Unbiased by construction and ~h times the gradient cost.

All steps are pure: they return fresh state/parameter arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .models import ConfigError, MlpSpec
from .taylor import Kind, TaylorTerm


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    beta: float
    gamma: float = 0.99
    beta2: float = 0.999  # Adam-style second-moment factor (scaled variant only)
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta must be in [0, 1), got {self.beta}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0 <= self.beta2 < 1:
            raise ConfigError(f"beta2 must be in [0, 1), got {self.beta2}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")


def effective_horizon(beta: float) -> int:
    """Window length h = ceil(2/(1-beta)) beyond which beta^k is ignored.

    The tiny slack keeps float noise in 1-beta from bumping exact ratios
    (2/(1-0.9) must give 20, not 21).
    """
    return math.ceil(2.0 / (1.0 - beta) - 1e-9)


@dataclass
class MomentumState:
    mu: np.ndarray

    @staticmethod
    def zeros(n: int) -> "MomentumState":
        return MomentumState(mu=np.zeros(n))


@dataclass
class CorrectedState:
    mu: np.ndarray
    eta: np.ndarray
    zeta: TaylorTerm
    mask: np.ndarray | None = None  # True = corrected; None = correct everything
    second_moment: np.ndarray | None = None  # Adam-scaled variant only

    @staticmethod
    def zeros(
        n: int,
        kind: Kind = "full",
        mask: np.ndarray | None = None,
        scaled: bool = False,
    ) -> "CorrectedState":
        return CorrectedState(
            mu=np.zeros(n),
            eta=np.zeros(n),
            zeta=TaylorTerm.zeros(n, kind),
            mask=None if mask is None else np.asarray(mask, dtype=bool).copy(),
            second_moment=np.zeros(n) if scaled else None,
        )

    def mu_hat_prev(self) -> np.ndarray:
        """The velocity applied at the previous step (zero at t=0).

        eta is kept zero on masked-out coordinates, so mu - eta is already
        the mixed corrected/plain velocity that actually moved theta.
        """
        return self.mu - self.eta


@dataclass
class OracleState:
    """Ring buffer of the raw minibatches needed to rebuild the sum."""

    h: int
    window: list = field(default_factory=list)  # newest last

    @staticmethod
    def fresh(beta: float) -> "OracleState":
        return OracleState(h=effective_horizon(beta))


def momentum_step(
    state: MomentumState, hp: HyperParams, g: np.ndarray, params: np.ndarray
) -> tuple[MomentumState, np.ndarray]:
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    mu = hp.beta * state.mu + (1.0 - hp.beta) * g
    return MomentumState(mu=mu), params - hp.alpha * mu


def corrected_step(
    state: CorrectedState,
    hp: HyperParams,
    g: np.ndarray,
    Z: TaylorTerm,
    params: np.ndarray,
) -> tuple[CorrectedState, np.ndarray, np.ndarray]:
    """One corrected-momentum update; returns (state', params', mu_hat)."""
    state, mu_hat = _corrected_core(state, hp, g, Z)
    return state, params - hp.alpha * mu_hat, mu_hat


def corrected_step_scaled(
    state: CorrectedState,
    hp: HyperParams,
    g: np.ndarray,
    Z: TaylorTerm,
    params: np.ndarray,
) -> tuple[CorrectedState, np.ndarray, np.ndarray]:
    """Corrected step with Adam-style per-parameter scaling of the update.

    Maintains v = beta2 v + (1-beta2) g^2 and divides the applied velocity
    by sqrt(v + eps).  No bias correction on v.  Requires a diagonal zeta.
    """
    if state.second_moment is None:
        raise ValueError("state lacks second_moment; build with scaled=True")
    if state.zeta.kind != "diag":
        raise ValueError("scaled variant requires a diagonal zeta")
    state, mu_hat = _corrected_core(state, hp, g, Z)
    v = hp.beta2 * state.second_moment + (1.0 - hp.beta2) * g * g
    state.second_moment = v
    step = hp.alpha * mu_hat / np.sqrt(v + hp.epsilon)
    return state, params - step, mu_hat


def _corrected_core(
    state: CorrectedState, hp: HyperParams, g: np.ndarray, Z: TaylorTerm
) -> tuple[CorrectedState, np.ndarray]:
    if Z.kind != state.zeta.kind:
        raise ValueError(f"Z kind {Z.kind!r} != state zeta kind {state.zeta.kind!r}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    beta = hp.beta
    # (1) correction update, pre-update zeta and previously applied velocity
    eta = beta * state.eta + hp.alpha * beta * state.zeta.apply_T(state.mu_hat_prev())
    if state.mask is not None:
        eta[~state.mask] = 0.0
    # (2) plain momentum
    mu = (1.0 - beta) * g + beta * state.mu
    # (3) corrected velocity
    mu_hat = mu - eta
    # (4) Taylor-term average
    zeta = TaylorTerm(Z.kind, (1.0 - beta) * Z.data + beta * state.zeta.data)
    new_state = replace(state, mu=mu, eta=eta, zeta=zeta)
    return new_state, mu_hat


def oracle_step(
    state: OracleState,
    hp: HyperParams,
    new_batch,
    grad_fn: Callable[[object, np.ndarray], np.ndarray],
    params: np.ndarray,
) -> tuple[OracleState, np.ndarray, np.ndarray]:
    """Exact-recomputation momentum: returns (state', params', mu_star).

    mu_star = (1-beta) * sum over the window of beta^age * grad_fn(batch_i, params)
    with age 0 for the batch pushed this call.  The window keeps at most h
    batches; for shorter histories the sum simply has fewer terms.
    """
    window = state.window + [new_batch]
    if len(window) > state.h:
        window = window[-state.h :]
    mu_star = np.zeros_like(params)
    for age, batch in enumerate(reversed(window)):
        w = hp.beta**age
        if w == 0.0:
            break
        mu_star += w * grad_fn(batch, params)
    mu_star *= 1.0 - hp.beta
    return OracleState(h=state.h, window=window), params - hp.alpha * mu_star, mu_star


def oracle_step_stacked(
    state: OracleState,
    hp: HyperParams,
    new_batch,
    window_grads_fn: Callable[[list, np.ndarray], np.ndarray],
    params: np.ndarray,
) -> tuple[OracleState, np.ndarray, np.ndarray]:
    """oracle_step with the window recomputed in one vectorized call.

    ``window_grads_fn(batches, params)`` returns the (k, n) stack of
    per-batch mean gradients at ``params``.  Semantics match oracle_step
    (tested equal); this path exists because h separate gradient calls
    dominate the runtime at large h.
    """
    window = state.window + [new_batch]
    if len(window) > state.h:
        window = window[-state.h :]
    grads = window_grads_fn(window, params)
    ages = np.arange(len(window) - 1, -1, -1, dtype=np.float64)
    mu_star = (1.0 - hp.beta) * (hp.beta**ages @ grads)
    return OracleState(h=state.h, window=window), params - hp.alpha * mu_star, mu_star


def make_mask(spec: MlpSpec, layers: str | Sequence[int]) -> np.ndarray:
    """Boolean mask over the flat parameter vector selecting whole layers.

    ``layers`` is "all", "none", "bottom:k", "top:k", or explicit layer
    indices (0 = closest to the input).  True marks parameters that get
    the staleness correction.
    """
    n_layers = spec.n_layers
    if isinstance(layers, str):
        sel = layers.strip().lower()
        if sel == "all":
            idx = range(n_layers)
        elif sel == "none":
            idx = []
        elif sel.startswith("bottom:"):
            k = int(sel.split(":", 1)[1])
            if not 0 <= k <= n_layers:
                raise ConfigError(f"bottom:{k} out of range for {n_layers} layers")
            idx = range(k)
        elif sel.startswith("top:"):
            k = int(sel.split(":", 1)[1])
            if not 0 <= k <= n_layers:
                raise ConfigError(f"top:{k} out of range for {n_layers} layers")
            idx = range(n_layers - k, n_layers)
        else:
            raise ConfigError(f"unknown layer selector {layers!r}")
    else:
        idx = list(layers)
        if any(i < 0 or i >= n_layers for i in idx):
            raise ConfigError(f"layer index out of range in {idx}")
    mask = np.zeros(spec.n_params, dtype=bool)
    for i in idx:
        start, end = spec.layer_span(i)
        mask[start:end] = True
    return mask
