"""Training substrates: sine-mixture regression and TD(0) loss assembly.

The gradient bundles return everything one optimizer step needs in one
pass: the logged loss, the minibatch-mean gradient, and the per-sample
gradient factors from which Taylor terms and diagnostics are formed.
Minibatch aggregation is a mean throughout (gradient and Taylor term
alike, so the correction stays on the gradient's scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TransitionBatch
from .models import ModelSpec, forward_batch, value_and_grad_batch
from .rng import STREAM_DATA, stream

REGRESSION_DATASET_SIZE = 10_000
REGRESSION_DATA_SEED = 20_260_101  # one fixed sample shared by every run


def sine_target(x) -> np.ndarray | float:
    """Mixture of sines of increasing frequency on [-1, 1]."""
    y = (
        0.5 * np.sin(2.14 * (np.asarray(x, dtype=np.float64) + 2.0))
        + 0.82 * np.sin(9.0 * np.asarray(x) + 0.4)
        + 0.38 * np.sin(12.0 * np.asarray(x))
        + 0.32 * np.sin(38.0 * np.asarray(x) - 0.1)
    )
    return float(y) if np.isscalar(x) else y


def regression_dataset(
    n: int = REGRESSION_DATASET_SIZE, seed: int = REGRESSION_DATA_SEED
) -> tuple[np.ndarray, np.ndarray]:
    rng = stream(seed, STREAM_DATA)
    x = rng.uniform(-1.0, 1.0, size=n)
    return x, sine_target(x)


class ReplayBuffer:
    """Uniform-with-replacement sampling; insertion order is preserved so
    the same buffer can back both the replay and online regimes."""

    def __init__(self, batch: TransitionBatch, capacity: int | None = None):
        if capacity is not None and len(batch) > capacity:
            batch = batch.select(np.arange(len(batch) - capacity, len(batch)))
        self.batch = batch
        self.capacity = capacity if capacity is not None else len(batch)

    def __len__(self) -> int:
        return len(self.batch)

    def sample(self, rng: np.random.Generator, m: int) -> TransitionBatch:
        idx = rng.integers(0, len(self.batch), size=m)
        return self.batch.select(idx)

    def in_order(self, start: int, m: int) -> TransitionBatch:
        idx = np.arange(start, min(start + m, len(self.batch)))
        return self.batch.select(idx)


@dataclass
class FrozenTargetSchedule:
    """Bootstrap targets from a parameter copy refreshed every k steps."""

    frozen_params: np.ndarray
    refresh_every: int

    def maybe_refresh(self, step: int, params: np.ndarray) -> None:
        # step is 1-based; refresh at 1, 1+k, 1+2k, ... using pre-step params
        if (step - 1) % self.refresh_every == 0:
            self.frozen_params = params.copy()


@dataclass
class TdBundle:
    """Per-step TD(0) quantities: logged loss is the mean squared TD error,
    grad is the minibatch-mean semi-gradient mean(delta * grad V(s))."""

    mean_loss: float
    grad: np.ndarray
    values: np.ndarray  # (m,) V(s)
    values_next: np.ndarray  # (m,) online-network V(s'), zero on terminal
    deltas: np.ndarray  # (m,)
    grads: np.ndarray  # (m, n) grad V(s)
    grads_next: np.ndarray | None  # (m, n) online grad V(s'), zero on terminal


def td0_grad_bundle(
    spec: ModelSpec,
    params: np.ndarray,
    batch: TransitionBatch,
    gamma: float,
    frozen: np.ndarray | None = None,
    need_grads_next: bool = True,
) -> TdBundle:
    """TD(0) semi-gradient bundle.

    delta = V(s) - (r + gamma * V_target(s') * (1 - terminal)); the target
    uses ``frozen`` parameters when given, else the live ones.  grads_next
    is always taken on the live network (it feeds the Taylor term, which a
    frozen-target baseline never builds; pass need_grads_next=False there).
    """
    live = ~batch.terminal
    values, grads = value_and_grad_batch(spec, params, batch.S)
    if need_grads_next:
        values_next, grads_next = value_and_grad_batch(spec, params, batch.S_next)
        values_next = values_next * live
        grads_next = grads_next * live[:, None]
    else:
        values_next = forward_batch(spec, params, batch.S_next) * live
        grads_next = None
    if frozen is None:
        target_next = values_next
    else:
        target_next = forward_batch(spec, frozen, batch.S_next) * live
    deltas = values - (batch.R + gamma * target_next)
    g = deltas @ grads / len(batch)
    return TdBundle(
        mean_loss=float(np.mean(deltas**2)),
        grad=g,
        values=values,
        values_next=values_next,
        deltas=deltas,
        grads=grads,
        grads_next=grads_next,
    )


@dataclass
class RegressionBundle:
    """Logged loss is mean(delta^2) / 2; grad is mean(delta * grad f)."""

    mean_loss: float
    grad: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    grads: np.ndarray


def regression_grad_bundle(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> RegressionBundle:
    X = np.asarray(x, dtype=np.float64).reshape(-1, spec.input_dim)
    values, grads = value_and_grad_batch(spec, params, X)
    deltas = values - np.asarray(y, dtype=np.float64)
    g = deltas @ grads / len(deltas)
    return RegressionBundle(
        mean_loss=float(np.mean(deltas**2) / 2.0),
        grad=g,
        values=values,
        deltas=deltas,
        grads=grads,
    )
