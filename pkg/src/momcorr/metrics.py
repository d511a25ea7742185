"""Diagnostics: value MSE, target drift, Taylor cosine, bootstrap CIs.

Drift and cosine are windowed over the last h = ceil(2 n_mb / (1-beta))
optimizer steps.  Each window entry snapshots whatever the enabled
diagnostics need: bootstrap values V(s') for drift; the full parameter
vector, minibatch gradient, and per-sample gradient factors for the
cosine.  Snapshots are affordable at this scale and keep the recomputed
"true" gradients exact.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import TransitionBatch
from .models import ModelSpec, forward_batch
from .rng import STREAM_BOOTSTRAP, stream
from .tasks import regression_grad_bundle, td0_grad_bundle

NEAR_ZERO_NORM = 1e-12


def window_length(n_mb: int, beta: float) -> int:
    # slack keeps float noise in 1-beta from inflating exact ratios
    return math.ceil(2.0 * n_mb / (1.0 - beta) - 1e-9)


@dataclass
class HistoryEntry:
    """One step's snapshot for the windowed diagnostics.

    ``inputs`` is the raw minibatch (TransitionBatch, or (x, y) arrays for
    regression).  Fields not needed by the enabled diagnostics stay None.
    """

    step: int
    inputs: object
    values_next: np.ndarray | None = None  # V_{theta_i}(s'_i), drift
    params: np.ndarray | None = None  # theta_i, cosine
    g: np.ndarray | None = None  # minibatch-mean gradient at theta_i
    factor_u: np.ndarray | None = None  # (m, n): grad V(s) - gamma grad V(s')
    factor_v: np.ndarray | None = None  # (m, n): grad V(s)


class RunHistory:
    def __init__(self, n_mb: int, beta: float):
        self.h = window_length(n_mb, beta)
        self.entries: deque[HistoryEntry] = deque(maxlen=self.h)

    def record(self, entry: HistoryEntry) -> None:
        self.entries.append(entry)


def value_mse(
    spec: ModelSpec, params: np.ndarray, eval_states: np.ndarray, reference: np.ndarray
) -> float:
    if len(eval_states) != len(reference):
        raise ValueError("eval_states and reference lengths differ")
    pred = forward_batch(spec, params, eval_states)
    return float(np.mean((pred - reference) ** 2))


def value_drift(entries, spec: ModelSpec, params_now: np.ndarray) -> float | None:
    """Mean squared movement of the bootstrap values V(s') recorded in the
    window.  None (not zero) when the window holds nothing to compare."""
    snaps, states = [], []
    for e in entries:
        if e.values_next is None:
            continue
        snaps.append(e.values_next)
        states.append(e.inputs.S_next)
    if not snaps:
        return None
    now = forward_batch(spec, params_now, np.concatenate(states))
    return float(np.mean((np.concatenate(snaps) - now) ** 2))


def taylor_cosine(
    entries,
    spec: ModelSpec,
    params_now: np.ndarray,
    loss_kind: str,
    gamma: float = 0.0,
) -> float | None:
    """Mean cosine between first-order-corrected past gradients and the true
    gradients recomputed at params_now.

    The correction is g_i + Z_i^T (theta_now - theta_i) with the full
    outer-product Z_i applied through its per-sample factors.  Entries
    where either vector is numerically zero are skipped (a 0/0 cosine near
    convergence would pollute the mean); returns None if all are skipped.
    """
    cosines = []
    for e in entries:
        if e.params is None or e.g is None or e.factor_u is None:
            continue
        dtheta = params_now - e.params
        m = e.factor_u.shape[0]
        g_hat = e.g + e.factor_v.T @ (e.factor_u @ dtheta) / m
        if loss_kind == "td0":
            g_true = td0_grad_bundle(
                spec, params_now, e.inputs, gamma, need_grads_next=False
            ).grad
        elif loss_kind == "regression":
            x, y = e.inputs
            g_true = regression_grad_bundle(spec, params_now, x, y).grad
        else:
            raise ValueError(f"unknown loss_kind {loss_kind!r}")
        na, nb = np.linalg.norm(g_hat), np.linalg.norm(g_true)
        if na < NEAR_ZERO_NORM or nb < NEAR_ZERO_NORM:
            continue
        cosines.append(float(g_hat @ g_true / (na * nb)))
    return float(np.mean(cosines)) if cosines else None


def bootstrap_ci(
    samples,
    level: float = 0.95,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``samples``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    rng = stream(seed, STREAM_BOOTSTRAP)
    idx = rng.integers(0, x.size, size=(n_resamples, x.size))
    means = x[idx].mean(axis=1)
    q = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [q, 1.0 - q])
    return float(lo), float(hi)


# CSV schema: one row per logging interval per run, absent values empty.
CSV_COLUMNS = [
    "run_id", "task", "model", "optimizer", "alpha", "beta", "gamma",
    "n_mb", "n_h", "sigma_sq", "mask", "seed", "step",
    "train_loss", "eval_mse", "value_drift", "taylor_cosine", "status",
]


@dataclass
class MetricsRow:
    run_id: str
    task: str
    model: str
    optimizer: str
    alpha: float
    beta: float
    gamma: float
    n_mb: int
    n_h: int | None
    sigma_sq: float | None
    mask: str | None
    seed: int
    step: int
    train_loss: float | None
    eval_mse: float | None
    value_drift: float | None
    taylor_cosine: float | None
    status: str

    def as_csv(self) -> list[str]:
        return [_cell(getattr(self, c)) for c in CSV_COLUMNS]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path: str | Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
