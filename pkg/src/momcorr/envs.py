"""Mountain Car policy-evaluation substrate.

Classic deterministic dynamics (position in [-1.2, 0.6], velocity in
[-0.07, 0.07], goal at 0.5, reward -1 per step), a fixed energy-pumping
evaluation policy a = sign(v), transition collection, a Monte-Carlo
reference value oracle, and the evaluation state grid.  Everything is a
pure function of (inputs, seed): rollouts are exact for this policy, so
reference values need a single rollout per state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .rng import STREAM_DATA, stream

X_MIN, X_MAX = -1.2, 0.6
V_MIN, V_MAX = -0.07, 0.07
GOAL_X = 0.5
FORCE = 0.001
GRAVITY = 0.0025
STEP_REWARD = -1.0
EPISODE_CAP = 1000
START_X_RANGE = (-0.6, -0.4)

STATE_BOUNDS = ((X_MIN, X_MAX), (V_MIN, V_MAX))

Policy = Callable[[np.ndarray], int]


@dataclass
class Transition:
    s: np.ndarray  # (2,) position, velocity
    a: int  # force direction in {-1, 0, +1}
    r: float
    s_next: np.ndarray
    terminal: bool


class TransitionBatch:
    """Column-stacked transitions for vectorized loss/gradient bundles."""

    __slots__ = ("S", "A", "R", "S_next", "terminal")

    def __init__(self, S, A, R, S_next, terminal):
        self.S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        self.A = np.asarray(A, dtype=np.int64).reshape(-1)
        self.R = np.asarray(R, dtype=np.float64).reshape(-1)
        self.S_next = np.atleast_2d(np.asarray(S_next, dtype=np.float64))
        self.terminal = np.asarray(terminal, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return self.S.shape[0]

    def select(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(
            self.S[idx], self.A[idx], self.R[idx], self.S_next[idx], self.terminal[idx]
        )

    @staticmethod
    def from_transitions(transitions: list[Transition]) -> "TransitionBatch":
        return TransitionBatch(
            S=np.stack([t.s for t in transitions]),
            A=np.array([t.a for t in transitions]),
            R=np.array([t.r for t in transitions]),
            S_next=np.stack([t.s_next for t in transitions]),
            terminal=np.array([t.terminal for t in transitions]),
        )


def mountain_car_step(s: np.ndarray, a: int) -> tuple[np.ndarray, float, bool]:
    """One deterministic step; velocity is zeroed on hitting the left wall."""
    x, v = float(s[0]), float(s[1])
    v = v + FORCE * a - GRAVITY * np.cos(3.0 * x)
    v = min(max(v, V_MIN), V_MAX)
    x = x + v
    if x <= X_MIN:
        x = X_MIN
        if v < 0:
            v = 0.0
    elif x > X_MAX:
        x = X_MAX
    terminal = x >= GOAL_X
    return np.array([x, v]), STEP_REWARD, terminal


def energy_policy(s: np.ndarray) -> int:
    """Push along the current velocity; ties (v = 0) break toward +1."""
    return 1 if s[1] >= 0 else -1


def run_episode(
    policy: Policy, s0: np.ndarray, cap: int = EPISODE_CAP
) -> list[Transition]:
    out = []
    s = np.asarray(s0, dtype=np.float64)
    for _ in range(cap):
        a = policy(s)
        s_next, r, terminal = mountain_car_step(s, a)
        out.append(Transition(s=s, a=a, r=r, s_next=s_next, terminal=terminal))
        if terminal:
            break
        s = s_next
    return out


def collect_transitions(policy: Policy, n_episodes: int, seed: int) -> list[Transition]:
    """On-policy transitions from uniform starts x ~ U[-0.6, -0.4], v = 0."""
    rng = stream(seed, STREAM_DATA)
    out: list[Transition] = []
    for _ in range(n_episodes):
        x0 = rng.uniform(*START_X_RANGE)
        out.extend(run_episode(policy, np.array([x0, 0.0])))
    return out


def collect_until(policy: Policy, min_transitions: int, seed: int) -> list[Transition]:
    """Collect whole episodes until at least min_transitions are gathered."""
    rng = stream(seed, STREAM_DATA)
    out: list[Transition] = []
    while len(out) < min_transitions:
        x0 = rng.uniform(*START_X_RANGE)
        out.extend(run_episode(policy, np.array([x0, 0.0])))
    return out


def rollout_return(policy: Policy, s0: np.ndarray, gamma: float, cap: int = EPISODE_CAP) -> float:
    """Discounted return following policy from s0 until terminal or cap."""
    g = 0.0
    w = 1.0
    s = np.asarray(s0, dtype=np.float64)
    if s[0] >= GOAL_X:
        return 0.0
    for _ in range(cap):
        a = policy(s)
        s, r, terminal = mountain_car_step(s, a)
        g += w * r
        if terminal:
            break
        w *= gamma
    return g


def reference_values(
    states: np.ndarray,
    policy: Policy,
    gamma: float,
    n_rollouts: int = 1,
    seed: int = 0,
) -> np.ndarray:
    """Monte-Carlo value estimates, exact here since policy and dynamics
    are deterministic (the seed only matters for stochastic policies)."""
    del seed  # deterministic policy + dynamics: every rollout is identical
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    vals = np.empty(len(states))
    for i, s in enumerate(states):
        est = [rollout_return(policy, s, gamma) for _ in range(n_rollouts)]
        vals[i] = float(np.mean(est))
    return vals


def evaluation_grid(
    policy: Policy,
    n_grid: int = 40,
    visitation_episodes: int = 200,
    visitation_seed: int = 0,
) -> np.ndarray:
    """Fixed eval states: an n_grid x n_grid lattice over the state box,
    filtered to cells the policy actually visits from standard starts.

    Visitation marks the (s) side of transitions only, so the terminal
    region never enters the set.
    """
    xs = np.linspace(X_MIN, X_MAX, n_grid)
    vs = np.linspace(V_MIN, V_MAX, n_grid)
    visited = np.zeros((n_grid, n_grid), dtype=bool)
    for t in collect_transitions(policy, visitation_episodes, visitation_seed):
        ix = int(np.clip(round((t.s[0] - X_MIN) / (X_MAX - X_MIN) * (n_grid - 1)), 0, n_grid - 1))
        iv = int(np.clip(round((t.s[1] - V_MIN) / (V_MAX - V_MIN) * (n_grid - 1)), 0, n_grid - 1))
        visited[ix, iv] = True
    pts = [
        (xs[i], vs[j])
        for i in range(n_grid)
        for j in range(n_grid)
        if visited[i, j] and xs[i] < GOAL_X  # drop the terminal region
    ]
    return np.array(pts)


TRANSITION_COLUMNS = ["x", "v", "a", "r", "x_next", "v_next", "terminal"]


def save_transitions(path: str | Path, transitions: list[Transition]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRANSITION_COLUMNS)
        for t in transitions:
            w.writerow(
                [repr(float(t.s[0])), repr(float(t.s[1])), t.a, repr(float(t.r)),
                 repr(float(t.s_next[0])), repr(float(t.s_next[1])), int(t.terminal)]
            )


def load_transitions(path: str | Path) -> list[Transition]:
    out = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != TRANSITION_COLUMNS:
            raise ValueError(f"unexpected transition columns {header}")
        for row in r:
            out.append(
                Transition(
                    s=np.array([float(row[0]), float(row[1])]),
                    a=int(row[2]),
                    r=float(row[3]),
                    s_next=np.array([float(row[4]), float(row[5])]),
                    terminal=bool(int(row[6])),
                )
            )
    return out


def save_values(path: str | Path, states: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "v", "value"])
        for s, v in zip(states, values):
            w.writerow([repr(float(s[0])), repr(float(s[1])), repr(float(v))])


def load_values(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    states, values = [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        next(r)
        for row in r:
            states.append([float(row[0]), float(row[1])])
            values.append(float(row[2]))
    return np.array(states), np.array(values)
