"""Experiment configuration: line-based `key = value` files.

Repeating a key turns it into a grid; `expand_grid` takes the Cartesian
product of all grids and the seed list, in a fixed documented order, so
run enumeration is deterministic.  `seeds` accepts `a:b` (half-open) or a
comma list.  Lines starting with `#` and blank lines are ignored.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, fields
from pathlib import Path

from .models import ConfigError
from .optim import effective_horizon

TASKS = ("regression", "mountain_car_replay", "mountain_car_online")
MODELS = ("mlp", "rbf")
OPTIMIZERS = ("momentum", "corrected", "corrected_diag", "corrected_diag_scaled", "oracle")

# keys that may repeat to form grids, in product order (seeds vary fastest)
GRID_KEYS = ("optimizer", "alpha", "beta", "gamma", "n_mb", "n_h", "sigma_sq",
             "mask", "frozen_refresh")

_DEFAULTS = {
    "model": "mlp",
    "optimizer": ["momentum"],
    "alpha": [0.1],
    "beta": [0.9],
    "gamma": [0.99],
    "n_mb": [16],
    "n_h": [16],
    "sigma_sq": [1.0],
    "mask": ["all"],
    "frozen_refresh": [0],
    "seeds": list(range(10)),
    "total_steps": 5000,
    "log_every": 50,
    "mlp_layers": 4,
    "n_grid": 20,
    "rbf_grid_normalized": True,
    "buffer_episodes": 100,
    "n_step": 1,
    "oracle_budget": 20_000,
    "log_value_drift": True,
    "log_taylor_cosine": False,
    "leaky_slope": 0.01,
}

_INT_KEYS = {"n_mb", "n_h", "frozen_refresh", "total_steps", "log_every", "mlp_layers",
             "n_grid", "buffer_episodes", "n_step", "oracle_budget"}
_FLOAT_KEYS = {"alpha", "beta", "gamma", "sigma_sq", "leaky_slope"}
_BOOL_KEYS = {"rbf_grid_normalized", "log_value_drift", "log_taylor_cosine"}
_STR_KEYS = {"task", "model", "optimizer", "mask"}


@dataclass
class ExperimentConfig:
    task: str
    model: str
    optimizer: list[str]
    alpha: list[float]
    beta: list[float]
    gamma: list[float]
    n_mb: list[int]
    n_h: list[int]
    sigma_sq: list[float]
    mask: list[str]
    frozen_refresh: list[int]
    seeds: list[int]
    total_steps: int
    log_every: int
    mlp_layers: int
    n_grid: int
    rbf_grid_normalized: bool
    buffer_episodes: int
    n_step: int
    oracle_budget: int
    log_value_drift: bool
    log_taylor_cosine: bool
    leaky_slope: float


@dataclass(frozen=True)
class ResolvedRun:
    """One fully-resolved config point; hashes to a stable run_id."""

    task: str
    model: str
    optimizer: str
    alpha: float
    beta: float
    gamma: float
    n_mb: int
    n_h: int
    sigma_sq: float
    mask: str
    frozen_refresh: int
    seed: int
    total_steps: int
    log_every: int
    mlp_layers: int
    n_grid: int
    rbf_grid_normalized: bool
    buffer_episodes: int
    oracle_budget: int
    log_value_drift: bool
    log_taylor_cosine: bool
    leaky_slope: float

    @property
    def run_id(self) -> str:
        blob = ";".join(
            f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    return raw.lower() if key in _STR_KEYS else raw


def _parse_seeds(raw: str) -> list[int]:
    raw = raw.strip()
    if ":" in raw:
        a, b = raw.split(":", 1)
        return list(range(int(a), int(b)))
    return [int(tok) for tok in raw.replace(",", " ").split()]


def parse_config(path: str | Path) -> ExperimentConfig:
    values: dict[str, object] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key == "seeds":
                values["seeds"] = _parse_seeds(raw)
                continue
            if key not in _DEFAULTS and key != "task":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            v = _parse_value(key, raw)
            if key in GRID_KEYS:
                values.setdefault(key, []).append(v)
            elif key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate non-grid key {key!r}")
            else:
                values[key] = v
    if "task" not in values:
        raise ConfigError(f"{path}: missing required key 'task'")
    merged = dict(_DEFAULTS)
    merged.update(values)
    cfg = ExperimentConfig(**merged)  # type: ignore[arg-type]
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}")
    for opt in cfg.optimizer:
        if opt not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {opt!r}")
    if cfg.task == "regression" and cfg.model != "mlp":
        raise ConfigError("regression task requires the mlp model")
    if cfg.n_step != 1:
        raise ConfigError(
            "only one-step TD targets are supported; n_step is accepted for "
            "forward compatibility and must be 1"
        )
    if not cfg.seeds:
        raise ConfigError("empty seed list")
    for key in GRID_KEYS:
        if not getattr(cfg, key):
            raise ConfigError(f"empty grid for {key!r}")
    if cfg.total_steps <= 0 or cfg.log_every <= 0:
        raise ConfigError("total_steps and log_every must be positive")
    if cfg.mlp_layers < 2:
        raise ConfigError("mlp needs at least 2 weight layers")


def expand_grid(cfg: ExperimentConfig, seed_offset: int = 0) -> list[ResolvedRun]:
    """Cartesian product of all grids and seeds, deterministically ordered."""
    online = cfg.task == "mountain_car_online"
    n_mbs = [1] if online else cfg.n_mb  # the online regime is minibatch-1 by definition
    runs: list[ResolvedRun] = []
    for opt, alpha, beta, gamma, n_mb, n_h, sigma_sq, mask, frozen in itertools.product(
        cfg.optimizer, cfg.alpha, cfg.beta, cfg.gamma, n_mbs, cfg.n_h,
        cfg.sigma_sq, cfg.mask, cfg.frozen_refresh,
    ):
        if frozen > 0 and opt != "momentum":
            raise ConfigError("frozen targets are a plain-momentum baseline; "
                              f"got optimizer {opt!r} with frozen_refresh={frozen}")
        if opt == "oracle":
            cost = effective_horizon(beta) * n_mb
            if cost > cfg.oracle_budget:
                raise ConfigError(
                    f"oracle at beta={beta}, n_mb={n_mb} recomputes {cost} sample "
                    f"gradients per step, over budget {cfg.oracle_budget}"
                )
        for seed in cfg.seeds:
            runs.append(ResolvedRun(
                task=cfg.task, model=cfg.model, optimizer=opt,
                alpha=alpha, beta=beta, gamma=gamma, n_mb=n_mb, n_h=n_h,
                sigma_sq=sigma_sq, mask=mask, frozen_refresh=frozen,
                seed=seed + seed_offset,
                total_steps=cfg.total_steps, log_every=cfg.log_every,
                mlp_layers=cfg.mlp_layers, n_grid=cfg.n_grid,
                rbf_grid_normalized=cfg.rbf_grid_normalized,
                buffer_episodes=cfg.buffer_episodes,
                oracle_budget=cfg.oracle_budget,
                log_value_drift=cfg.log_value_drift,
                log_taylor_cosine=cfg.log_taylor_cosine,
                leaky_slope=cfg.leaky_slope,
            ))
    if not runs:
        raise ConfigError("empty run grid")
    return runs
