"""Reading and aggregating merged metrics CSVs.

The input schema is the runner's documented CSV (one row per run per
logging step, empty cells for absent metrics).  Aggregation mirrors the
metrics pipeline exactly: group means are plain means across runs, and
uncertainty bands are percentile bootstrap intervals of the mean drawn
from a Philox generator keyed [seed, 5], so bands are reproducible and
match the producing side's definition.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

NUMERIC_COLUMNS = [
    "alpha", "beta", "gamma", "n_mb", "n_h", "sigma_sq", "seed", "step",
    "train_loss", "eval_mse", "value_drift", "taylor_cosine",
]

BOOTSTRAP_STREAM = 5  # keep in lockstep with the metrics module's stream id


def load_metrics(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    for col in NUMERIC_COLUMNS:
        if col in df.columns:
            df[col] = pd.to_numeric(df[col].replace("", np.nan))
    return df


def bootstrap_mean_ci(
    samples: np.ndarray,
    level: float = 0.95,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap of the mean; same definition as the producer."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sample")
    key = np.array([seed % 2**64, BOOTSTRAP_STREAM], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    idx = rng.integers(0, x.size, size=(n_resamples, x.size))
    means = x[idx].mean(axis=1)
    q = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [q, 1.0 - q])
    return float(lo), float(hi)


def group_label(keys: list[str], values) -> str:
    parts = []
    for k, v in zip(keys, values if isinstance(values, tuple) else (values,)):
        if isinstance(v, float) and np.isnan(v):
            continue
        parts.append(f"{k}={v}")
    return ", ".join(parts) if parts else "all"


def curve_table(
    df: pd.DataFrame,
    x: str,
    y: str,
    group_by: list[str],
    level: float = 0.95,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> pd.DataFrame:
    """Per (group, x): mean of y across rows plus bootstrap interval.

    Rows with an absent y are dropped (a diverged run simply stops
    contributing).  Output columns: group keys, x, mean, lo, hi, n.
    """
    rows = []
    sub = df.dropna(subset=[y])
    if sub.empty:
        raise ValueError(f"no rows with values for {y!r}")
    for gvals, gdf in sub.groupby(group_by, dropna=False):
        for xval, xdf in gdf.groupby(x):
            vals = xdf[y].to_numpy(dtype=np.float64)
            lo, hi = bootstrap_mean_ci(vals, level, n_resamples, seed)
            rec = dict(zip(group_by, gvals if isinstance(gvals, tuple) else (gvals,)))
            rec.update({x: xval, "mean": float(vals.mean()), "lo": lo, "hi": hi,
                        "n": len(vals)})
            rows.append(rec)
    out = pd.DataFrame(rows)
    return out.sort_values(group_by + [x]).reset_index(drop=True)


def terminal_rows(df: pd.DataFrame, y: str) -> pd.DataFrame:
    """Last row with a y value per run_id."""
    sub = df.dropna(subset=[y])
    idx = sub.groupby("run_id")["step"].idxmax()
    return sub.loc[idx]
