"""Figure builders over merged metrics CSVs.

Every figure writes three artifacts next to the requested output path:
PNG, SVG, and the data behind the figure as CSV (the exact numbers each
line/band/point was drawn from), so correctness is assertable without
pixel comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .data import curve_table, group_label, load_metrics, bootstrap_mean_ci, terminal_rows


@dataclass
class FigureSpec:
    inputs: list[str]
    x: str
    y: str
    group_by: list[str]
    out: str
    where: dict[str, str] = field(default_factory=dict)
    ci_level: float = 0.95
    n_resamples: int = 10_000
    seed: int = 0
    title: str = ""
    logy: bool = False


def _load(spec: FigureSpec) -> pd.DataFrame:
    frames = [load_metrics(p) for p in spec.inputs]
    df = pd.concat(frames, ignore_index=True)
    for col, val in spec.where.items():
        if col not in df.columns:
            raise ValueError(f"filter column {col!r} not in CSV header")
        df = df[df[col].astype(str) == val]
    missing = [c for c in [spec.x, spec.y, *spec.group_by] if c not in df.columns]
    if missing:
        raise ValueError(f"missing columns {missing} in CSV header")
    if df.empty:
        raise ValueError(f"no rows left after filters {spec.where}")
    return df


def _save(fig, table: pd.DataFrame, out: str) -> dict[str, str]:
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    stem = out_path.with_suffix("")
    paths = {
        "png": str(stem) + ".png",
        "svg": str(stem) + ".svg",
        "csv": str(stem) + ".csv",
    }
    fig.savefig(paths["png"], dpi=150, bbox_inches="tight")
    fig.savefig(paths["svg"], bbox_inches="tight")
    plt.close(fig)
    table.to_csv(paths["csv"], index=False)
    return paths


def plot_curves(spec: FigureSpec) -> dict[str, str]:
    """Mean curve per group with a bootstrap CI band."""
    df = _load(spec)
    table = curve_table(df, spec.x, spec.y, spec.group_by,
                        spec.ci_level, spec.n_resamples, spec.seed)
    fig, ax = plt.subplots(figsize=(6, 4))
    for gvals, gdf in table.groupby(spec.group_by, dropna=False):
        gdf = gdf.sort_values(spec.x)
        label = group_label(spec.group_by, gvals)
        ax.plot(gdf[spec.x], gdf["mean"], label=label)
        ax.fill_between(gdf[spec.x], gdf["lo"], gdf["hi"], alpha=0.25)
    ax.set_xlabel(spec.x)
    ax.set_ylabel(spec.y)
    if spec.logy:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8)
    return _save(fig, table, spec.out)


def plot_scatter(spec: FigureSpec) -> dict[str, str]:
    """Terminal y against run-averaged x, one point per group.

    x is averaged over every logged value in the group (e.g. mean drift
    over training); y is the terminal value per run, averaged across runs
    with a bootstrap interval.
    """
    df = _load(spec)
    rows = []
    for gvals, gdf in df.groupby(spec.group_by, dropna=False):
        xs = gdf[spec.x].dropna().to_numpy(dtype=np.float64)
        term = terminal_rows(gdf, spec.y)[spec.y].to_numpy(dtype=np.float64)
        if xs.size == 0 or term.size == 0:
            continue
        lo, hi = bootstrap_mean_ci(term, spec.ci_level, spec.n_resamples, spec.seed)
        rec = dict(zip(spec.group_by, gvals if isinstance(gvals, tuple) else (gvals,)))
        rec.update({f"mean_{spec.x}": float(xs.mean()), f"terminal_{spec.y}": float(term.mean()),
                    "lo": lo, "hi": hi, "n": len(term)})
        rows.append(rec)
    if not rows:
        raise ValueError("no groups with data")
    table = pd.DataFrame(rows).sort_values(spec.group_by).reset_index(drop=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for _, r in table.iterrows():
        label = group_label(spec.group_by, tuple(r[c] for c in spec.group_by))
        ax.errorbar(r[f"mean_{spec.x}"], r[f"terminal_{spec.y}"],
                    yerr=[[r[f"terminal_{spec.y}"] - r["lo"]], [r["hi"] - r[f"terminal_{spec.y}"]]],
                    fmt="o", capsize=3, label=label)
    ax.set_xlabel(f"mean {spec.x}")
    ax.set_ylabel(f"terminal {spec.y}")
    if spec.logy:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8)
    return _save(fig, table, spec.out)


def plot_sweep(spec: FigureSpec) -> dict[str, str]:
    """Terminal y as a function of a swept config column (spec.x)."""
    df = _load(spec)
    term = terminal_rows(df, spec.y)
    rows = []
    for key, gdf in term.groupby(spec.group_by + [spec.x], dropna=False):
        vals = gdf[spec.y].to_numpy(dtype=np.float64)
        lo, hi = bootstrap_mean_ci(vals, spec.ci_level, spec.n_resamples, spec.seed)
        key = key if isinstance(key, tuple) else (key,)
        rec = dict(zip(spec.group_by + [spec.x], key))
        rec.update({"mean": float(vals.mean()), "lo": lo, "hi": hi, "n": len(vals)})
        rows.append(rec)
    table = pd.DataFrame(rows).sort_values(spec.group_by + [spec.x]).reset_index(drop=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for gvals, gdf in table.groupby(spec.group_by, dropna=False):
        gdf = gdf.sort_values(spec.x)
        label = group_label(spec.group_by, gvals)
        ax.plot(gdf[spec.x], gdf["mean"], marker="o", label=label)
        ax.fill_between(gdf[spec.x], gdf["lo"], gdf["hi"], alpha=0.25)
    ax.set_xlabel(spec.x)
    ax.set_ylabel(f"terminal {spec.y}")
    if spec.logy:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8)
    return _save(fig, table, spec.out)
