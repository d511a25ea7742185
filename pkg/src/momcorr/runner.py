"""Deterministic experiment driver.

Each resolved run is executed in isolation: its seed derives independent
streams for data collection, parameter init, and minibatch sampling, so
(config point, seed) fully determines every CSV byte and runs can execute
in any order or in parallel.  Reference values for the Mountain Car tasks
depend only on gamma and are cached to disk once.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envs, metrics, tasks
from .config import ResolvedRun
from .models import MlpSpec, ModelSpec, RbfSpec, forward_batch, init_params
from .models import forward_batch as _forward_batch
from .models import grouped_weighted_grad_sums
from .optim import (
    CorrectedState,
    HyperParams,
    MomentumState,
    OracleState,
    corrected_step,
    corrected_step_scaled,
    make_mask,
    momentum_step,
    oracle_step,
    oracle_step_stacked,
)
from .rng import STREAM_SAMPLE, stream
from .taylor import z_outer_batch

# beyond this window length the oracle recomputes the whole window in one
# vectorized pass; below it, per-batch calls are cheap and bit-stable
ORACLE_STACK_THRESHOLD = 8

DIVERGENCE_LOSS_CAP = 1e12


@dataclass
class RunRecord:
    run_id: str
    status: str  # "ok" | "diverged"
    wall_time_s: float
    csv_path: str


def model_spec_for(run: ResolvedRun) -> ModelSpec:
    if run.model == "rbf":
        return RbfSpec(
            n_grid=run.n_grid,
            sigma_sq=run.sigma_sq,
            state_bounds=envs.STATE_BOUNDS,
            grid_normalized=run.rbf_grid_normalized,
        )
    d_in = 1 if run.task == "regression" else 2
    widths = (d_in,) + (run.n_h,) * (run.mlp_layers - 1) + (1,)
    return MlpSpec(layer_widths=widths, leaky_slope=run.leaky_slope)


def reference_cache_path(cache_dir: Path, gamma: float) -> Path:
    return Path(cache_dir) / f"mountain_car_refs_gamma{gamma!r}.csv"


def ensure_reference_cache(gamma: float, cache_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    path = reference_cache_path(cache_dir, gamma)
    if path.exists():
        return envs.load_values(path)
    states = envs.evaluation_grid(envs.energy_policy)
    values = envs.reference_values(states, envs.energy_policy, gamma)
    path.parent.mkdir(parents=True, exist_ok=True)
    envs.save_values(path, states, values)
    return states, values


def execute_run(run: ResolvedRun, out_dir: str | Path, cache_dir: str | Path | None = None) -> RunRecord:
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _run_rows(run, Path(cache_dir) if cache_dir is not None else out_dir / "cache")
    csv_path = out_dir / f"{run.run_id}.csv"
    metrics.write_rows(csv_path, rows)
    status = rows[-1].status if rows else "ok"
    return RunRecord(
        run_id=run.run_id,
        status=status,
        wall_time_s=time.perf_counter() - t0,
        csv_path=str(csv_path),
    )


def _run_rows(run: ResolvedRun, cache_dir: Path) -> list[metrics.MetricsRow]:
    spec = model_spec_for(run)
    hp = HyperParams(alpha=run.alpha, beta=run.beta, gamma=run.gamma)
    params = init_params(spec, run.seed)
    n = spec.n_params
    td = run.task != "regression"

    # data
    if run.task == "regression":
        data_x, data_y = tasks.regression_dataset()
        buffer = None
    elif run.task == "mountain_car_replay":
        transitions = envs.collect_transitions(envs.energy_policy, run.buffer_episodes, run.seed)
        buffer = tasks.ReplayBuffer(envs.TransitionBatch.from_transitions(transitions))
    else:  # mountain_car_online
        transitions = envs.collect_until(envs.energy_policy, run.total_steps, run.seed)
        buffer = tasks.ReplayBuffer(envs.TransitionBatch.from_transitions(transitions))
    sample_rng = stream(run.seed, STREAM_SAMPLE)

    eval_states = reference = None
    if td:
        eval_states, reference = ensure_reference_cache(run.gamma, cache_dir)

    # optimizer state
    needs_z = run.optimizer.startswith("corrected")
    z_kind = "full" if run.optimizer == "corrected" else "diag"
    mask = None
    if needs_z and run.mask != "all":
        if not isinstance(spec, MlpSpec):
            raise ValueError("layer masks only apply to the mlp model")
        mask = make_mask(spec, run.mask)
    if run.optimizer == "momentum":
        state = MomentumState.zeros(n)
    elif needs_z:
        state = CorrectedState.zeros(
            n, kind=z_kind, mask=mask, scaled=run.optimizer == "corrected_diag_scaled"
        )
    else:
        state = OracleState.fresh(run.beta)

    frozen = None
    if run.frozen_refresh > 0:
        frozen = tasks.FrozenTargetSchedule(frozen_params=params.copy(), refresh_every=run.frozen_refresh)

    track_cosine = run.log_taylor_cosine
    track_drift = run.log_value_drift and td
    history = metrics.RunHistory(run.n_mb, run.beta) if (track_cosine or track_drift) else None

    if td:
        def oracle_grad(batch, p):
            return tasks.td0_grad_bundle(spec, p, batch, run.gamma, need_grads_next=False).grad

        def oracle_window_grads(batches, p):
            S = np.concatenate([b.S for b in batches])
            S_next = np.concatenate([b.S_next for b in batches])
            R = np.concatenate([b.R for b in batches])
            live = ~np.concatenate([b.terminal for b in batches])
            values = _forward_batch(spec, p, S)
            v_next = _forward_batch(spec, p, S_next) * live
            deltas = values - (R + run.gamma * v_next)
            k, m = len(batches), len(batches[0])
            return grouped_weighted_grad_sums(spec, p, S, deltas, k) / m
    else:
        def oracle_grad(batch, p):
            return tasks.regression_grad_bundle(spec, p, batch[0], batch[1]).grad

        def oracle_window_grads(batches, p):
            X = np.concatenate([b[0] for b in batches]).reshape(-1, spec.input_dim)
            y = np.concatenate([b[1] for b in batches])
            deltas = _forward_batch(spec, p, X) - y
            k, m = len(batches), len(batches[0][0])
            return grouped_weighted_grad_sums(spec, p, X, deltas, k) / m

    rows: list[metrics.MetricsRow] = []
    status = "ok"
    for t in range(1, run.total_steps + 1):
        if frozen is not None:
            frozen.maybe_refresh(t, params)

        # assemble this step's minibatch
        if run.task == "regression":
            idx = sample_rng.integers(0, len(data_x), size=run.n_mb)
            batch = (data_x[idx], data_y[idx])
        elif run.task == "mountain_car_replay":
            batch = buffer.sample(sample_rng, run.n_mb)
        else:
            batch = buffer.in_order(t - 1, 1)

        need_next = td and (needs_z or track_cosine)
        if td:
            bundle = tasks.td0_grad_bundle(
                spec, params, batch, run.gamma,
                frozen=frozen.frozen_params if frozen is not None else None,
                need_grads_next=need_next,
            )
        else:
            bundle = tasks.regression_grad_bundle(spec, params, batch[0], batch[1])

        if needs_z or track_cosine:
            factor_v = bundle.grads
            factor_u = bundle.grads - run.gamma * bundle.grads_next if td else bundle.grads

        if history is not None:
            history.record(metrics.HistoryEntry(
                step=t,
                inputs=batch,
                values_next=bundle.values_next if track_drift else None,
                params=params.copy() if track_cosine else None,
                g=bundle.grad if track_cosine else None,
                factor_u=factor_u if track_cosine else None,
                factor_v=factor_v if track_cosine else None,
            ))

        try:
            if run.optimizer == "momentum":
                state, params = momentum_step(state, hp, bundle.grad, params)
            elif run.optimizer == "oracle":
                if state.h > ORACLE_STACK_THRESHOLD:
                    state, params, _ = oracle_step_stacked(
                        state, hp, batch, oracle_window_grads, params
                    )
                else:
                    state, params, _ = oracle_step(state, hp, batch, oracle_grad, params)
            else:
                Z = z_outer_batch(factor_u, factor_v, z_kind)
                step_fn = corrected_step_scaled if run.optimizer == "corrected_diag_scaled" else corrected_step
                state, params, _ = step_fn(state, hp, bundle.grad, Z, params)
        except FloatingPointError:
            status = "diverged"
        if status == "ok" and not (np.all(np.isfinite(params)) and abs(bundle.mean_loss) <= DIVERGENCE_LOSS_CAP):
            status = "diverged"

        if status != "ok" or t % run.log_every == 0 or t == run.total_steps:
            rows.append(_log_row(run, spec, params, t, bundle, history, eval_states,
                                 reference, data_x if not td else None,
                                 data_y if not td else None, status))
        if status != "ok":
            break
    return rows


def _log_row(run, spec, params, t, bundle, history, eval_states, reference,
             data_x, data_y, status) -> metrics.MetricsRow:
    td = run.task != "regression"
    finite = bool(np.all(np.isfinite(params)))
    if td:
        train_loss = bundle.mean_loss
    else:
        # full-dataset loss; the minibatch loss is too noisy to compare runs
        if finite:
            resid = forward_batch(spec, params, data_x.reshape(-1, 1)) - data_y
            train_loss = float(np.mean(resid**2) / 2.0)
        else:
            train_loss = float("nan")
    eval_mse = drift = cosine = None
    if finite and status == "ok":
        if td:
            eval_mse = metrics.value_mse(spec, params, eval_states, reference)
        if history is not None:
            if run.log_value_drift and td:
                drift = metrics.value_drift(history.entries, spec, params)
            if run.log_taylor_cosine:
                cosine = metrics.taylor_cosine(
                    history.entries, spec, params,
                    "td0" if td else "regression", run.gamma,
                )
    return metrics.MetricsRow(
        run_id=run.run_id, task=run.task, model=run.model, optimizer=run.optimizer,
        alpha=run.alpha, beta=run.beta, gamma=run.gamma, n_mb=run.n_mb,
        n_h=run.n_h if run.model == "mlp" else None,
        sigma_sq=run.sigma_sq if run.model == "rbf" else None,
        mask=run.mask if run.optimizer.startswith("corrected") else None,
        seed=run.seed, step=t,
        train_loss=train_loss, eval_mse=eval_mse,
        value_drift=drift, taylor_cosine=cosine, status=status,
    )


def _run_one(args: tuple) -> RunRecord:
    run, out_dir, cache_dir = args
    return execute_run(run, out_dir, cache_dir)


def run_campaign(
    runs: list[ResolvedRun],
    out_dir: str | Path,
    workers: int = 1,
    cache_dir: str | Path | None = None,
) -> list[RunRecord]:
    """Execute runs (in parallel if workers > 1); one CSV per run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = Path(cache_dir) if cache_dir is not None else out_dir / "cache"
    # precompute shared reference caches up front so workers only read
    for gamma in sorted({r.gamma for r in runs if r.task != "regression"}):
        ensure_reference_cache(gamma, cache)
    if workers <= 1:
        return [execute_run(r, out_dir, cache) for r in runs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, [(r, out_dir, cache) for r in runs]))


def merge_csvs(run_dir: str | Path, out_path: str | Path) -> int:
    """Concatenate per-run CSVs under run_dir into one file; returns row count."""
    run_dir = Path(run_dir)
    paths = sorted(p for p in run_dir.glob("*.csv") if p.name not in ("combined.csv", "runs.csv"))
    if not paths:
        raise FileNotFoundError(f"no run CSVs under {run_dir}")
    n = 0
    header = ",".join(metrics.CSV_COLUMNS)
    with open(out_path, "w") as out:
        out.write(header + "\n")
        for p in paths:
            with open(p) as f:
                got = f.readline().rstrip("\n")
                if got != header:
                    raise ValueError(f"{p}: unexpected columns {got!r}")
                for line in f:
                    out.write(line)
                    n += 1
    return n
