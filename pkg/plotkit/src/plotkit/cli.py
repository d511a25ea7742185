"""Command-line entry point.

    plotkit <figure-name> --in combined.csv [--in more.csv] --out fig.png

Figure names map to preset column selections and filters over the
runner's CSV schema; `plotkit list` shows them.
"""

from __future__ import annotations

import argparse

from .figures import FigureSpec, plot_curves, plot_scatter, plot_sweep

FIGURES = {
    "regression-curves": dict(  # training-loss curves per optimizer (Fig. 1 style)
        kind="curves", x="step", y="train_loss", group_by=["optimizer"],
        where={"task": "regression"}, logy=True,
        title="Regression: training loss",
    ),
    "replay-curves": dict(  # replay-buffer eval MSE per optimizer (Fig. 3 style)
        kind="curves", x="step", y="eval_mse", group_by=["optimizer"],
        where={"task": "mountain_car_replay", "model": "mlp", "n_mb": "16"},
        logy=True, title="Replay policy evaluation: value MSE",
    ),
    "online-curves": dict(  # online eval MSE per optimizer (Fig. 4 style)
        kind="curves", x="step", y="eval_mse", group_by=["optimizer"],
        where={"task": "mountain_car_online"}, logy=True,
        title="Online policy evaluation: value MSE",
    ),
    "drift-curves": dict(  # target drift, dense vs sparse models (Fig. 5 style)
        kind="curves", x="step", y="value_drift", group_by=["model", "sigma_sq"],
        where={"task": "mountain_car_replay"}, logy=True,
        title="Bootstrap-target drift",
    ),
    "width-sweep": dict(  # terminal MSE against kernel width (Fig. 6 style)
        kind="sweep", x="sigma_sq", y="eval_mse", group_by=["optimizer"],
        where={"model": "rbf"}, logy=True,
        title="RBF width vs terminal MSE",
    ),
    "drift-vs-mse": dict(  # terminal MSE against mean drift per width (Fig. 7 style)
        kind="scatter", x="value_drift", y="eval_mse", group_by=["sigma_sq"],
        where={"model": "rbf"}, logy=True,
        title="Drift vs terminal MSE (RBF widths)",
    ),
    "cosine-curves": dict(  # Taylor-approximation cosine over training (Fig. 8 style)
        kind="curves", x="step", y="taylor_cosine", group_by=["optimizer"],
        where={"task": "mountain_car_replay"},
        title="Taylor correction vs true gradients: cosine",
    ),
    "mask-curves": dict(  # per-layer correction comparison (Fig. 13 style)
        kind="curves", x="step", y="eval_mse", group_by=["mask"],
        where={"optimizer": "corrected"}, logy=True,
        title="Correcting subsets of layers",
    ),
}

_KINDS = {"curves": plot_curves, "scatter": plot_scatter, "sweep": plot_sweep}


def build_spec(name: str, inputs: list[str], out: str) -> tuple[FigureSpec, str]:
    preset = dict(FIGURES[name])
    kind = preset.pop("kind")
    return FigureSpec(inputs=inputs, out=out, **preset), kind


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="plotkit")
    p.add_argument("figure", choices=sorted(FIGURES) + ["list"])
    p.add_argument("--in", dest="inputs", action="append", default=None,
                   help="merged metrics CSV (repeatable)")
    p.add_argument("--out", default=None, help="output image path (.png)")
    args = p.parse_args(argv)

    if args.figure == "list":
        for name in sorted(FIGURES):
            print(name)
        return 0
    if not args.inputs:
        p.error("--in is required")
    spec, kind = build_spec(args.figure, args.inputs, args.out or f"{args.figure}.png")
    paths = _KINDS[kind](spec)
    for k, v in paths.items():
        print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
