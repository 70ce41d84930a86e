"""Render the standard trend figures from a sweep CSV.

Pure file-to-file: reads the delimited output of run_sweep, writes PNGs next
to it (or into out_dir).  Uses the Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .sweep import load_rows

_STYLE = {"joa": dict(color="tab:blue", marker="o"),
          "soa": dict(color="tab:orange", marker="s"),
          "none": dict(color="tab:gray", marker="x", linestyle="--")}

_PARAM_LABEL = {"zeta_c": "communication SINR threshold (dB)",
                "zeta_r": "radar SINR threshold (dB)",
                "eps": "similarity radius",
                "n_t": "transmit antennas",
                "k": "users per BS"}


def _series(rows, column, reducer):
    """(param value, algorithm) -> reducer over that cell's rows."""
    out = {}
    for r in rows:
        out.setdefault(r["algorithm"], {}).setdefault(r["param"], []).append(
            r[column])
    series = {}
    for alg, cells in out.items():
        xs = np.array(sorted(cells))
        ys = np.array([reducer(np.asarray(cells[x], dtype=float)) for x in xs])
        series[alg] = (xs, ys)
    return series


def _draw(series, ylabel, xlabel, path):
    fig, ax = plt.subplots(figsize=(5.4, 3.6), constrained_layout=True)
    for alg in ("joa", "soa", "none"):
        if alg not in series:
            continue
        xs, ys = series[alg]
        ax.plot(xs, ys, label=alg.upper() if alg != "none" else "no precoding",
                **_STYLE[alg])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(csv_path, out_dir=None, param: str | None = None) -> list:
    """Write rate / detection / MSE / power / runtime trend figures for one
    sweep CSV; returns the created paths."""
    csv_path = Path(csv_path)
    rows = load_rows(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} holds no data rows")
    out_dir = csv_path.parent if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = csv_path.stem
    xlabel = _PARAM_LABEL.get(param, "swept parameter value")

    def mean(v):
        return float(np.nanmean(v)) if np.isfinite(v).any() else np.nan

    def median(v):
        return float(np.nanmedian(v)) if np.isfinite(v).any() else np.nan

    pd_rows = [dict(r, Pd=np.nanmean([r["Pd_1"], r["Pd_2"], r["Pd_3"]]))
               for r in rows]
    jobs = [
        ("rate", _series(rows, "C_a", mean), "average rate (bit/s/Hz)"),
        ("detection", _series(pd_rows, "Pd", mean), "detection probability"),
        ("mse", _series(rows, "MSE", mean), "waveform MSE"),
        ("power", _series(rows, "P_t", mean), "transmit power (W)"),
        ("runtime", _series(rows, "wall_ms", median), "wall time (ms)"),
    ]
    paths = []
    for tag, series, ylabel in jobs:
        path = out_dir / f"{stem}_{tag}.png"
        _draw(series, ylabel, xlabel, path)
        paths.append(path)
    return paths
