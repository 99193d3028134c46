"""Report exporter: smoothed CSV copies and rendered figures.

Reads the CSV files a training run produced, adds a moving-average column,
and renders PNG figures next to the delimited output.  Source files are
never modified; everything lands in the chosen output directory.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 11

SMOOTH_COLUMNS = {
    "training_returns": "mean_return",
    "validation_returns": "return",
}


def moving_average(values, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Centered moving average with a window that shrinks near the edges.

    At index i the window spans [i-h, i+h] with h = min(window//2, i, n-1-i),
    so the output has the same length as the input and no padding bias.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd number, got {window}")
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    out = np.empty(n)
    half_max = window // 2
    for i in range(n):
        h = min(half_max, i, n - 1 - i)
        out[i] = values[i - h:i + h + 1].mean()
    return out


def read_csv(path) -> tuple:
    """Read a delimited file into (header, rows of floats)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader if row]
    return header, rows


def smoothed_rows(header, rows, column: str, window: int):
    """Append a ``<column>_smoothed`` column to every row."""
    if column not in header:
        raise ValueError(f"column {column!r} not in header {header}")
    idx = header.index(column)
    smoothed = moving_average([r[idx] for r in rows], window)
    new_header = list(header) + [f"{column}_smoothed"]
    new_rows = [list(r) + [s] for r, s in zip(rows, smoothed)]
    return new_header, new_rows


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            # float(c) first: numpy scalars pass isinstance(c, float) but
            # their repr is not a plain decimal literal
            writer.writerow([repr(float(c)) if isinstance(c, float) else c
                             for c in row])


def export_returns_report(csv_path, output_dir=None,
                          window: int = DEFAULT_WINDOW) -> list:
    """Smooth a returns file and render its figure.

    Writes ``<stem>_smoothed.csv`` and ``<stem>.png`` into ``output_dir``
    (defaults to the source directory) and returns the written paths.
    """
    csv_path = Path(csv_path)
    out_dir = Path(output_dir) if output_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = read_csv(csv_path)
    if not rows:
        logger.warning("%s has no data rows; skipping", csv_path)
        return []
    column = SMOOTH_COLUMNS.get(csv_path.stem, header[-1])
    new_header, new_rows = smoothed_rows(header, rows, column, window)

    smoothed_path = out_dir / f"{csv_path.stem}_smoothed.csv"
    write_csv(smoothed_path, new_header, new_rows)

    cycles = [r[0] for r in rows]
    raw = [r[header.index(column)] for r in rows]
    smoothed = [r[-1] for r in new_rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(cycles, raw, color="lightsteelblue", label=column)
    ax.plot(cycles, smoothed, color="navy",
            label=f"{column} (window {window})")
    ax.set_xlabel("cycle")
    ax.set_ylabel("return")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    figure_path = out_dir / f"{csv_path.stem}.png"
    fig.savefig(figure_path, dpi=120)
    plt.close(fig)
    return [smoothed_path, figure_path]


def export_trace_report(csv_path, output_dir=None) -> list:
    """Render one validation trace as a stacked time-series figure."""
    csv_path = Path(csv_path)
    out_dir = Path(output_dir) if output_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = read_csv(csv_path)
    if not rows:
        logger.warning("%s has no data rows; skipping", csv_path)
        return []
    cols = {name: [r[i] for r in rows] for i, name in enumerate(header)}
    t = cols["time_step"]
    fig, axes = plt.subplots(4, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(t, cols["x"], label="x")
    axes[0].plot(t, cols["y"], label="y")
    axes[0].set_ylabel("position")
    axes[0].legend()
    axes[1].plot(t, cols["phi_dot"], color="tab:orange")
    axes[1].set_ylabel("angular velocity")
    axes[2].plot(t, cols["action"], color="tab:green")
    axes[2].set_ylabel("torque")
    axes[3].plot(t, cols["reward"], color="tab:red")
    axes[3].set_ylabel("reward")
    axes[3].set_xlabel("time step")
    for ax in axes:
        ax.grid(True, alpha=0.4)
    fig.tight_layout()
    figure_path = out_dir / f"{csv_path.stem}.png"
    fig.savefig(figure_path, dpi=120)
    plt.close(fig)
    return [figure_path]


def export_all(results_dir, output_dir=None, window: int = DEFAULT_WINDOW) -> list:
    """Export every known CSV in a results directory; returns written paths."""
    results_dir = Path(results_dir)
    written = []
    for name in ("training_returns.csv", "validation_returns.csv"):
        path = results_dir / name
        if path.exists():
            written.extend(export_returns_report(path, output_dir, window))
    for path in sorted(results_dir.glob("validation_trace_*.csv")):
        written.extend(export_trace_report(path, output_dir))
    return written
