# reporting/plots.py
"""SVG figures regenerated from the benchmark CSVs."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from core.errors import InputError  # noqa: E402

log = logging.getLogger(__name__)

TABLE_COLUMNS = {
    "success_rate": "success",
    "time_median": "time med [s]",
    "time_iqr": "time IQR [s]",
    "trajectory_ik_time_median": "traj IK [s]",
    "pick_attempts_mean": "# pick",
    "place_attempts_mean": "# place",
}


def plot_histograms(histogram: pd.DataFrame, out_dir: str | Path) -> list[str]:
    """One detection-time histogram per scenario, methods overlaid."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if histogram.empty:
        return []
    for scenario, part in histogram.groupby("scenario", sort=False):
        fig, ax = plt.subplots(figsize=(6, 4))
        for method, rows in part.groupby("method", sort=False):
            width = (rows["bin_hi"] - rows["bin_lo"]).to_numpy()
            ax.bar(rows["bin_lo"], rows["count"], width=width, align="edge", alpha=0.5, label=method)
        ax.set_xlabel("detection time [s]")
        ax.set_ylabel("count")
        ax.set_title(scenario)
        ax.legend()
        fig.tight_layout()
        p = out / f"histogram_{scenario}.svg"
        fig.savefig(p, format="svg")
        plt.close(fig)
        paths.append(str(p))
    return paths


def plot_table(aggregate: pd.DataFrame, out_dir: str | Path) -> str:
    """Aggregate table rendered as a figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = [c for c in TABLE_COLUMNS if c in aggregate.columns]
    cells = [[f"{v:.2f}" for v in row] for row in aggregate[cols].to_numpy(dtype=float)]
    labels = [f"{s} / {m}" for s, m in zip(aggregate["scenario"], aggregate["method"])]
    fig, ax = plt.subplots(figsize=(1.6 * (len(cols) + 1), 0.4 * (len(labels) + 2)))
    ax.axis("off")
    ax.table(cellText=cells, rowLabels=labels, colLabels=[TABLE_COLUMNS[c] for c in cols], loc="center")
    fig.tight_layout()
    p = out / "aggregate_table.svg"
    fig.savefig(p, format="svg")
    plt.close(fig)
    return str(p)


def _read(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e


def export_plots(bench_dir: str | Path, out_dir: str | Path | None = None) -> list[str]:
    bench = Path(bench_dir)
    out = Path(out_dir) if out_dir is not None else bench
    histogram = _read(bench / "bench_histogram.csv")
    aggregate = _read(bench / "bench_aggregate.csv")
    paths = plot_histograms(histogram, out)
    if not aggregate.empty:
        paths.append(plot_table(aggregate, out))
    log.info("wrote %d figures to %s", len(paths), out)
    return paths
