"""
SVG line plots of sweep CSVs.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import InputError  # noqa: E402

logger = logging.getLogger(__name__)


def plot_csv(
    csv_path: Union[str, Path],
    x: str,
    series: Optional[str],
    out_path: Union[str, Path],
    value: str = "value",
) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """
    Plot the mean of ``value`` against ``x``, one line per ``series`` value.

    A shaded band spans the minimum and maximum over repeats and folds.

    Args:
        csv_path: Sweep CSV
        x: Column for the horizontal axis
        series: Column splitting the data into lines, or None for one line
        out_path: SVG destination
        value: Column with the plotted metric

    Returns:
        Mapping of series label to the plotted (x, mean) arrays

    Raises:
        InputError: If the CSV cannot be parsed or a column is missing
    """
    try:
        frame = pd.read_csv(csv_path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"Cannot read {csv_path}: {e}")
    for column in (x, series, value):
        if column is not None and column not in frame.columns:
            raise InputError(f"Column {column!r} not in {csv_path} (columns: {', '.join(frame.columns)})")

    groups = frame.groupby(series, sort=True) if series else [("all", frame)]
    plotted: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    figure, axes = plt.subplots(figsize=(6, 4))
    try:
        for label, group in groups:
            stats = group.groupby(x, sort=True)[value].agg(["mean", "min", "max"])
            xs = stats.index.to_numpy()
            means = stats["mean"].to_numpy()
            name = f"{series}={label}" if series else value
            axes.plot(xs, means, marker="o", label=name)
            if len(xs) > 1:
                axes.fill_between(xs, stats["min"].to_numpy(), stats["max"].to_numpy(), alpha=0.2)
            plotted[str(label)] = (xs, means)
        axes.set_xlabel(x)
        axes.set_ylabel(f"{value} (mean, min-max band)")
        axes.legend()
        figure.tight_layout()
        figure.savefig(out_path, format="svg")
    finally:
        plt.close(figure)
    logger.info(f"Plot with {len(plotted)} series written to {out_path}")
    return plotted
