# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Static SVG charts of metrics files."""

import os.path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt             # pylint: disable=wrong-import-position

from comfetch.exceptions import ReportError         # pylint: disable=wrong-import-position
from comfetch.metrics import read_metrics           # pylint: disable=wrong-import-position
from comfetch.misc import ensure_dir                # pylint: disable=wrong-import-position


# (column, axis label, log scale)
PLOTTED_METRICS = [
    ("loss", "training loss", True),
    ("acc", "accuracy", False),
    ("min_grad_norm", "running min ‖∇f‖²", True),
    ("hh_ratio", "heavy-hitter ratio", False),
]

# Fixed so that the same data always makes the same SVG bytes.
matplotlib.rcParams["svg.hashsalt"] = "comfetch"
matplotlib.rcParams["savefig.bbox"] = "tight"


def _run_label(path):
    """Name a run by its metrics file, or its directory if the file has the usual name."""
    base = os.path.basename(path)
    if base == "metrics.csv":
        parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
        return parent or base
    return os.path.splitext(base)[0]


def emit_plots(csv_paths, out_dir, metrics=None):
    """Draw one chart per metric, each with a line for every file in `csv_paths`.

    `metrics` limits the charts to those column names.  Metrics that have no
    values in any of the files (accuracy for a regression run) are skipped.
    Returns the list of chart file names written.

    """
    if isinstance(csv_paths, str):
        csv_paths = [csv_paths]
    if not csv_paths:
        raise ReportError("No metrics files to plot")
    wanted = PLOTTED_METRICS
    if metrics is not None:
        known = {name for name, _, _ in PLOTTED_METRICS}
        for name in metrics:
            if name not in known:
                raise ReportError(f"Can't plot unknown metric {name!r}")
        wanted = [m for m in PLOTTED_METRICS if m[0] in metrics]

    required = ("round",) + tuple(name for name, _, _ in wanted)
    runs = [(_run_label(path), read_metrics(path, required=required)) for path in csv_paths]

    ensure_dir(out_dir)
    written = []
    for name, label, log_scale in wanted:
        series = []
        for run_label, columns in runs:
            points = [(r, v) for r, v in zip(columns["round"], columns[name]) if v is not None]
            if points:
                series.append((run_label, points))
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            for run_label, points in series:
                rounds, values = zip(*points)
                ax.plot(rounds, values, label=run_label, linewidth=1.2)
            ax.set_xlabel("round")
            ax.set_ylabel(label)
            if log_scale and all(v > 0 for _, points in series for _, v in points):
                ax.set_yscale("log")
            if len(series) > 1:
                ax.legend()
            path = os.path.join(out_dir, f"{name}.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
        written.append(path)
    return written
