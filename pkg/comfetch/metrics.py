# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Per-round metric rows, and the CSV file they're written to."""

import csv
import math

from comfetch.exceptions import ReportError
from comfetch.misc import ensure_dir_for_file


# The first line of every metrics file.  Bump the version when the columns change.
METRICS_VERSION = 1
METRICS_HEADER_COMMENT = f"# comfetch-metrics v{METRICS_VERSION}"

COLUMNS = ("round", "loss", "acc", "min_grad_norm", "hh_ratio", "down_vals", "up_vals", "wall_ms")

# Columns that can be compared between runs: everything but the clock.
REPLAY_COLUMNS = COLUMNS[:-1]


class MetricRow:
    """One round's line in the metrics file.

    `acc` is None for rounds without an evaluation, and for real-valued
    targets.  `min_grad_norm` is the running minimum of ‖∇f‖², the squared
    norm of the full-objective gradient over every client's data at the
    round's recovered weights.  `down_vals` and `up_vals` are cumulative.

    """

    __slots__ = COLUMNS

    def __init__(self, round, loss, acc, min_grad_norm, hh_ratio, down_vals, up_vals, wall_ms):
        # pylint: disable=redefined-builtin
        self.round = round
        self.loss = loss
        self.acc = acc
        self.min_grad_norm = min_grad_norm
        self.hh_ratio = hh_ratio
        self.down_vals = down_vals
        self.up_vals = up_vals
        self.wall_ms = wall_ms

    def __repr__(self):
        return f"<MetricRow round={self.round} loss={self.loss!r}>"

    def __eq__(self, other):
        return isinstance(other, MetricRow) and self.as_tuple() == other.as_tuple()

    def as_tuple(self):
        return tuple(getattr(self, name) for name in COLUMNS)

    def cells(self):
        """The row as CSV cells.  Floats are written exactly, with repr."""
        cells = []
        for name in COLUMNS:
            value = getattr(self, name)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        return cells


def _check_row(row, previous):
    if previous is not None and row.round <= previous.round:
        raise ReportError(f"Metric rows out of order: round {row.round} after {previous.round}")
    for name in COLUMNS[1:]:
        value = getattr(row, name)
        if value is not None and not math.isfinite(value):
            raise ReportError(f"Round {row.round} has a non-finite {name}: {value!r}")


class MetricsWriter:
    """Write `MetricRow`s to a CSV file, one line per round.

    Rows are flushed as they're written, so a run that dies part way still
    leaves its completed rounds behind.

    """

    def __init__(self, path):
        self.path = path
        self.rows = []
        ensure_dir_for_file(path)
        self._file = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._file.write(METRICS_HEADER_COMMENT + "\n")
        self._writer.writerow(COLUMNS)
        self._file.flush()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def write(self, row):
        _check_row(row, self.rows[-1] if self.rows else None)
        self._writer.writerow(row.cells())
        self._file.flush()
        self.rows.append(row)

    def close(self):
        if not self._file.closed:
            self._file.close()


def _parse_cell(name, text, path, lineno):
    if text == "":
        return None
    try:
        if name in ("round", "down_vals", "up_vals"):
            return int(text)
        return float(text)
    except ValueError:
        raise ReportError(f"{path}:{lineno}: bad {name} value {text!r}")


def read_metrics(path, required=COLUMNS):
    """Read a metrics CSV.  Returns a dict mapping column names to lists.

    Every name in `required` must be a column, or ReportError names the
    missing one.  Columns we don't know are kept as strings.

    """
    with open(path, encoding="utf-8", newline="") as f:
        numbered = [
            (lineno, line) for lineno, line in enumerate(f, start=1)
            if line.strip() and not line.startswith("#")
        ]
    if not numbered:
        raise ReportError(f"Metrics file {path} is empty")
    header = next(csv.reader([numbered[0][1]]))
    for name in required:
        if name not in header:
            raise ReportError(f"Metrics file {path} has no {name!r} column")
    columns = {name: [] for name in header}
    for lineno, line in numbered[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise ReportError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
        for name, text in zip(header, cells):
            if name in COLUMNS:
                columns[name].append(_parse_cell(name, text, path, lineno))
            else:
                columns[name].append(text)
    if not columns[header[0]]:
        raise ReportError(f"Metrics file {path} has no rows")
    return columns
