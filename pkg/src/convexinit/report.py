"""CSV helpers and deterministic SVG charts.

Charts are drawn with matplotlib's object API and its SVG backend.  A fixed
hash salt and an empty date make the output byte-identical for identical
input.  Every plotted series gets a ``gid`` of the form ``series-<name>`` so
its ``<path>`` can be located in the SVG text.
"""

import csv
import io

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .errors import FormatError, ParameterError

__all__ = [
    "format_csv",
    "parse_csv",
    "render_svg",
    "render_histograms",
    "median_band",
    "render_band_svg",
]

_RC = {
    "svg.hashsalt": "convexinit",
    "svg.fonttype": "none",
    "path.simplify": False,
    "font.size": 9,
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(header, rows):
    """Comma-separated text with a header, ``'.'`` decimals and ``'\\n'`` endings."""
    lines = [",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_csv(text):
    """Parse CSV text into ``(header, {column: array})``; non-numeric columns stay strings."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty CSV") from None
    rows = [r for r in reader if r]
    if any(len(r) != len(header) for r in rows):
        raise FormatError("ragged CSV rows")
    cols = {}
    for i, h in enumerate(header):
        cells = [r[i] for r in rows]
        try:
            cols[h] = np.array([float(c) for c in cells])
        except ValueError:
            cols[h] = np.array(cells)
    return header, cols


def _svg(fig):
    buf = io.StringIO()
    with matplotlib.rc_context(_RC):
        FigureCanvasSVG(fig).print_svg(buf, metadata={"Date": None})
    return buf.getvalue()


def _new_figure(size):
    with matplotlib.rc_context(_RC):
        return Figure(figsize=size)


def render_svg(series, x_label="x", y_label="y", log_y=False, title=None, bands=None):
    """Line chart with one polyline per series.

    Parameters
    ----------
    series : dict
        ``name -> (x, y)``; insertion order sets the colour order.
    log_y : bool
        Logarithmic y axis; needs strictly positive values.
    bands : dict, optional
        ``name -> (x, lower, upper)`` shaded regions drawn under the lines.
    """
    if not series or any(len(np.atleast_1d(xy[0])) == 0 for xy in series.values()):
        raise ParameterError("nothing to plot")
    with matplotlib.rc_context(_RC):
        fig = _new_figure((6.0, 4.0))
        ax = fig.add_subplot()
        for i, (name, (x, y)) in enumerate(series.items()):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            if x.shape != y.shape:
                raise ParameterError(f"series {name!r}: x and y differ in length")
            if log_y and not np.all(y > 0):
                raise ParameterError(f"series {name!r}: log scale needs positive values")
            colour = f"C{i % 10}"
            if bands and name in bands:
                bx, lo, hi = bands[name]
                ax.fill_between(bx, lo, hi, color=colour, alpha=0.25, linewidth=0,
                                gid=f"band-{name}")
            ax.plot(x, y, color=colour, linewidth=1.2, label=str(name), gid=f"series-{name}")
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _svg(fig)


def render_histograms(layers, title=None):
    """Small multiples of per-layer histograms.

    ``layers`` is a sequence of ``(label, inner_edges, counts)``; the first and
    last counts are the overflow bins outside the inner edges and are not
    drawn.
    """
    if not layers:
        raise ParameterError("nothing to plot")
    n = len(layers)
    cols = min(n, 4)
    rows = (n + cols - 1) // cols
    with matplotlib.rc_context(_RC):
        fig = _new_figure((2.4 * cols, 2.0 * rows))
        for i, (label, edges, counts) in enumerate(layers):
            ax = fig.add_subplot(rows, cols, i + 1)
            inner = np.asarray(counts, dtype=float)[1:-1]
            total = max(float(np.sum(counts)), 1.0)
            widths = np.diff(edges)
            ax.stairs(inner / total / widths, edges, fill=True, gid=f"hist-{label}")
            ax.set_title(str(label))
            ax.tick_params(labelsize=7)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _svg(fig)


def median_band(curves, column="loss"):
    """Median and inter-quartile range across runs, per step.

    ``curves`` are column dicts from :func:`parse_csv` sharing a ``step``
    column; runs are truncated to the shortest.
    """
    if not curves:
        raise ParameterError("no curves to aggregate")
    n = min(len(c["step"]) for c in curves)
    if n == 0:
        raise ParameterError("empty curve")
    steps = curves[0]["step"][:n]
    stack = np.vstack([c[column][:n] for c in curves])
    q1, med, q3 = np.percentile(stack, [25, 50, 75], axis=0)
    return steps, med, q1, q3


def render_band_svg(groups, column="loss", log_y=True):
    """Median line plus inter-quartile band for each named group of curves."""
    series, bands = {}, {}
    for name, curves in groups.items():
        steps, med, q1, q3 = median_band(curves, column)
        series[name] = (steps, med)
        bands[name] = (steps, q1, q3)
    positive = all(np.all(b[1] > 0) for b in bands.values())
    return render_svg(series, "step", column, log_y=log_y and positive, bands=bands)
