"""CSV ingestion, deterministic CSV output and the trace SVG."""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .core import Dataset
from .diagnostics import DiagnosticTrace
from .exceptions import DataFormatError

__all__ = [
    "read_dataset",
    "write_dataset",
    "format_number",
    "write_csv",
    "read_csv_rows",
    "trace_rows",
    "replicate_rows",
    "render_trace_svg",
]


def read_dataset(path, response: str, intercept: bool = True) -> Dataset:
    """Numeric CSV with a header row; ``response`` names the response column.

    Every other column becomes a regressor, preceded by an ``intercept``
    column of ones when ``intercept`` is true.

    Raises
    ------
    DataFormatError
        Missing header or response column, ragged rows, empty cells,
        non-numeric or non-finite values.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(h == "" for h in header):
        raise DataFormatError(f"{path}: header names must be non-empty and distinct")
    if response not in header:
        raise DataFormatError(f"{path}: no column named {response!r} (have {', '.join(header)})")
    if intercept and "intercept" in header:
        raise DataFormatError(f"{path}: column 'intercept' clashes with the added intercept")
    values = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataFormatError(f"{path}, line {i}: expected {len(header)} fields, got {len(r)}")
        for j, cell in enumerate(r):
            cell = cell.strip()
            if cell == "":
                raise DataFormatError(f"{path}, line {i}: missing value in column {header[j]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}, line {i}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataFormatError(f"{path}, line {i}: non-finite value {cell!r}")
            values[i - 2, j] = v
    if values.shape[0] == 0:
        raise DataFormatError(f"{path}: no data rows")
    k = header.index(response)
    names = [h for j, h in enumerate(header) if j != k]
    X = np.delete(values, k, axis=1)
    if intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = ["intercept"] + names
    if X.shape[1] == 0:
        raise DataFormatError(f"{path}: no regressor columns")
    return Dataset(X, values[:, k], tuple(names))


def format_number(v) -> str:
    """Shortest round-trip text for floats; integers stay integers."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    """Header plus one line per record; ``\\n`` line endings for byte stability."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            if isinstance(r, dict):
                r = [r[h] for h in header]
            w.writerow([format_number(v) for v in r])


def write_dataset(path, data: Dataset, response: str = "y", skip_intercept: bool = True) -> None:
    cols = [j for j, n in enumerate(data.column_names) if not (skip_intercept and n == "intercept")]
    header = [data.column_names[j] for j in cols] + [response]
    rows = (list(data.regressors[i, cols]) + [data.response[i]] for i in range(data.n_cases))
    write_csv(path, header, rows)


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


TRACE_HEADER = ["center", "component", "estimate", "boot_se", "band_lo", "band_hi", "unweighted"]
REPLICATE_HEADER = ["replicate", "center", "component", "estimate"]


def trace_rows(trace: DiagnosticTrace) -> list[dict]:
    """Records for ``trace.csv``; ``unweighted`` repeats the plain fit."""
    out = []
    for rec in trace.records():
        i = trace.column_names.index(rec["component"])
        out.append(dict(rec, unweighted=trace.theta_unweighted[i]))
    return out


def replicate_rows(trace: DiagnosticTrace) -> list[list]:
    reps = trace.boot_replicate_traces
    if reps is None:
        return []
    out = []
    for b in range(reps.shape[0]):
        for k, c in enumerate(trace.centers):
            for i, name in enumerate(trace.column_names):
                out.append([b, c, name, reps[b, k, i]])
    return out


# -- SVG -----------------------------------------------------------------------------

_W, _H = 640, 220
_LEFT, _RIGHT, _TOP, _BOTTOM = 90, 20, 28, 34
_MARGIN_X = 40  # x position (inside the plot area) of the unweighted estimate


def _f(v):
    return f"{v:.2f}"


def _num(s):
    try:
        return float(s)
    except (TypeError, ValueError):
        return float("nan")


def render_trace_svg(trace_records, replicate_records=()) -> str:
    """Trace plot, one panel per component.

    Black line: weighted estimates over the centers.  Gray lines: bootstrap
    replicate traces.  Black dot in the left margin: the unweighted
    estimate.  Thin horizontal line: zero.  Input records are the rows of
    ``trace.csv`` and ``trace_replicates.csv`` as read back from disk
    (string values are fine), so the picture depends only on file content.
    """
    comps: OrderedDict[str, dict] = OrderedDict()
    for r in trace_records:
        c = comps.setdefault(r["component"], {"x": [], "y": [], "lo": [], "hi": [], "u": float("nan")})
        c["x"].append(_num(r["center"]))
        c["y"].append(_num(r["estimate"]))
        c["lo"].append(_num(r.get("band_lo")))
        c["hi"].append(_num(r.get("band_hi")))
        c["u"] = _num(r.get("unweighted"))
    reps: dict[str, OrderedDict] = {}
    for r in replicate_records:
        rr = r if isinstance(r, dict) else dict(zip(REPLICATE_HEADER, r))
        reps.setdefault(str(rr["component"]), OrderedDict()).setdefault(str(rr["replicate"]), []).append(
            (_num(rr["center"]), _num(rr["estimate"])))

    height = _H * max(1, len(comps))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{height}" fill="white"/>',
    ]
    for p, (name, c) in enumerate(comps.items()):
        top = p * _H
        x0, x1 = _LEFT + _MARGIN_X, _W - _RIGHT
        y0, y1 = top + _TOP, top + _H - _BOTTOM
        lines = [list(v) for v in reps.get(name, {}).values()]
        xs = [x for x in c["x"] if math.isfinite(x)]
        ys = [v for v in c["y"] + [c["u"], 0.0] if math.isfinite(v)]
        ys += [v for line in lines for _, v in line if math.isfinite(v)]
        xmin, xmax = (min(xs), max(xs)) if xs else (0.0, 1.0)
        ymin, ymax = min(ys), max(ys)
        if xmax == xmin:
            xmin, xmax = xmin - 0.5, xmax + 0.5
        pad = 0.05 * (ymax - ymin) if ymax > ymin else 0.5 * max(1.0, abs(ymax))
        ymin, ymax = ymin - pad, ymax + pad

        def sx(x):
            return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0)

        def sy(y):
            return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0)

        def path(pts, **attrs):
            segs, cur = [], []
            for x, y in pts:
                if math.isfinite(x) and math.isfinite(y):
                    cur.append(f"{_f(sx(x))},{_f(sy(y))}")
                elif cur:
                    segs.append(cur)
                    cur = []
            if cur:
                segs.append(cur)
            a = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
            return [f'<polyline points="{" ".join(s)}" fill="none" {a}/>' for s in segs]

        parts.append(f'<g class="panel" data-component="{escape(name)}">')
        parts.append(f'<rect x="{_LEFT}" y="{y0}" width="{x1 - _LEFT}" height="{y1 - y0}" '
                     f'fill="none" stroke="#444" stroke-width="0.5"/>')
        parts.append(f'<text x="{_LEFT}" y="{top + 18}" font-weight="bold">{escape(name)}</text>')
        parts.append(f'<line x1="{_LEFT}" y1="{_f(sy(0.0))}" x2="{x1}" y2="{_f(sy(0.0))}" '
                     f'stroke="#888" stroke-width="0.75"/>')
        for line in lines:
            parts.extend(path(sorted(line), stroke="#bbbbbb", stroke_width="0.6"))
        parts.extend(path(list(zip(c["x"], c["y"])), stroke="black", stroke_width="2"))
        if math.isfinite(c["u"]):
            parts.append(f'<circle cx="{_LEFT + _MARGIN_X / 2}" cy="{_f(sy(c["u"]))}" r="3.5" fill="black"/>')
        for v in (ymin + pad, ymax - pad):
            parts.append(f'<text x="{_LEFT - 6}" y="{_f(sy(v) + 4)}" text-anchor="end">{v:.4g}</text>')
        for x in xs:
            parts.append(f'<line x1="{_f(sx(x))}" y1="{y1}" x2="{_f(sx(x))}" y2="{y1 + 4}" stroke="#444"/>')
        if xs:
            parts.append(f'<text x="{_f(sx(xs[0]))}" y="{y1 + 16}" text-anchor="middle">{xs[0]:.3g}</text>')
            parts.append(f'<text x="{_f(sx(xs[-1]))}" y="{y1 + 16}" text-anchor="middle">{xs[-1]:.3g}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
