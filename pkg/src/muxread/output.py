"""CSV and JSON emitters with provenance headers."""

import csv
import io
import json
import math

import numpy as np

from . import __version__


def header_lines(command, config_hash, seed, extra=()):
    lines = [f"muxread {__version__} {command}", f"config_hash: {config_hash}", f"seed: {seed}"]
    return lines + list(extra)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def csv_text(header, columns, rows):
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def matrix_rows(labels, matrix):
    return [[labels[i]] + list(matrix[i]) for i in range(len(labels))]


def long_rows(row_labels, col_labels, matrix):
    """Heatmap-ready long format: (row label, column label, value)."""
    return [(r, c, matrix[i, j]) for i, r in enumerate(row_labels) for j, c in enumerate(col_labels)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def json_text(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_text(path, text):
    if path is None or str(path) == "-":
        import sys
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
