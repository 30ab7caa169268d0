"""Plain CSV writing with deterministic float formatting."""
from __future__ import annotations

import csv
import io
import os
from contextlib import contextmanager

import numpy as np


def format_float(x):
    """Shortest round-trip representation, so reruns give byte-identical files."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


@contextmanager
def _open(target):
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            yield fh
    else:
        yield target


def write_csv(target, header, rows, footer=()):
    """Write ``rows`` under ``header``; ``footer`` lines are emitted as ``# ...`` comments."""
    with _open(target) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else format_float(v) for v in row])
        for line in footer:
            fh.write(f"# {line}\n")


def csv_text(header, rows, footer=()):
    buf = io.StringIO()
    write_csv(buf, header, rows, footer)
    return buf.getvalue()


def read_csv(path):
    """Read a CSV written by :func:`write_csv`: returns ``(header, array, footer_lines)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    footer = [ln[2:] for ln in lines[1:] if ln.startswith("# ")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in body]) if body else np.empty((0, len(header)))
    return header, data, footer
