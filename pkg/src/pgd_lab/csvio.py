"""Versioned CSV tables.

Layout::

    # pgd-lab <command> schema=<n>
    # key=value ...            (optional metadata lines)
    col_a,col_b,...
    ...rows...
    # footer lines (fits, summaries)

Floats are written with ``repr`` so the text round-trips exactly.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

SCHEMA_VERSION = 1

__all__ = ["SCHEMA_VERSION", "TableWriter", "read_table", "fmt"]


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    if hasattr(value, "item"):  # numpy scalar
        return fmt(value.item())
    return str(value)


class TableWriter:
    """Streams rows to disk and flushes after each, so aborted runs leave partial tables."""

    def __init__(self, path, command, columns, meta=None):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# pgd-lab {command} schema={SCHEMA_VERSION}\n")
        for key, value in (meta or {}).items():
            self._fh.write(f"# {key}={fmt(value)}\n")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(self.columns)
        self._fh.flush()

    def row(self, values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} fields, table has {len(self.columns)}")
        self._csv.writerow([fmt(v) for v in values])
        self._fh.flush()

    def footer(self, text):
        self._fh.write(f"# {text}\n")
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_table(path):
    """Return ``(columns, rows, comments)``; rows are lists of floats (NaN for blanks)."""
    columns, rows, comments = None, [], []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if not line:
                continue
            fields = next(csv.reader([line]))
            if columns is None:
                columns = fields
                continue
            rows.append([_parse(f) for f in fields])
    return columns or [], rows, comments


def _parse(text):
    if text == "":
        return float("nan")
    if text in ("true", "false"):
        return 1.0 if text == "true" else 0.0
    try:
        return float(text)
    except ValueError:
        return float("nan")
