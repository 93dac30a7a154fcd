"""CSV helpers shared by every module.

Floats are written with ``repr`` so every file round-trips exactly through
:func:`read_csv`.
"""
from __future__ import annotations

import csv
import math
from typing import Iterable, Sequence

from .errors import SchemaError


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if hasattr(value, "item"):  # numpy scalar
        return fmt(value.item())
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([fmt(v) for v in row])


def _parse(value: str, path, line, column):
    if value in ("true", "false"):
        return value == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    if value == "":
        raise SchemaError(f"empty value in column {column!r}", path, line)
    return value


def read_csv(path, header: Sequence[str] | None = None, numeric: bool = True) -> list[dict]:
    """Read a CSV file into dicts.

    When ``header`` is given the file's header must match it exactly, and
    every row must have the same number of fields; violations raise
    :class:`SchemaError` carrying the 1-based line number.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise SchemaError("empty file", path, 1) from None
        if header is not None and tuple(found) != tuple(header):
            raise SchemaError(f"expected header {','.join(header)!r}, found {','.join(found)!r}", path, 1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(found):
                raise SchemaError(f"expected {len(found)} fields, found {len(rec)}", path, lineno)
            if numeric:
                row = {k: _parse(v, path, lineno, k) for k, v in zip(found, rec)}
            else:
                row = dict(zip(found, rec))
            rows.append(row)
    return rows


def detect_header(path) -> tuple[str, ...]:
    with open(path, newline="") as fh:
        try:
            return tuple(next(csv.reader(fh)))
        except StopIteration:
            raise SchemaError("empty file", path, 1) from None


def as_float(row: dict, key: str, path=None, line=None) -> float:
    v = row[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"column {key!r} is not numeric: {v!r}", path, line)
    v = float(v)
    if not math.isfinite(v):
        raise SchemaError(f"column {key!r} is not finite", path, line)
    return v
