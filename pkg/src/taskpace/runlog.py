"""Run logs: JSONL with canonical float formatting, plus CSV tables.

Every line is one JSON record with a ``kind`` field (``header``, ``step``,
``eval``, ``abort``, ``summary``).  Floats are always written with 17
significant digits so parsing a line and re-serializing it reproduces
the bytes exactly; ints, strings, booleans and null are plain JSON.
Non-finite floats are rejected (a diverged run writes an ``abort`` record
instead of non-finite numbers).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import LogParseError

LOG_VERSION = 1
FLOAT_DIGITS = ".17g"


def _serialize(value, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        f = float(value)
        if not math.isfinite(f):
            raise ValueError("refusing to serialize a non-finite float")
        out.append(format(f, FLOAT_DIGITS))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, dict):
        out.append("{")
        for i, (key, val) in enumerate(value.items()):
            if not isinstance(key, str):
                raise TypeError(f"record keys must be strings, got {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _serialize(val, out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, val in enumerate(value):
            if i:
                out.append(",")
            _serialize(val, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__} in a log record")


def dumps_record(record: dict) -> str:
    """Canonical one-line JSON for a log record."""
    out: list[str] = []
    _serialize(record, out)
    return "".join(out)


def parse_line(line: str, line_number: int) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogParseError(f"invalid JSON: {exc.msg}", line_number=line_number) from None
    if not isinstance(record, dict) or "kind" not in record:
        raise LogParseError("record is not an object with a 'kind' field",
                            line_number=line_number)
    return record


def read_log(path) -> list[dict]:
    """Parse a JSONL run log; the first record must be a header."""
    records = []
    text = Path(path).read_text()
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        records.append(parse_line(line, i))
    if not records:
        raise LogParseError("empty log", line_number=1)
    if records[0]["kind"] != "header":
        raise LogParseError("first record must be a header", line_number=1)
    return records


class RunLogWriter:
    """Append-only JSONL writer with canonical formatting."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def write(self, record: dict) -> None:
        self._fh.write(dumps_record(record) + "\n")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def format_cell(value) -> str:
    """CSV cell formatting consistent with the JSONL float rule."""
    if value is None:
        return ""
    if value is True or value is False:
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        f = float(value)
        if not math.isfinite(f):
            raise ValueError("refusing to serialize a non-finite float")
        return format(f, FLOAT_DIGITS)
    return str(value)


def write_csv(path, header: list[str], rows) -> Path:
    """Plain comma-separated table; our cell values never need quoting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = [format_cell(v) for v in row]
        for cell in cells:
            if "," in cell or '"' in cell or "\n" in cell:
                raise ValueError(f"cell {cell!r} would need CSV quoting")
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise LogParseError("empty CSV", line_number=1)
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]
