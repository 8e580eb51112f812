"""Log serialization tests: canonical float formatting, byte-exact
round trips, and parse errors that carry line numbers."""

import json
import math

import numpy as np
import pytest

from taskpace.errors import LogParseError
from taskpace.runlog import (
    RunLogWriter,
    dumps_record,
    format_cell,
    parse_line,
    read_csv,
    read_log,
    write_csv,
)


class TestFloatFormatting:
    def test_seventeen_digits_round_trip(self):
        tricky = [0.1, 1 / 3, 2 / 3, 1e-300, 1e300, 5.680236616220349e-06,
                  -0.0, 123456789.123456789, math.pi]
        for x in tricky:
            line = dumps_record({"kind": "x", "v": x})
            parsed = json.loads(line)
            assert parsed["v"] == x

    def test_integral_floats_shorten(self):
        assert dumps_record({"kind": "x", "v": 3.0}) == '{"kind":"x","v":3}'

    def test_numpy_scalars_accepted(self):
        line = dumps_record({"kind": "x", "a": np.float64(0.5), "b": np.int64(7)})
        assert json.loads(line) == {"kind": "x", "a": 0.5, "b": 7}

    def test_nonfinite_rejected(self):
        for bad in (math.nan, math.inf, -math.inf):
            with pytest.raises(ValueError):
                dumps_record({"kind": "x", "v": bad})

    def test_nested_structures(self):
        record = {"kind": "step", "a": None, "b": True, "c": [1, 0.5, "s"],
                  "d": {"x": 1}}
        assert json.loads(dumps_record(record)) == record


class TestRoundTrip:
    def test_parse_then_serialize_is_byte_identical(self, tmp_path):
        path = tmp_path / "log.jsonl"
        with RunLogWriter(path) as writer:
            writer.write({"kind": "header", "config": {"w": 0.995, "alpha": 1.0}})
            writer.write({"kind": "step", "step": 1, "task": "a",
                          "d_raw": 1 / 3, "d_smooth": 0.1 + 0.2, "loss": None,
                          "event": {"step": 1, "from_task": "a", "to_task": "b",
                                    "trigger": "variation-decrease"}})
        original = path.read_text()
        rebuilt = "".join(
            dumps_record(parse_line(line, i)) + "\n"
            for i, line in enumerate(original.splitlines(), start=1)
        )
        assert rebuilt == original

    def test_read_log_requires_header(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"kind":"step","step":1}\n')
        with pytest.raises(LogParseError):
            read_log(path)

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"kind":"header"}\n{"kind": "step", broken\n')
        with pytest.raises(LogParseError) as err:
            read_log(path)
        assert err.value.line_number == 2
        assert "line 2" in str(err.value)

    def test_non_object_record_rejected(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"kind":"header"}\n[1,2,3]\n')
        with pytest.raises(LogParseError) as err:
            read_log(path)
        assert err.value.line_number == 2


class TestCsv:
    def test_round_trip_bytes(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b"], [[1, 0.5], ["x", 1 / 3]])
        original = path.read_text()
        header, rows = read_csv(path)
        write_csv(path, header, rows)
        assert path.read_text() == original

    def test_cells(self):
        assert format_cell(None) == ""
        assert format_cell(True) == "true"
        assert format_cell(0.5) == "0.5"
        assert float(format_cell(1 / 3)) == 1 / 3
