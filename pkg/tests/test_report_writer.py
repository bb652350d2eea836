import json
import math
import os

import numpy as np
import pytest
from pydantic import BaseModel

from tools.errors import ReportWriteError
from report_utils.report_writer import emit_report, format_float, render_csv, render_json, to_plain


class Row(BaseModel):
    name: str
    value: float
    count: int


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(1.0) == "1"
    assert format_float(math.nan) == "null"
    assert format_float(-math.inf) == "null"


def test_to_plain_reduces_numpy_and_complex():
    plain = to_plain({"a": np.array([1, 2]), "b": np.float64(0.5), "c": 1 + 2j, "d": {3, 1}})
    assert plain == {"a": [1, 2], "b": 0.5, "c": [1.0, 2.0], "d": [1, 3]}


def test_json_sorted_and_null_for_nan():
    text = render_json({"b": math.nan, "a": [1, True, None]})
    assert text == '{"a": [1, true, null], "b": null}\n'
    assert json.loads(text) == {"a": [1, True, None], "b": None}


def test_emit_is_byte_stable(tmp_path):
    report = {"rows": [Row(name="x", value=1 / 3, count=2)], "eps": 0.1}
    first = emit_report(report, "json", str(tmp_path / "a" / "r.json"))
    second = emit_report(report, "json", str(tmp_path / "b" / "r.json"))
    with open(first, "rb") as f1, open(second, "rb") as f2:
        assert f1.read() == f2.read()


def test_csv_header_and_rows():
    rows = [Row(name="x", value=0.25, count=1), Row(name="y", value=math.inf, count=2)]
    text = render_csv(rows, columns=["name", "value", "count"])
    assert text.splitlines() == ["name,value,count", "x,0.25,1", "y,null,2"]


def test_csv_default_columns_are_sorted():
    text = render_csv({"b": 1, "a": [1, 2]})
    assert text.splitlines()[0] == "a,b"
    assert text.splitlines()[1] == '"[1, 2]",1'


def test_emit_csv_creates_parents(tmp_path):
    path = emit_report([{"x": 1.5}], "csv", str(tmp_path / "deep" / "out.csv"))
    assert os.path.exists(path)
    with open(path, encoding="utf-8") as f:
        assert f.read() == "x\n1.5\n"


def test_unknown_format(tmp_path):
    with pytest.raises(ReportWriteError) as exc:
        emit_report({}, "yaml", str(tmp_path / "r.yaml"))
    assert exc.value.to_dict()["condition"] == "io_failure"


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportWriteError):
        emit_report({}, "json", str(blocker / "r.json"))
