"""
Bit-stable report serialization.

JSON output has sorted keys and every float written with 17 significant
digits ('%.17g'); non-finite floats become null. CSV output is a header plus
one row per record with the same float format. Identical input gives
byte-identical files.
"""

import csv
import dataclasses
import io
import json
import logging
import math
import os
from enum import Enum
from typing import Any, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from tools.errors import ReportWriteError

logger = logging.getLogger("report_writer")


def to_plain(obj: Any) -> Any:
    """Reduce reports to dicts, lists, str, int, float, bool and None"""
    if isinstance(obj, BaseModel):
        return to_plain(obj.model_dump())
    if hasattr(obj, "to_dict") and callable(obj.to_dict):
        return to_plain(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_plain(dataclasses.asdict(obj))
    if isinstance(obj, Enum):
        return to_plain(obj.value)
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = [to_plain(v) for v in obj]
        return sorted(items, key=repr) if isinstance(obj, (set, frozenset)) else items
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    return obj


def format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return "%.17g" % x


def _dump(obj: Any, out: List[str]):
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(", ")
            out.append(json.dumps(key))
            out.append(": ")
            _dump(obj[key], out)
        out.append("}")
    elif isinstance(obj, list):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _dump(v, out)
        out.append("]")
    else:
        out.append(json.dumps(str(obj)))


def render_json(report: Any) -> str:
    parts: List[str] = []
    _dump(to_plain(report), parts)
    return "".join(parts) + "\n"


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (dict, list)):
        parts: List[str] = []
        _dump(value, parts)
        return "".join(parts)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def render_csv(records: Any, columns: Optional[Sequence[str]] = None) -> str:
    plain = to_plain(records)
    if isinstance(plain, dict):
        plain = [plain]
    if columns is None:
        keys = set()
        for row in plain:
            keys.update(row)
        columns = sorted(keys)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in plain:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def emit_report(report: Any, fmt: str, path: str, columns: Optional[Sequence[str]] = None) -> str:
    """
    Write a report as JSON or CSV.

    Args:
        report: pydantic model, record with to_dict, dict, or a list of these
        fmt: "json" or "csv"
        path: output file; parent directories are created
        columns: CSV column order (sorted keys by default)

    Returns:
        The path written
    """
    if fmt == "json":
        text = render_json(report)
    elif fmt == "csv":
        text = render_csv(report, columns)
    else:
        raise ReportWriteError(f"unknown report format: {fmt}", {"format": fmt})
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise ReportWriteError(f"could not write report: {e}", {"path": path})
    logger.info(f"Report written: {path}")
    return path
