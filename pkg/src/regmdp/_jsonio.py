"""Deterministic JSON writing with 17-significant-digit floats.

The stdlib encoder prints the shortest round-tripping repr, which is exact
but not fixed-width; every file this package writes uses ``%.17g`` so that
outputs are stable across platforms and byte-comparable.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _scalar(obj: Any) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _compact(obj: Any) -> str:
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_compact(x) for x in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{_scalar(str(k))}: {_compact(v)}" for k, v in obj.items()) + "}"
    return _scalar(obj)


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """Serialize ``obj``; dicts are indented, arrays and lists stay on one line."""
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        pad = " " * (indent * (_level + 1))
        items = [f"{pad}{_scalar(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * (indent * _level) + "}"
    return _compact(obj)
