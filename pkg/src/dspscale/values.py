"""The closed value model shared by node, edge and walker state.

Values are ``None``, ``bool``, ``int``, finite ``float``, ``str``, lists of
values and ``str``-keyed dicts of values.  Everything else is rejected at the
boundary so that snapshots, checkpoints and migrations are always total.
"""

from __future__ import annotations

import json
import math
from typing import Any, Dict, List, Union

Value = Union[None, bool, int, float, str, List["Value"], Dict[str, "Value"]]


def check_value(value: Any, where: str = "value") -> None:
    if value is None or isinstance(value, (bool, int, str)):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise TypeError(f"{where}: non-finite float {value!r}")
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            check_value(item, f"{where}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise TypeError(f"{where}: map key {key!r} is not text")
            check_value(item, f"{where}.{key}")
        return
    raise TypeError(f"{where}: unsupported type {type(value).__name__}")


def clone(value: Value) -> Value:
    """Deep copy of a value (faster than ``copy.deepcopy`` for this closed model)."""
    if isinstance(value, list):
        return [clone(v) for v in value]
    if isinstance(value, dict):
        return {k: clone(v) for k, v in value.items()}
    return value


def checked_map(mapping: dict | None, where: str) -> dict:
    if mapping is None:
        return {}
    if not isinstance(mapping, dict):
        raise TypeError(f"{where}: expected a map, got {type(mapping).__name__}")
    check_value(mapping, where)
    return clone(mapping)


def type_tag(value: Value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "str"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return "map"
    raise TypeError(f"not a value: {value!r}")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def same(a: Value, b: Value) -> bool:
    """Structural equality that keeps type tags apart (``1 != 1.0 != True``)."""
    return canonical_json(a) == canonical_json(b)
