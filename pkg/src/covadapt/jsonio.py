"""Byte-stable JSON serialization.

All artifact files (datasets, checkpoints, reports) are emitted through
:func:`dumps_canonical` so identical in-memory content always serializes to
identical bytes: sorted keys, fixed separators, repr-based or 17-significant-
digit float formatting, trailing newline.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

from .errors import ConfigError


def _format_float(x: float, sig17: bool) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ConfigError("non-finite float cannot be serialized")
    if x == int(x) and abs(x) < 1e16:
        # keep a trailing .0 so the value reads back as float
        return f"{x:.1f}"
    return format(x, ".17g") if sig17 else repr(x)


def _encode(obj: Any, out: list[str], sig17: bool) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_format_float(obj, sig17))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out, sig17)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise ConfigError(f"JSON object keys must be strings, got {type(key)!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _encode(obj[key], out, sig17)
        out.append("}")
    else:
        raise ConfigError(f"cannot serialize {type(obj)!r}")


def dumps_canonical(obj: Any, sig17: bool = False) -> bytes:
    """Serialize ``obj`` to canonical JSON bytes.

    ``sig17`` switches float formatting from shortest-roundtrip repr to 17
    significant digits (used by checkpoints); both round-trip exactly.
    """
    out: list[str] = []
    _encode(obj, out, sig17)
    out.append("\n")
    return "".join(out).encode("utf-8")


def loads(data: bytes | str) -> Any:
    return json.loads(data)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_file(path, obj: Any, sig17: bool = False) -> bytes:
    payload = dumps_canonical(obj, sig17=sig17)
    with open(path, "wb") as fh:
        fh.write(payload)
    return payload


def read_file(path) -> Any:
    with open(path, "rb") as fh:
        return loads(fh.read())
