from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = 1


def json_safe(obj: Any) -> Any:
    """Plain-JSON copy: numpy scalars and arrays unwrapped, NaN and inf become null."""
    if isinstance(obj, Mapping):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _json_dumps(obj: Any, *, indent: int | None = None) -> str:
    return json.dumps(json_safe(obj), ensure_ascii=False, sort_keys=True, indent=indent, allow_nan=False)


def strip_keys(obj: Any, drop: Iterable[str], suffixes: tuple[str, ...] = ()) -> Any:
    drop = set(drop)
    if isinstance(obj, Mapping):
        return {
            k: strip_keys(v, drop, suffixes)
            for k, v in obj.items()
            if k not in drop and not (suffixes and str(k).endswith(suffixes))
        }
    if isinstance(obj, list):
        return [strip_keys(v, drop, suffixes) for v in obj]
    return obj


def digest(obj: Any) -> str:
    """SHA-256 over canonical JSON; wall-clock fields are removed first."""
    body = strip_keys(json_safe(obj), {"timings", "digest", "runtime_seconds"}, suffixes=("_seconds",))
    payload = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_json(path: str | Path, obj: Any) -> Path:
    p = Path(path).expanduser()
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(_json_dumps(obj, indent=2) + "\n", encoding="utf-8")
    return p
