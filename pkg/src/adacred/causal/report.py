"""JSON report files for causal analyses."""

from __future__ import annotations

import json
import os

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [_plain(v) for v in items]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


def write_report(path, doc) -> None:
    """Write ``doc`` (nested dicts, arrays, report objects) as sorted JSON, atomically."""
    text = json.dumps(_plain(doc), indent=1, sort_keys=True, allow_nan=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text + "\n")
    os.replace(tmp, path)
