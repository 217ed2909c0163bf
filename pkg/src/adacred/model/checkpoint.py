"""Versioned binary checkpoints: JSON header plus raw little-endian arrays.

Layout::

    4s   magic b"ADCK"
    u16  version
    u32  header length, then UTF-8 JSON header
    raw array bytes, concatenated in header order

The header's ``arrays`` list names each array with its dtype and shape;
everything else in the header (model config, optimizer counters, RNG
states, training progress) is free-form JSON supplied by the caller.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import FormatError
from .config import ModelConfig
from .network import AdaCredModel

MAGIC = b"ADCK"
VERSION = 1


def save_arrays(path, arrays: dict, header: dict) -> None:
    """Write atomically (temp file + rename) so a crash never leaves half a file."""
    specs, blobs = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        blobs.append(le.tobytes())
    doc = dict(header)
    doc["arrays"] = specs
    head = json.dumps(doc, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(head)) + head + b"".join(blobs))
    os.replace(tmp, path)


def load_arrays(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError("bad magic bytes, not a checkpoint", 0)
    if len(buf) < 10:
        raise FormatError("truncated checkpoint header", len(buf))
    version, hlen = struct.unpack("<HI", buf[4:10])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    if 10 + hlen > len(buf):
        raise FormatError("truncated checkpoint header", len(buf))
    try:
        header = json.loads(buf[10:10 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}", 10) from None
    pos = 10 + hlen
    arrays = {}
    for spec in header.pop("arrays"):
        dt = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"])) * dt.itemsize
        if pos + n > len(buf):
            raise FormatError(f"truncated array {spec['name']}", pos)
        arr = np.frombuffer(buf[pos:pos + n], dtype=dt).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dt.newbyteorder("="))
        pos += n
    if pos != len(buf):
        raise FormatError("trailing bytes in checkpoint", pos)
    return arrays, header


def save_model(path, model: AdaCredModel, extra_arrays: dict | None = None,
               extra_header: dict | None = None) -> None:
    arrays = {f"param/{k}": v.data for k, v in model.parameters().items()}
    arrays.update(extra_arrays or {})
    header = {"config": model.cfg.to_dict(), "stage_completed": model.stage_completed}
    header.update(extra_header or {})
    save_arrays(path, arrays, header)


def load_model(path):
    """Rebuild the model from its config and copy every parameter bit-exactly.

    Returns ``(model, other_arrays, header)``.
    """
    arrays, header = load_arrays(path)
    model = AdaCredModel(ModelConfig.from_dict(header["config"]))
    params = model.parameters()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise FormatError(f"checkpoint lacks parameter {name}", 0)
        if arrays[key].shape != p.shape:
            raise FormatError(f"parameter {name} has shape {arrays[key].shape}, model {p.shape}", 0)
        p.data = arrays.pop(key).astype(p.dtype, copy=True)
    model.stage_completed = int(header.get("stage_completed", 0))
    return model, arrays, header
