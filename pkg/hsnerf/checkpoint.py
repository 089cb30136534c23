"""
The HFCK checkpoint format.

    b"HFCK" | u32 version | u32 header length | JSON header | tensor data

All integers are little-endian. The JSON header stores the field
configuration, the scene box, the step, the Adam scalars, free-form run
metadata and an index of the tensors. Tensor data follows as little-endian
IEEE-754 doubles, parameters first, then the Adam first and second moments,
in index order.
"""

from __future__ import annotations


__all__ = [
    "Checkpoint",
    "HFCK_MAGIC",
    "HFCK_VERSION",
    "save_checkpoint",
    "load_checkpoint",
]

import dataclasses
import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np

from hsnerf.errors import DataError
from hsnerf.field import Field, FieldConfig, build_field
from hsnerf.optim import AdamState
from hsnerf.sampling import SceneBox


logger = logging.getLogger(__name__)

HFCK_MAGIC = b"HFCK"
HFCK_VERSION = 1

_PREAMBLE = struct.Struct("<4sII")
_KINDS = ("param", "m", "v")


@dataclass
class Checkpoint:
    field: Field
    adam: AdamState
    step: int
    meta: Dict[str, Any] = dataclasses.field(default_factory=dict)


def save_checkpoint(
    path: Union[str, Path],
    field: Field,
    adam: AdamState,
    step: int,
    meta: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write atomically: the file appears complete or not at all."""
    path = Path(path)
    blocks: List[np.ndarray] = []
    index: List[Dict[str, Any]] = []
    offset = 0
    params = field.parameters()
    for kind in _KINDS:
        for name, tensor in params.items():
            if kind == "param":
                data = tensor.data
            else:
                moments = (
                    adam.first_moment if kind == "m" else adam.second_moment
                )
                if name not in moments:
                    continue
                data = moments[name]
            raw = np.ascontiguousarray(data, dtype="<f8")
            index.append(
                {
                    "name": name,
                    "kind": kind,
                    "shape": list(raw.shape),
                    "offset": offset,
                }
            )
            blocks.append(raw)
            offset += raw.nbytes

    header = {
        "field": field.config.to_dict(),
        "box": field.box.to_dict(),
        "step": int(step),
        "adam": {
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "step_count": adam.step_count,
        },
        "meta": dict(meta or {}),
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREAMBLE.pack(HFCK_MAGIC, HFCK_VERSION, len(head)))
        f.write(head)
        for raw in blocks:
            f.write(raw.tobytes())
    os.replace(tmp, path)
    logger.debug("wrote checkpoint %s at step %d", path, step)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < _PREAMBLE.size:
        raise DataError(f"{path}: truncated checkpoint preamble")
    magic, version, head_len = _PREAMBLE.unpack_from(raw)
    if magic != HFCK_MAGIC:
        raise DataError(f"{path}: not an HFCK checkpoint (magic {magic!r})")
    if version != HFCK_VERSION:
        raise DataError(f"{path}: unsupported HFCK version {version}")
    start = _PREAMBLE.size + head_len
    if len(raw) < start:
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[_PREAMBLE.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}") from e
    missing = {"field", "box", "step", "adam", "meta", "tensors"} - set(header)
    if missing:
        raise DataError(f"{path}: header lacks {sorted(missing)}")

    config = FieldConfig.from_dict(header["field"])
    box = SceneBox.from_dict(header["box"])
    fld = build_field(config, 0, box)
    params = fld.parameters()
    adam = AdamState(**header["adam"])

    payload = memoryview(raw)[start:]
    for entry in header["tensors"]:
        name, kind = entry["name"], entry["kind"]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        lo = entry["offset"]
        hi = lo + 8 * count
        if hi > len(payload):
            raise DataError(f"{path}: truncated tensor data at {name!r}")
        data = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(shape)
        if name not in params:
            raise DataError(f"{path}: unknown parameter {name!r}")
        if shape != params[name].shape:
            raise DataError(
                f"{path}: {name!r} has shape {shape}, "
                f"expected {params[name].shape}"
            )
        if kind == "param":
            params[name].data = data.astype(params[name].dtype)
        elif kind == "m":
            adam.first_moment[name] = data.astype(np.float64)
        elif kind == "v":
            adam.second_moment[name] = data.astype(np.float64)
        else:
            raise DataError(f"{path}: unknown tensor kind {kind!r}")
    return Checkpoint(
        field=fld, adam=adam, step=int(header["step"]), meta=header["meta"]
    )
