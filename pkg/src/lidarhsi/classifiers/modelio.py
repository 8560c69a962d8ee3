"""Versioned binary container for trained models.

Layout (all integers little-endian)::

    magic    8 bytes   b"LHSIMODL"
    version  u16       currently 1
    tag      u8        1 = svm, 2 = rf, 3 = rbfnn
    count    u32       number of named arrays
    count x record:
        name_len u16, name (UTF-8)
        dtype    u8    0 = float64, 1 = int64
        ndim     u8
        shape    ndim x u64
        payload  little-endian values, C order
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"LHSIMODL"
VERSION = 1
TAGS = {"svm": 1, "rf": 2, "rbfnn": 3}
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


def pack(tag: str, arrays: Mapping[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HBI", VERSION, TAGS[tag], len(arrays)))
    for name, value in arrays.items():
        value = np.asarray(value)
        code = 0 if value.dtype.kind == "f" else 1
        value = np.ascontiguousarray(value, dtype=_DTYPES[code])
        raw_name = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<BB", code, value.ndim))
        out.write(struct.pack(f"<{value.ndim}Q", *value.shape))
        out.write(value.tobytes())
    return out.getvalue()


def unpack(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise DataError("not a model file (bad magic)")
    try:
        version, tag_code, count = struct.unpack_from("<HBI", blob, 8)
        if version != VERSION:
            raise DataError(f"unsupported model version {version}")
        tag = {v: k for k, v in TAGS.items()}[tag_code]
        pos = 8 + struct.calcsize("<HBI")
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(blob):
                raise DataError("truncated model file")
            arrays[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise DataError(f"corrupt model file: {exc}") from exc
    return tag, arrays


def save_model(model, path) -> None:
    Path(path).write_bytes(model.to_bytes())


def load_model(path):
    from .forest import ForestModel
    from .rbfnn import RbfnnModel
    from .svm import SvmModel

    blob = Path(path).read_bytes()
    tag, arrays = unpack(blob)
    try:
        return {"svm": SvmModel, "rf": ForestModel, "rbfnn": RbfnnModel}[tag].from_arrays(arrays)
    except (KeyError, ValueError) as exc:
        raise DataError(f"model file {path} is missing or has malformed arrays: {exc}") from exc
