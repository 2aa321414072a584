"""Versioned binary model file.

Layout (little-endian)::

    b"RMLP" | u16 version | u32 len | JSON metadata (utf-8, sorted keys)
    u32 n_arrays | per array: u16 len, name, u8 ndim, u32 * ndim shape,
                              u8 element width (4 or 8), raw float payload
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from realmlp.config import RealMLPConfig
from realmlp.dataio import TargetStandardizer
from realmlp.model import RealMLP
from realmlp.preprocess import FittedPreprocessor
from realmlp.train import TrainedModel

MAGIC = b"RMLP"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _metadata(tm: TrainedModel) -> dict:
    m = tm.model
    return {
        "task": tm.task,
        "preset": tm.preset,
        "seed": tm.seed,
        "config": m.config.to_dict(),
        "schema": {"digest": tm.schema_digest, "columns": [list(c) for c in tm.schema_columns]},
        "classes": tm.classes,
        "categories": tm.categories,
        "preprocessor": tm.preprocessor.to_dict(),
        "standardizer": None if tm.standardizer is None else [tm.standardizer.mean, tm.standardizer.std],
        "clip_range": None if tm.clip_range is None else list(tm.clip_range),
        "network": {"n_out": m.n_out, "n_numerical": m.n_numerical, "n_other": m.n_other,
                    "cat_cards": list(m.cat_cards), "groups": m.groups},
    }


def dumps(tm: TrainedModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    meta = json.dumps(_metadata(tm), sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    params = tm.model.params
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = params[name]
        if arr.dtype not in (np.float32, np.float64):
            raise ModelFileError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(struct.pack("<B", arr.dtype.itemsize))
        buf.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return buf.getvalue()


def save(tm: TrainedModel, path) -> None:
    Path(path).write_bytes(dumps(tm))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFileError("truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> TrainedModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFileError("not a RealMLP model file")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise ModelFileError(f"unsupported model file version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    (n_arrays,) = r.unpack("<I")
    params = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (width,) = r.unpack("<B")
        if width not in (4, 8):
            raise ModelFileError(f"bad element width {width} for {name}")
        dtype = np.dtype("<f8" if width == 8 else "<f4")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(count * width), dtype=dtype).reshape(shape)
        params[name] = arr.astype(dtype.newbyteorder("="))
    if r.pos != len(data):
        raise ModelFileError("trailing bytes after model payload")

    net = meta["network"]
    model = RealMLP(RealMLPConfig.from_dict(meta["config"]), meta["task"], net["n_out"],
                    net["n_numerical"], net["n_other"], tuple(net["cat_cards"]), params, dict(net["groups"]))
    if set(model.groups) != set(params):
        raise ModelFileError("parameter names do not match the stored network description")
    std = meta["standardizer"]
    clip = meta["clip_range"]
    return TrainedModel(
        model=model,
        preprocessor=FittedPreprocessor.from_dict(meta["preprocessor"]),
        task=meta["task"],
        classes=list(meta["classes"]),
        categories=[list(c) for c in meta["categories"]],
        standardizer=None if std is None else TargetStandardizer(*std),
        clip_range=None if clip is None else tuple(clip),
        seed=meta["seed"],
        preset=meta["preset"],
        schema_digest=meta["schema"]["digest"],
        schema_columns=tuple(tuple(c) for c in meta["schema"]["columns"]),
    )


def load(path) -> TrainedModel:
    return loads(Path(path).read_bytes())
