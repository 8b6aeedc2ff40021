"""Ordered layer container and the flat binary parameter format."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from salience.errors import DataError
from salience.nn.layers import Layer

_MAGIC = b"SLNC"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class LayerGraph:
    """Named layers in evaluation order; subclasses wire forward/backward."""

    def __init__(self):
        self.layers: dict[str, Layer] = {}

    def add(self, name: str, layer: Layer) -> Layer:
        if name in self.layers:
            raise ValueError(f"duplicate layer name {name!r}")
        self.layers[name] = layer
        return layer

    def named_params(self):
        for lname, layer in self.layers.items():
            for pname, p in layer.params.items():
                yield f"{lname}/{pname}", p

    def named_grads(self):
        for lname, layer in self.layers.items():
            for pname, g in layer.grads.items():
                yield f"{lname}/{pname}", g

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        if set(own) != set(state):
            raise DataError(f"parameter names differ: {sorted(set(own) ^ set(state))}")
        for k, v in state.items():
            if own[k].shape != v.shape:
                raise DataError(f"{k}: shape {v.shape} != {own[k].shape}")
            own[k][...] = v

    def layer_configs(self) -> list[dict]:
        return [{"name": n, **layer.config()} for n, layer in self.layers.items()]


def save_params(path, params: dict[str, np.ndarray]) -> None:
    """Flat container: magic, count, then per tensor (name, dtype tag, shape, LE payload)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.asarray(arr)
            tag = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(tag.encode("ascii"))
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise DataError(f"{path}: not a parameter container")
    pos = 4
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        tag = data[pos:pos + 2].decode("ascii")
        pos += 2
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _DTYPES[tag]
        size = int(np.prod(shape)) * dtype.itemsize
        out[name] = np.frombuffer(data[pos:pos + size], dtype=dtype).reshape(shape).copy()
        pos += size
    return out


def save_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
