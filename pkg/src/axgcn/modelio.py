"""Binary model container.

Layout (all integers little-endian u32)::

    b"2SGA" | version | entry count
    per entry: name length | UTF-8 name | rank | extents...
    per entry, same order: row-major float64 little-endian data
    metadata length | UTF-8 JSON metadata (config + version tag)

Entries are the model parameters followed by the partition masks
(``masks.head`` / ``masks.body``).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tensor
from .errors import FormatError, VersionError
from .graph import PartitionedGraph
from .model import ModelConfig, TwoStreamModel

MAGIC = b"2SGA"
FORMAT_VERSION = 1
MASK_PREFIX = "masks."


def _u32(v: int) -> bytes:
    return struct.pack("<I", v)


def model_entries(model: TwoStreamModel) -> list[tuple[str, np.ndarray]]:
    entries = [(name, t.data) for name, t in model.params.items()]
    for stream in ("head", "body"):
        entries.append((MASK_PREFIX + stream, model.partitions[stream].masks))
    return entries


def dumps(model: TwoStreamModel) -> bytes:
    entries = model_entries(model)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(FORMAT_VERSION))
    buf.write(_u32(len(entries)))
    for name, arr in entries:
        raw = name.encode("utf-8")
        buf.write(_u32(len(raw)))
        buf.write(raw)
        buf.write(_u32(arr.ndim))
        for d in arr.shape:
            buf.write(_u32(d))
    for _, arr in entries:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = {"format": "2sgcn-axlstm", "version": __version__,
            "config": model.config.to_dict(),
            "strategies": {s: model.partitions[s].strategy for s in ("head", "body")}}
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(_u32(len(raw)))
    buf.write(raw)
    return buf.getvalue()


def save_model(model: TwoStreamModel, path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"model file truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_manifest(data: bytes) -> tuple[list[tuple[str, tuple[int, ...]]], dict, dict[str, np.ndarray]]:
    """Parse a model file into (manifest, metadata, arrays)."""
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise VersionError("not a model file: bad magic header")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    count = r.u32()
    manifest = []
    for _ in range(count):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("corrupt entry name") from None
        rank = r.u32()
        manifest.append((name, tuple(r.u32() for _ in range(rank))))
    arrays = {}
    for name, shape in manifest:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("corrupt metadata record") from None
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after metadata")
    if len({n for n, _ in manifest}) != len(manifest):
        raise FormatError("duplicate entry names in manifest")
    return manifest, meta, arrays


def loads(data: bytes) -> TwoStreamModel:
    manifest, meta, arrays = read_manifest(data)
    if meta.get("format") != "2sgcn-axlstm" or "config" not in meta:
        raise VersionError("metadata lacks the model version tag")
    cfg = ModelConfig.from_dict(meta["config"])
    strategies = meta.get("strategies", {})
    partitions = {}
    for stream in ("head", "body"):
        key = MASK_PREFIX + stream
        if key not in arrays:
            raise FormatError(f"missing entry {key}")
        partitions[stream] = PartitionedGraph(strategies.get(stream, "unknown"), arrays.pop(key))
    probe = TwoStreamModel.__new__(TwoStreamModel)
    probe.config, probe.partitions = cfg, partitions
    expected = probe.param_shapes()
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise FormatError(f"parameter set mismatch; missing {missing}, unexpected {extra}")
    params = {}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise FormatError(f"{name}: stored shape {arrays[name].shape}, expected {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True, name=name)
    return TwoStreamModel(cfg, params, partitions)


def load_model(path) -> TwoStreamModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from None
    return loads(data)
