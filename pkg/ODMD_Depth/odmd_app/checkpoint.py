"""DBox checkpoint files.

Layout (all little-endian):

    magic        8 bytes  b"DBOXCKPT"
    version      u32
    n            u32      observations per example
    hidden       u32      LSTM hidden size
    fc_width     u32
    fc_layers    u32
    loss_mode    u8       0 = rel, 1 = abs
    flatten      u8       0 = observation-major
    reserved     u16
    tensors      u32      manifest entry count
    manifest     per tensor: u16 name length, utf-8 name, u8 ndim, u32 dims
    payload      float32 values of every tensor in manifest order
    metadata     u32 length + utf-8 JSON object
"""

import json
import logging
import os
import struct
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import ContractError, VersionError
from .network import NetworkParams

logger = logging.getLogger(__name__)

MAGIC = b"DBOXCKPT"
VERSION = 1
HEADER = struct.Struct("<8sIIIIIBBHI")
LOSS_CODES = {"rel": 0, "abs": 1}
FLATTEN_CODES = {"observation-major": 0}


def checkpoint_bytes(params: NetworkParams, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, params.n, params.hidden_size, params.fc_width, params.fc_layers,
                         LOSS_CODES[params.loss_mode], FLATTEN_CODES["observation-major"], 0,
                         len(params.tensors))]
    for name, value in params.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
    for value in params.tensors.values():
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(parts)


def save_checkpoint(path: str, params: NetworkParams, metadata: Optional[Dict[str, Any]] = None) -> None:
    data = checkpoint_bytes(params, metadata)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
    logger.info(f"Saved checkpoint {path} ({params.count()} parameters, {len(data)} bytes)")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise VersionError(f"checkpoint truncated at offset {self.offset} (needed {size} more bytes)")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> Tuple[NetworkParams, Dict[str, Any]]:
    reader = _Reader(data)
    magic, version, n, hidden, fc_width, fc_layers, loss_code, flatten_code, _, count = \
        HEADER.unpack(reader.take(HEADER.size))
    if magic != MAGIC:
        raise VersionError(f"not a DBox checkpoint (magic {magic!r})")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    loss_modes = {v: k for k, v in LOSS_CODES.items()}
    if loss_code not in loss_modes or flatten_code not in FLATTEN_CODES.values():
        raise VersionError(f"unknown checkpoint header codes (loss {loss_code}, flatten {flatten_code})")

    manifest = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise VersionError(f"corrupted tensor name in checkpoint manifest: {e}") from None
        (ndim,) = reader.unpack("<B")
        manifest.append((name, reader.unpack(f"<{ndim}I")))

    tensors = {}
    for name, shape in manifest:
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)

    (meta_len,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VersionError(f"corrupted checkpoint metadata: {e}") from None
    if reader.offset != len(data):
        raise VersionError(f"checkpoint has {len(data) - reader.offset} trailing bytes")

    try:
        params = NetworkParams(n, loss_modes[loss_code], hidden, fc_width, fc_layers, tensors)
    except ContractError as e:
        raise VersionError(f"checkpoint manifest does not match its header: {e}") from None
    return params, metadata


def load_checkpoint(path: str) -> Tuple[NetworkParams, Dict[str, Any]]:
    with open(path, "rb") as f:
        data = f.read()
    params, metadata = parse_checkpoint(data)
    logger.info(f"Loaded checkpoint {path} (n={params.n}, loss={params.loss_mode}, hidden={params.hidden_size})")
    return params, metadata
