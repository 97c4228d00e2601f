"""Single-file binary checkpoints.

Layout (little-endian): magic b"MBLR", u32 format version, u64 header length,
UTF-8 JSON header (model config, model layout, preprocessor state, tensor
count), then per tensor: u32 name length, name, u32 ndim, u64 per axis, f64
data. A trailing u32 CRC32 covers every preceding byte.
"""

import json
import logging
import struct
import zlib
from pathlib import Path
from typing import Tuple

import numpy as np

from .config import ModelConfig
from .encoding import TabularPreprocessor
from .model import MambularModel

logger = logging.getLogger(__name__)

MAGIC = b"MBLR"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, corrupted or incompatible checkpoint files."""


def save_checkpoint(model: MambularModel, preprocessor: TabularPreprocessor, path: str) -> str:
    state = model.params.state_dict()
    header = {
        "format": "mambular-checkpoint",
        "model_config": model.config.to_dict(),
        "layout": {
            "n_numeric": model.n_numeric,
            "category_sizes": model.category_sizes,
            "feature_order": model.feature_order,
            "sequence_order": model.sequence_order,
            "seed": model.seed,
        },
        "preprocessor": preprocessor.to_dict(),
        "tensor_count": len(state),
    }
    header_bytes = json.dumps(header).encode("utf-8")

    chunks = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header_bytes)), header_bytes]
    for name, value in state.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(value.astype("<f8").tobytes())
    body = b"".join(chunks)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    logger.info("Saved checkpoint with %d tensors to %s", len(state), path)
    return str(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError("Checkpoint is truncated")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Tuple[MambularModel, TabularPreprocessor]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"Checkpoint not found: {path}") from None
    if len(raw) < len(MAGIC) + 16 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    reader = _Reader(body)
    reader.take(len(MAGIC))
    version, header_length = reader.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}; expected {FORMAT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"Checksum mismatch in {path}: file is corrupted or truncated")
    try:
        header = json.loads(reader.take(header_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Unreadable checkpoint header: {exc}") from None

    state = {}
    for _ in range(header["tensor_count"]):
        (name_length,) = reader.unpack("<I")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(body):
        raise CheckpointError("Trailing bytes after the last tensor")

    layout = header["layout"]
    model = MambularModel(
        ModelConfig.from_dict(header["model_config"]),
        n_numeric=layout["n_numeric"],
        category_sizes=layout["category_sizes"],
        feature_order=layout["feature_order"],
        sequence_order=layout["sequence_order"],
        seed=layout["seed"],
    )
    try:
        model.params.load_state_dict(state)
    except ValueError as exc:
        raise CheckpointError(f"Checkpoint tensors do not match the stored config: {exc}") from None
    preprocessor = TabularPreprocessor.from_dict(header["preprocessor"])
    logger.info("Loaded checkpoint %s (%d tensors)", path, len(state))
    return model, preprocessor
