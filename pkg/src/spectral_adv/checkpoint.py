"""SADV1 checkpoint files.

Layout (all integers 4-byte little-endian unsigned):

    SADV1 <architecture descriptor>\\n
    for each parameter, in architecture order:
        name length, name bytes (ASCII)
        rank, extents...
        row-major float64 little-endian values
"""

import logging
import struct
from pathlib import Path

import numpy as np

from spectral_adv.exceptions import CheckpointError
from spectral_adv.models import Architecture, Model

log = logging.getLogger(__name__)

MAGIC = b"SADV1"


def encode_checkpoint(model: Model) -> bytes:
    parts = [MAGIC + b" " + model.descriptor.encode("ascii") + b"\n"]
    for name, value in model.params.items():
        encoded = name.encode("ascii")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def _ascii(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError:
        raise CheckpointError(f"{what} is not ASCII: {raw!r}") from None


def decode_checkpoint(payload: bytes) -> Model:
    header_end = payload.find(b"\n")
    if header_end < 0 or not payload.startswith(MAGIC + b" "):
        raise CheckpointError("missing 'SADV1 <descriptor>' header line")
    descriptor = _ascii(payload[len(MAGIC) + 1 : header_end], "header")
    try:
        architecture = Architecture.parse(descriptor)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc

    offset = header_end + 1

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(payload):
            raise CheckpointError(f"truncated checkpoint at byte {offset}")
        chunk = payload[offset : offset + size]
        offset += size
        return chunk

    params = {}
    for _ in architecture.parameter_shapes():
        (name_length,) = struct.unpack("<I", take(4))
        name = _ascii(take(name_length), "parameter name")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape))
        values = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        params[name] = values.reshape(shape)
    if offset != len(payload):
        raise CheckpointError(
            f"{len(payload) - offset} trailing bytes after parameters"
        )
    try:
        return Model(architecture, params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def save_checkpoint(model: Model, path: str | Path) -> Path:
    """Write ``model`` to ``path``, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model))
    log.info("Wrote checkpoint %s", path)
    return path


def load_checkpoint(path: str | Path) -> Model:
    model = decode_checkpoint(Path(path).read_bytes())
    log.debug("Loaded checkpoint %s (%s)", path, model.descriptor)
    return model
