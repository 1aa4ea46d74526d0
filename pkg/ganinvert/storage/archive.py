"""
Named-Array Archive
Single-file container: an 8-byte magic, an 8-byte little-endian header length,
a UTF-8 JSON header (metadata + array table + payload digest), then the raw
little-endian array payloads back to back.

Checkpoints and adversarial-set archives both use this container.
"""

import hashlib
import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np
import torch

from ganinvert.middleware.error_handler import CheckpointIntegrityError

logger = logging.getLogger(__name__)

MAGIC = b"GIARCH01"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")

ArrayLike = Union[np.ndarray, torch.Tensor]


def _as_little_endian(value: ArrayLike) -> np.ndarray:
    arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
    if arr.dtype.byteorder == ">" or (arr.dtype.byteorder == "=" and not np.little_endian):
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return np.require(arr, requirements="C")


def write_archive(path: Union[str, Path], arrays: Mapping[str, ArrayLike], metadata: Dict[str, Any]) -> Path:
    """
    Write named arrays plus JSON metadata to a single file.

    The file is written to a temporary sibling and renamed into place, so a
    crash never leaves a half-written archive under the final name.

    Args:
        path: Destination file
        arrays: Name → array (numpy or torch)
        metadata: JSON-serializable metadata

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    table = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = _as_little_endian(arrays[name])
        raw = arr.tobytes(order="C")
        table.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)

    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "metadata": metadata,
        "arrays": table,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)
    logger.debug(f"Wrote archive {path} ({len(table)} arrays, {len(payload)} payload bytes)")
    return path


def read_archive(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read and verify an archive.

    Args:
        path: Archive file

    Returns:
        Tuple of (name → numpy array, metadata)

    Raises:
        CheckpointIntegrityError: Bad magic, malformed header, truncated or
            altered payload
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointIntegrityError(f"cannot read {path}: {e}") from e

    prefix = len(MAGIC) + _LEN.size
    if len(blob) < prefix or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(f"{path} is not an archive (bad magic)")

    (header_len,) = _LEN.unpack_from(blob, len(MAGIC))
    header_end = prefix + header_len
    if header_end > len(blob):
        raise CheckpointIntegrityError(f"{path}: header truncated")
    try:
        header = json.loads(blob[prefix:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(f"{path}: header is not valid JSON") from e

    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointIntegrityError(f"{path}: unsupported format version {header.get('format_version')}")

    payload = blob[header_end:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointIntegrityError(
            f"{path}: payload has {len(payload)} bytes, header promises {header.get('payload_bytes')}"
        )
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointIntegrityError(f"{path}: payload digest mismatch")

    arrays: Dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = payload[start:start + nbytes]
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
    return arrays, header["metadata"]
