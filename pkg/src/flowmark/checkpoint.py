"""Self-describing binary checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON
header (free-form metadata plus an ordered tensor index of names and
shapes), then the raw float32 little-endian tensor payloads in index
order. One format serves every parameter set in the package.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"FMCKPT01"


def save_checkpoint(path, meta: dict, tensors: dict) -> Path:
    """Write metadata and named float32 tensors to one file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = []
    blobs = []
    for name, tensor in tensors.items():
        # np.ascontiguousarray would promote 0-dim arrays to 1-dim
        arr = np.asarray(tensor.detach().cpu().numpy(), dtype="<f4", order="C")
        index.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "tensors": index}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path):
    """Read back (meta, tensors) written by save_checkpoint."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header in {path}: {exc}") from exc
    offset = start + header_len
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = count * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated tensor data in {path}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = torch.from_numpy(
            arr.reshape(entry["shape"]).copy()
        )
        offset += nbytes
    return header["meta"], tensors


def checkpoint_hash(path) -> str:
    """SHA-256 of the checkpoint file, as recorded in embed sidecars."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def state_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over a module's parameters and buffers, in name order."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(
            np.ascontiguousarray(state[name].detach().cpu().numpy()).tobytes()
        )
    return digest.hexdigest()
