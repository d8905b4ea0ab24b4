"""Checkpoint persistence.

Format: a directory holding ``manifest.json`` and ``weights.bin``.
The manifest is ``{"version": 1, "params": [{"name", "shape", "offset",
"len"}]}`` with byte offsets/lengths into the blob; the blob is the
concatenation of each parameter as little-endian float32, row-major.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .engine import Tensor
from .optim import ParameterStore

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(store: ParameterStore, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, p in store.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(p.data.shape), "offset": offset, "len": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"version": FORMAT_VERSION, "params": entries}
    (path / "weights.bin").write_bytes(b"".join(chunks))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path) -> ParameterStore:
    """Read a checkpoint; any inconsistency raises before a store is built."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    blob_path = path / "weights.bin"
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"checkpoint incomplete at {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint version {manifest.get('version')!r}")
    blob = blob_path.read_bytes()

    entries = manifest.get("params", [])
    seen = set()
    total = 0
    for e in entries:
        if e["name"] in seen:
            raise CheckpointError(f"duplicate parameter name {e['name']!r} in manifest")
        seen.add(e["name"])
        n_vals = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["len"] != 4 * n_vals:
            raise CheckpointError(f"parameter {e['name']!r}: len {e['len']} != 4 * prod(shape)")
        if e["offset"] + e["len"] > len(blob):
            raise CheckpointError(f"parameter {e['name']!r} extends past end of weights.bin")
        total += e["len"]
    if total != len(blob):
        raise CheckpointError(f"weights.bin has {len(blob)} bytes, manifest accounts for {total}")

    store = ParameterStore()
    for e in entries:
        arr = np.frombuffer(blob, dtype="<f4", count=e["len"] // 4, offset=e["offset"])
        data = arr.reshape(e["shape"]).astype(np.float32, copy=True)
        store.add(e["name"], Tensor(data, requires_grad=True))
    return store
