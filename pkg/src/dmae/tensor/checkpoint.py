"""Checkpoint format: ``manifest.json`` plus one little-endian float32 blob.

The manifest lists every parameter in blob order::

    {"format_version": 1, "dtype": "float32<", "seed": 0,
     "hyperparameters": {...},
     "parameters": [{"name": "encoder.embed.weight", "shape": [192, 64]}, ...]}
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Optional

import numpy as np

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"
_LE_F32 = np.dtype("<f4")


def save_checkpoint(directory, state: dict[str, np.ndarray], hyperparameters: Optional[dict] = None,
                    seed: Optional[int] = None, extra: Optional[dict[str, Any]] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    for name, arr in state.items():
        arr = np.asarray(arr)
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "seed": seed,
        "hyperparameters": hyperparameters or {},
        "parameters": entries,
        "blob": BLOB,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        manifest.update(extra)
    (directory / BLOB).write_bytes(blob)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    flat = np.frombuffer((directory / manifest.get("blob", BLOB)).read_bytes(), dtype=_LE_F32)
    state = {}
    offset = 0
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        if offset + n > flat.size:
            raise ValueError("checkpoint blob is shorter than the manifest declares")
        state[entry["name"]] = flat[offset:offset + n].astype(np.float32).reshape(shape)
        offset += n
    if offset != flat.size:
        raise ValueError("checkpoint blob has trailing data")
    return state, manifest
