"""Checkpoints as one flat binary blob plus a JSON manifest.

``manifest.json`` lists every tensor with its name, shape, dtype and byte offset into
``weights.bin``; arbitrary JSON metadata (configs, iteration) rides along.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

MANIFEST = "manifest.json"
BLOB = "weights.bin"


def save_checkpoint(directory, state_dict, metadata=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / BLOB, "wb") as f:
        for name, tensor in state_dict.items():
            arr = tensor.detach().cpu().contiguous().numpy()
            data = arr.tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                            "offset": offset, "nbytes": len(data)})
            f.write(data)
            offset += len(data)
    manifest = {"format": "evsnet-checkpoint/1", "blob": BLOB, "tensors": entries,
                "metadata": metadata or {}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def read_manifest(directory):
    return json.loads((Path(directory) / MANIFEST).read_text())


def load_checkpoint(directory):
    """Return (state_dict, metadata)."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    blob = (directory / manifest["blob"]).read_bytes()
    state = {}
    for e in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.copy())
    return state, manifest["metadata"]


def manifest_param_count(directory, prefix=""):
    """Number of scalars stored under names starting with ``prefix``."""
    return int(sum(np.prod(e["shape"], dtype=np.int64) for e in read_manifest(directory)["tensors"]
                   if e["name"].startswith(prefix)))
