"""Checkpoint serialization: one self-describing .npz written atomically."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np


@dataclass
class CheckpointData:
    params: dict[str, np.ndarray]
    adam_slots: dict[str, tuple[np.ndarray, np.ndarray]]
    meta: dict


def save_checkpoint(path, params: dict[str, np.ndarray],
                    adam_slots: dict[str, tuple[np.ndarray, np.ndarray]],
                    meta: dict) -> None:
    """Write params, optimizer moments and metadata; temp file + rename."""
    arrays = {f"param:{name}": np.asarray(v) for name, v in params.items()}
    for name, (m, v) in adam_slots.items():
        arrays[f"adam_m:{name}"] = np.asarray(m)
        arrays[f"adam_v:{name}"] = np.asarray(v)
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> CheckpointData:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["meta"]).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        adam_m: dict[str, np.ndarray] = {}
        adam_v: dict[str, np.ndarray] = {}
        for key in archive.files:
            if key.startswith("param:"):
                params[key[len("param:"):]] = archive[key]
            elif key.startswith("adam_m:"):
                adam_m[key[len("adam_m:"):]] = archive[key]
            elif key.startswith("adam_v:"):
                adam_v[key[len("adam_v:"):]] = archive[key]
    slots = {name: (adam_m[name], adam_v[name]) for name in adam_m}
    return CheckpointData(params=params, adam_slots=slots, meta=meta)
