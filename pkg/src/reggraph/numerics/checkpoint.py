"""JSON checkpoints of named parameter arrays.

Floats are written with Python's shortest round-trip repr, so
save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


def dumps(params: dict, meta: dict | None = None) -> str:
    tensors = {}
    for name in sorted(params):
        a = np.asarray(params[name])
        tensors[name] = {
            "dtype": str(a.dtype),
            "shape": list(a.shape),
            "values": [float(x) for x in a.ravel().tolist()],
        }
    doc = {"version": CHECKPOINT_VERSION, "meta": meta or {}, "tensors": tensors}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def loads(text: str) -> tuple[dict, dict]:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {
        name: np.array(t["values"], dtype=t["dtype"]).reshape(t["shape"])
        for name, t in doc["tensors"].items()
    }
    return params, doc["meta"]


def save(path, params: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps(params, meta), encoding="utf-8")
    return path


def load(path) -> tuple[dict, dict]:
    return loads(Path(path).read_text(encoding="utf-8"))


def checkpoint_name(model_kind: str, n_layer: int, dropout: float, seed: int) -> str:
    return f"{model_kind}-{n_layer}-{dropout}-{seed}.ckpt"
