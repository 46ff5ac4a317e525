"""Versioned ``.npz`` checkpoints of named networks plus JSON metadata."""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np

from .mlp import MlpNet

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION"]

CHECKPOINT_VERSION = 1


def save_checkpoint(path, nets: dict[str, MlpNet], meta: dict | None = None) -> None:
    arrays = {"format_version": np.array(CHECKPOINT_VERSION), "meta": np.array(json.dumps(meta or {}, sort_keys=True))}
    for name, net in nets.items():
        arrays[f"{name}/sizes"] = np.array(net.sizes, dtype=np.int64)
        arrays[f"{name}/out_act"] = np.array(net.out_act)
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}/W{k}"] = w
            arrays[f"{name}/b{k}"] = b
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, MlpNet], dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(str(data["meta"]))
        names = sorted({k.split("/")[0] for k in data.files if "/" in k})
        nets = {}
        for name in names:
            sizes = tuple(int(x) for x in data[f"{name}/sizes"])
            n = len(sizes) - 1
            nets[name] = MlpNet(
                sizes,
                [data[f"{name}/W{k}"].copy() for k in range(n)],
                [data[f"{name}/b{k}"].copy() for k in range(n)],
                str(data[f"{name}/out_act"]),
            )
    return nets, meta
