"""Checkpoint container.

Layout::

    8 bytes   magic  b"FLCKPT01"
    8 bytes   header length n (unsigned, little-endian)
    n bytes   UTF-8 JSON header:
                {"manifest": {...},
                 "tensors": [{"name", "shape", "offset", "count"}, ...]}
    rest      tensor payloads, little-endian float32, C order,
              ``offset`` counted from the start of this section

The manifest holds the model config (dims and ablation flags) plus any run
metadata. Integer buffers are stored as float32 and cast back on load.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError

MAGIC = b"FLCKPT01"


def save_tensors(path, tensors: dict, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, payloads, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        arr = np.asarray(arr, dtype="<f4")  # keeps 0-d buffers 0-d
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        payloads.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    header = json.dumps({"manifest": manifest, "tensors": entries}, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for p in payloads:
            fh.write(p)
    tmp.replace(path)
    return path


def load_tensors(path):
    """Return ``(tensors: dict[name, np.ndarray], manifest: dict)``."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + n])
    base = 16 + n
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=e["count"], offset=start)
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return tensors, header["manifest"]


def state_to_module(module: torch.nn.Module, tensors: dict, prefix: str = ""):
    state = module.state_dict()
    missing = [k for k in state if prefix + k not in tensors]
    if missing:
        raise ConfigurationError(f"checkpoint lacks tensors: {missing[:5]}")
    new_state = {}
    for k, ref in state.items():
        arr = tensors[prefix + k]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ConfigurationError(f"shape mismatch for {k}: {arr.shape} vs {tuple(ref.shape)}")
        new_state[k] = torch.from_numpy(arr).to(ref.dtype)
    module.load_state_dict(new_state)


def save_model(path, model, manifest: dict = None, optimizer=None) -> Path:
    """Save a :class:`~forgeryloc.model.ForgeryNet` (or any module) plus optional SGD momentum."""
    manifest = dict(manifest or {})
    if hasattr(model, "config"):
        manifest.setdefault("model_config", model.config.to_dict())
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        for gi, group in enumerate(optimizer.param_groups):
            for pi, p in enumerate(group["params"]):
                buf = optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    tensors[f"optim.{gi}.{pi}.momentum_buffer"] = buf
    return save_tensors(path, tensors, manifest)


def load_model(path, optimizer=None):
    """Rebuild a ForgeryNet from a checkpoint. Returns ``(model, manifest)``."""
    from .model import ForgeryNet, ModelConfig

    tensors, manifest = load_tensors(path)
    if "model_config" not in manifest:
        raise ConfigurationError(f"{path} has no model_config in its manifest")
    model = ForgeryNet(ModelConfig.from_dict(manifest["model_config"]))
    state_to_module(model, tensors, prefix="model.")
    if optimizer is not None:
        restore_optimizer(optimizer, tensors)
    return model, manifest


def restore_optimizer(optimizer, tensors: dict):
    for gi, group in enumerate(optimizer.param_groups):
        for pi, p in enumerate(group["params"]):
            key = f"optim.{gi}.{pi}.momentum_buffer"
            if key in tensors:
                optimizer.state[p]["momentum_buffer"] = torch.from_numpy(tensors[key]).to(p.dtype)
