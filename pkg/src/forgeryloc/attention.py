"""Transformer attention module, attention squeeze and feature refinement."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from .errors import InvalidArgumentError

REFINE_MODES = ("add", "concat")


@dataclass
class AttentionMapSet:
    maps: np.ndarray  # (L, M, N)

    @property
    def num_maps(self) -> int:
        return self.maps.shape[0]


class FullyConnectedStack(nn.Module):
    """Per-position replacement for the encoder stack (``depth`` Linear+ReLU layers)."""

    def __init__(self, dim, depth=6):
        super().__init__()
        layers = []
        for _ in range(depth):
            layers += [nn.Linear(dim, dim), nn.ReLU()]
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(x)


class AttentionModule(nn.Module):
    """Position embedding + encoder stack + ``num_maps`` 1x1 squeeze kernels.

    ``encoder="mlp"`` swaps the transformer for six fully connected layers.
    ``squeeze=False`` keeps the encoder output as features (no maps).
    """

    def __init__(
        self,
        rows: int,
        cols: int,
        dim: int = 768,
        depth: int = 12,
        num_heads: int = 12,
        ff_mult: int = 4,
        dropout: float = 0.0,
        num_maps: int = 3,
        sigmoid_maps: bool = False,
        encoder: str = "transformer",
        squeeze: bool = True,
    ):
        super().__init__()
        if squeeze and num_maps < 1:
            raise InvalidArgumentError("num_maps must be >= 1")
        self.rows, self.cols, self.dim = rows, cols, dim
        self.num_maps = num_maps if squeeze else 0
        self.sigmoid_maps = sigmoid_maps
        self.position_embeddings = nn.Parameter(torch.zeros(1, rows * cols, dim))
        nn.init.trunc_normal_(self.position_embeddings, std=0.02)
        if encoder == "transformer":
            layer = nn.TransformerEncoderLayer(
                dim, num_heads, dim_feedforward=ff_mult * dim, dropout=dropout,
                activation="gelu", batch_first=True, norm_first=True,
            )
            self.encoder = nn.TransformerEncoder(
                layer, depth, norm=nn.LayerNorm(dim), enable_nested_tensor=False
            )
        elif encoder == "mlp":
            self.encoder = FullyConnectedStack(dim, 6)
        else:
            raise InvalidArgumentError(f"unknown encoder kind {encoder!r}")
        self.encoder_kind = encoder
        self.squeeze = nn.Conv2d(dim, num_maps, 1) if squeeze else None

    @property
    def num_positions(self) -> int:
        return self.rows * self.cols

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, P, D)`` joint embeddings -> encoder output of the same shape."""
        if x.ndim != 3 or x.shape[1] != self.num_positions or x.shape[2] != self.dim:
            raise InvalidArgumentError(
                f"expected (B, {self.num_positions}, {self.dim}) input, got {tuple(x.shape)}"
            )
        return self.encoder(x + self.position_embeddings)

    def squeeze_maps(self, h: torch.Tensor) -> torch.Tensor:
        """Encoder output ``(B, P, D)`` -> attention maps ``(B, L, M, N)``."""
        grid = h.transpose(1, 2).reshape(h.shape[0], self.dim, self.rows, self.cols)
        m = self.squeeze(grid)
        return torch.sigmoid(m) if self.sigmoid_maps else m

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.squeeze is None:
            raise InvalidArgumentError("module was built without an attention squeeze")
        return self.squeeze_maps(self.encode(x))


def add_position(x, pe):
    """Add position embeddings to a ``(P, D)`` (or batched) embedding sequence."""
    xs = x.x if hasattr(x, "x") else x
    if isinstance(xs, torch.Tensor) or isinstance(pe, torch.Tensor):
        xs, pe = torch.as_tensor(xs), torch.as_tensor(pe)
    else:
        xs, pe = np.asarray(xs), np.asarray(pe)
    if tuple(xs.shape[-2:]) != tuple(pe.shape[-2:]):
        raise InvalidArgumentError(f"position embeddings {tuple(pe.shape)} do not match {tuple(xs.shape)}")
    return xs + pe


def refine_features(x: torch.Tensor, maps: torch.Tensor, mode: str = "add") -> torch.Tensor:
    """Weight joint features by attention maps.

    ``x``: ``(B, P, D)``; ``maps``: ``(B, L, P)``. ``add`` returns
    ``sum_l x_k * m_{k,l}`` with shape ``(B, P, D)``; ``concat`` stacks the
    ``L`` weighted copies into ``(B, P, L*D)``.
    """
    if mode not in REFINE_MODES:
        raise InvalidArgumentError(f"unknown refine mode {mode!r}; expected one of {REFINE_MODES}")
    if maps.ndim != 3 or maps.shape[0] != x.shape[0] or maps.shape[2] != x.shape[1]:
        raise InvalidArgumentError(f"maps {tuple(maps.shape)} incompatible with features {tuple(x.shape)}")
    weighted = x.unsqueeze(1) * maps.unsqueeze(-1)  # (B, L, P, D)
    if mode == "add":
        return weighted.sum(dim=1)
    return weighted.permute(0, 2, 1, 3).reshape(x.shape[0], x.shape[1], -1)


def refine(x, maps, mode: str = "add"):
    """Unbatched refinement on a joint field and an :class:`AttentionMapSet`.

    Accepts numpy or torch; returns the same kind as ``x``.
    """
    xs = x.x if hasattr(x, "x") else x
    ms = maps.maps if isinstance(maps, AttentionMapSet) else maps
    as_numpy = not isinstance(xs, torch.Tensor)
    xt = torch.as_tensor(np.array(xs) if as_numpy else xs)
    mt = torch.as_tensor(np.array(ms) if not isinstance(ms, torch.Tensor) else ms).to(xt.dtype)
    if xt.ndim != 2:
        raise InvalidArgumentError("expected a (P, D) feature field")
    mt = mt.reshape(mt.shape[0], -1)
    out = refine_features(xt.unsqueeze(0), mt.unsqueeze(0), mode)[0]
    return out.numpy() if as_numpy else out


@torch.no_grad()
def attention_maps(module: AttentionModule, x) -> AttentionMapSet:
    """Run the module on one frame's joint embeddings ``(P, D)``."""
    xs = x.x if hasattr(x, "x") else x
    dtype = module.position_embeddings.dtype
    t = torch.as_tensor(np.asarray(xs) if not isinstance(xs, torch.Tensor) else xs).to(dtype)
    if t.ndim != 2 or t.shape[0] != module.num_positions:
        raise InvalidArgumentError(
            f"expected {module.num_positions} positions, got shape {tuple(t.shape)}"
        )
    was_training = module.training
    module.eval()
    try:
        m = module(t.unsqueeze(0))[0]
    finally:
        module.train(was_training)
    return AttentionMapSet(m.cpu().numpy())


def export_attention_maps(maps, out_dir, prefix: str = "attn") -> list[Path]:
    """Write each map as an 8-bit grayscale PNG (min-max normalized per map).

    A ``<prefix>.json`` sidecar records each map's original min and max.
    """
    arr = np.asarray(maps.maps if isinstance(maps, AttentionMapSet) else maps, dtype=np.float64)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths, meta = [], []
    for i, m in enumerate(arr):
        lo, hi = float(m.min()), float(m.max())
        norm = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
        path = out_dir / f"{prefix}_{i}.png"
        Image.fromarray(np.rint(norm * 255).astype(np.uint8)).save(path)
        paths.append(path)
        meta.append({"file": path.name, "min": lo, "max": hi, "shape": list(m.shape)})
    (out_dir / f"{prefix}.json").write_text(json.dumps({"maps": meta}, indent=2))
    return paths
