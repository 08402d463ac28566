"""Network assembly: extractors -> attention module -> refinement -> heads.

:class:`ModelConfig` holds the dimensions and the ablation switches; the
``desk`` and ``full`` presets differ only in sizes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from .attention import REFINE_MODES, AttentionModule, refine_features
from .errors import ConfigurationError, InvalidArgumentError
from .extractors import CfeModel, FfeModel
from .geometry import BlockGrid, FrameTensor, plan_grid, tile_frame
from .heads import DetectionHead, LocalizationHead

ATTENTION_KINDS = ("transformer", "mlp", "none")


@dataclass
class ModelConfig:
    rows: int = 9
    cols: int = 15
    block_size: int = 128
    ffe_dim: int = 384
    cfe_dim: int = 384
    use_ffe: bool = True
    use_cfe: bool = True
    ffe_widths: tuple = (16, 32, 32, 64)
    cfe_stem_widths: tuple = (8, 16)
    cfe_entry_widths: tuple = (32, 64)
    constrained_first_layer: bool = True
    attention: str = "transformer"
    depth: int = 12
    num_heads: int = 12
    ff_mult: int = 4
    dropout: float = 0.0
    squeeze: bool = True
    num_maps: int = 3
    refine: str = "add"
    sigmoid_maps: bool = False

    @classmethod
    def desk(cls, rows=2, cols=3, **overrides):
        """Laptop-sized preset: 2 encoder blocks at hidden size 64."""
        base = dict(rows=rows, cols=cols, ffe_dim=32, cfe_dim=32, depth=2, num_heads=4,
                    ffe_widths=(8, 16, 16, 32), cfe_stem_widths=(8, 16), cfe_entry_widths=(16, 32))
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, rows=9, cols=15, **overrides):
        """Full-sized preset: 384+384 joint embedding, 12 encoder blocks, 12 heads."""
        base = dict(rows=rows, cols=cols, ffe_dim=384, cfe_dim=384, depth=12, num_heads=12,
                    ffe_widths=(96, 64, 64, 128), cfe_stem_widths=(32, 64), cfe_entry_widths=(128, 256))
        base.update(overrides)
        return cls(**base)

    @property
    def joint_dim(self) -> int:
        return self.ffe_dim * self.use_ffe + self.cfe_dim * self.use_cfe

    @property
    def head_dim(self) -> int:
        if self.attention != "none" and self.squeeze and self.refine == "concat":
            return self.num_maps * self.joint_dim
        return self.joint_dim

    @property
    def grid(self) -> BlockGrid:
        return BlockGrid(self.rows, self.cols, self.block_size)

    def validate(self) -> "ModelConfig":
        if not (self.use_ffe or self.use_cfe):
            raise ConfigurationError("at least one of the FFE and CFE must be enabled")
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError("grid must have at least one block")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigurationError(f"attention must be one of {ATTENTION_KINDS}")
        if self.refine not in REFINE_MODES:
            raise ConfigurationError(f"refine must be one of {REFINE_MODES}")
        if self.attention == "none" and self.squeeze:
            raise ConfigurationError("an attention squeeze needs an attention module")
        if self.squeeze and self.num_maps < 1:
            raise ConfigurationError("num_maps must be >= 1 when the squeeze is present")
        if self.attention == "transformer" and self.joint_dim % self.num_heads:
            raise ConfigurationError(f"joint_dim {self.joint_dim} not divisible by {self.num_heads} heads")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


class ForgeryNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        c = config
        self.ffe = (
            FfeModel(c.ffe_dim, c.ffe_widths, constrained=c.constrained_first_layer, block_size=c.block_size)
            if c.use_ffe else None
        )
        self.cfe = (
            CfeModel(c.cfe_dim, c.cfe_stem_widths, c.cfe_entry_widths, block_size=c.block_size)
            if c.use_cfe else None
        )
        if c.attention == "none":
            self.attention = None
        else:
            self.attention = AttentionModule(
                c.rows, c.cols, c.joint_dim, depth=c.depth, num_heads=c.num_heads, ff_mult=c.ff_mult,
                dropout=c.dropout, num_maps=c.num_maps, sigmoid_maps=c.sigmoid_maps,
                encoder=c.attention, squeeze=c.squeeze,
            )
        self.detector = DetectionHead(c.head_dim, c.rows, c.cols)
        self.localizer = LocalizationHead(c.head_dim, c.rows, c.cols)
        self._ffe_frozen = False

    @property
    def grid(self) -> BlockGrid:
        return self.config.grid

    def set_ffe_frozen(self, frozen: bool):
        """Freeze the FFE: no gradients, and batch-norm statistics held fixed."""
        self._ffe_frozen = frozen
        if self.ffe is not None:
            for p in self.ffe.parameters():
                p.requires_grad_(not frozen)
            if frozen:
                self.ffe.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        if self._ffe_frozen and self.ffe is not None:
            self.ffe.eval()
        return self

    def embed(self, blocks: torch.Tensor) -> torch.Tensor:
        """``(B, P, 3, b, b)`` blocks -> joint embeddings ``(B, P, D)``."""
        c = self.config
        if blocks.ndim != 5 or blocks.shape[1] != c.rows * c.cols or blocks.shape[2] != 3 \
                or tuple(blocks.shape[3:]) != (c.block_size, c.block_size):
            raise InvalidArgumentError(
                f"expected blocks (B, {c.rows * c.cols}, 3, {c.block_size}, {c.block_size}), "
                f"got {tuple(blocks.shape)}"
            )
        b, p = blocks.shape[:2]
        flat = blocks.reshape(b * p, *blocks.shape[2:])
        parts = []
        if self.ffe is not None:
            parts.append(self.ffe(flat))
        if self.cfe is not None:
            parts.append(self.cfe(flat))
        return torch.cat(parts, dim=1).reshape(b, p, -1)

    def forward(self, blocks: torch.Tensor) -> dict:
        """Returns ``p`` (B, 2), ``q`` (B, P), logits and ``maps`` (B, L, M, N) when present."""
        c = self.config
        x = self.embed(blocks)
        maps = None
        if self.attention is None:
            y = x
        elif self.attention.squeeze is None:
            y = self.attention.encode(x)
        else:
            maps = self.attention.squeeze_maps(self.attention.encode(x))
            y = refine_features(x, maps.flatten(2), c.refine)
        ymap = y.transpose(1, 2).reshape(y.shape[0], y.shape[2], c.rows, c.cols)
        det_logits = self.detector.logits(ymap)
        loc_logits = self.localizer.logits(ymap)
        return {
            "p": torch.softmax(det_logits, dim=1),
            "q": torch.sigmoid(loc_logits),
            "det_logits": det_logits,
            "loc_logits": loc_logits,
            "maps": maps,
        }

    def frame_blocks(self, frame) -> torch.Tensor:
        """Tile one frame into a ``(1, P, 3, b, b)`` tensor for this network's grid."""
        pixels = frame.pixels if isinstance(frame, FrameTensor) else np.asarray(frame)
        grid = plan_grid(pixels.shape[0], pixels.shape[1], self.config.block_size)
        if (grid.rows, grid.cols) != (self.config.rows, self.config.cols):
            raise InvalidArgumentError(
                f"frame {pixels.shape[:2]} tiles to {grid.rows}x{grid.cols}, "
                f"network expects {self.config.rows}x{self.config.cols}"
            )
        blocks = tile_frame(pixels, grid)
        t = torch.from_numpy(np.ascontiguousarray(blocks.transpose(0, 3, 1, 2)))
        dtype = next(self.parameters()).dtype
        return t.to(dtype).unsqueeze(0)

    @torch.no_grad()
    def predict(self, frame) -> dict:
        """Single-frame inference in evaluation mode; numpy outputs."""
        was_training = self.training
        self.eval()
        try:
            out = self(self.frame_blocks(frame))
        finally:
            self.train(was_training)
        maps = out["maps"]
        return {
            "p_pristine": float(out["p"][0, 0]),
            "p_fake": float(out["p"][0, 1]),
            "q": out["q"][0].cpu().numpy(),
            "maps": None if maps is None else maps[0].cpu().numpy(),
        }

    def enforce_constraints(self):
        # a frozen FFE received no update; re-normalizing would only add rounding drift
        if self.ffe is not None and not self._ffe_frozen:
            self.ffe.enforce_constraint()


VARIANTS = {
    "proposed": {},
    "no-ffe": {"use_ffe": False},
    "no-cfe": {"use_cfe": False},
    "no-transformer-module": {"attention": "none", "squeeze": False},
    "no-transformer": {"attention": "mlp"},
    "no-attention-squeeze": {"squeeze": False},
    "1-attention-map": {"num_maps": 1},
    "10-attention-maps": {"num_maps": 10},
    "concat-refine": {"refine": "concat"},
}


def build_variant(flags: Union[str, dict, None] = "proposed", base: Optional[ModelConfig] = None) -> ForgeryNet:
    """Construct an ablation variant.

    ``flags`` is a name from :data:`VARIANTS` or a dict of
    :class:`ModelConfig` overrides applied to ``base`` (desk preset by default).
    """
    base = base or ModelConfig.desk()
    if flags is None:
        flags = "proposed"
    if isinstance(flags, str):
        if flags not in VARIANTS:
            raise ConfigurationError(f"unknown variant {flags!r}; choose from {sorted(VARIANTS)}")
        overrides = VARIANTS[flags]
    else:
        overrides = dict(flags)
        bad = set(overrides) - set(ModelConfig.__dataclass_fields__)
        if bad:
            raise ConfigurationError(f"unknown variant flags: {sorted(bad)}")
        if overrides.get("attention") == "none" and overrides.get("squeeze", False):
            raise ConfigurationError("attention squeeze requires an attention module")
        if "num_maps" in overrides and overrides.get("squeeze") is False:
            raise ConfigurationError("an attention-map count requires the squeeze layer")
    return ForgeryNet(replace(base, **overrides))
