"""Per-block feature extractors.

* :class:`FfeModel` - forensic extractor with a prediction-error (constrained)
  first convolution, pretrained as a camera-signature classifier.
* :class:`CfeModel` - context extractor built from depthwise-separable
  convolutions with a single middle-flow residual block.

Both map a batch of ``(K, 3, B, B)`` blocks to ``(K, dim)`` embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import InvalidArgumentError
from .geometry import BlockGrid

EPS = 1e-12


class ConstrainedConv2d(nn.Conv2d):
    """Convolution whose kernels predict the center pixel from its neighbours.

    Every 2-D kernel slice has center tap -1 and its remaining taps sum to 1.
    :meth:`constrain` must be called after each optimizer step.
    """

    def __init__(self, in_channels, out_channels, kernel_size=5):
        if kernel_size % 2 == 0:
            raise InvalidArgumentError("constrained kernel size must be odd")
        super().__init__(in_channels, out_channels, kernel_size, padding=kernel_size // 2, bias=False)
        # positive taps keep the normalizing sum well away from zero
        nn.init.uniform_(self.weight, 0.0, 1.0)
        self.constrain()

    @torch.no_grad()
    def constrain(self):
        w = self.weight
        c = self.kernel_size[0] // 2
        w[:, :, c, c] = 0.0
        s = w.sum(dim=(2, 3), keepdim=True)
        s = torch.where(s.abs() < 1e-6, torch.full_like(s, 1e-6), s)
        w.div_(s)
        w[:, :, c, c] = -1.0

    @torch.no_grad()
    def constraint_violation(self) -> float:
        """Largest per-kernel deviation from the constraint, relative to ``1 + sum|w|``.

        The scale makes the measure independent of float32 rounding on kernels
        with large taps.
        """
        w = self.weight.double()
        c = self.kernel_size[0] // 2
        scale = 1.0 + w.abs().sum(dim=(2, 3))
        center = (w[:, :, c, c] + 1.0).abs()
        rest = (w.sum(dim=(2, 3)) - w[:, :, c, c] - 1.0).abs()
        return float((torch.maximum(center, rest) / scale).max())


class FfeModel(nn.Module):
    """Forensic feature extractor (compact camera-model CNN).

    ``widths`` sets the channel count of the four trunk convolutions.
    """

    def __init__(
        self,
        embedding_dim: int = 384,
        widths: Sequence[int] = (16, 32, 32, 64),
        num_classes: Optional[int] = None,
        constrained: bool = True,
        block_size: int = 128,
    ):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.embedding_dim = embedding_dim
        self.block_size = block_size
        self.constrained = constrained
        first = ConstrainedConv2d(3, 3, 5) if constrained else nn.Conv2d(3, 3, 5, padding=2, bias=False)
        self.trunk = nn.Sequential(
            first,
            nn.Conv2d(3, w1, 7, stride=2, padding=3),
            nn.BatchNorm2d(w1),
            nn.Tanh(),
            nn.MaxPool2d(3, stride=2, padding=1),
            nn.Conv2d(w1, w2, 5, padding=2),
            nn.BatchNorm2d(w2),
            nn.Tanh(),
            nn.MaxPool2d(3, stride=2, padding=1),
            nn.Conv2d(w2, w3, 5, padding=2),
            nn.BatchNorm2d(w3),
            nn.Tanh(),
            nn.MaxPool2d(3, stride=2, padding=1),
            nn.Conv2d(w3, w4, 1),
            nn.BatchNorm2d(w4),
            nn.Tanh(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.embed = nn.Sequential(nn.Linear(w4, embedding_dim), nn.Tanh())
        # softmax head, only used while pretraining
        self.classifier = nn.Linear(embedding_dim, num_classes) if num_classes else None

    @property
    def first_layer(self) -> nn.Conv2d:
        return self.trunk[0]

    def enforce_constraint(self):
        if self.constrained:
            self.first_layer.constrain()

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        return self.embed(self.trunk(blocks))

    def classify(self, blocks: torch.Tensor) -> torch.Tensor:
        """Class logits; requires the pretraining head."""
        if self.classifier is None:
            raise InvalidArgumentError("classification head has been discarded")
        return self.classifier(self.forward(blocks))

    def strip_head(self):
        self.classifier = None
        return self


class SeparableConv2d(nn.Module):
    def __init__(self, cin, cout, kernel_size=3):
        super().__init__()
        self.depthwise = nn.Conv2d(cin, cin, kernel_size, padding=kernel_size // 2, groups=cin, bias=False)
        self.pointwise = nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class EntryBlock(nn.Module):
    def __init__(self, cin, cout, first_relu=True):
        super().__init__()
        layers = [nn.ReLU()] if first_relu else []
        layers += [
            SeparableConv2d(cin, cout),
            nn.BatchNorm2d(cout),
            nn.ReLU(),
            SeparableConv2d(cout, cout),
            nn.BatchNorm2d(cout),
            nn.MaxPool2d(3, stride=2, padding=1),
        ]
        self.body = nn.Sequential(*layers)
        self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=2, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        return self.body(x) + self.skip(x)


class MiddleBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        layers = []
        for _ in range(3):
            layers += [nn.ReLU(), SeparableConv2d(channels, channels), nn.BatchNorm2d(channels)]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return x + self.body(x)


class CfeModel(nn.Module):
    """Context feature extractor: separable entry flow, one middle block, 1x1 reduction."""

    def __init__(
        self,
        embedding_dim: int = 384,
        stem_widths: Sequence[int] = (8, 16),
        entry_widths: Sequence[int] = (32, 64),
        block_size: int = 128,
    ):
        super().__init__()
        s1, s2 = stem_widths
        self.embedding_dim = embedding_dim
        self.block_size = block_size
        self.stem = nn.Sequential(
            nn.Conv2d(3, s1, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(s1),
            nn.ReLU(),
            nn.Conv2d(s1, s2, 3, padding=1, bias=False),
            nn.BatchNorm2d(s2),
            nn.ReLU(),
        )
        entry, cin = [], s2
        for i, cout in enumerate(entry_widths):
            entry.append(EntryBlock(cin, cout, first_relu=i > 0))
            cin = cout
        self.entry = nn.Sequential(*entry)
        self.middle = MiddleBlock(cin)
        self.reduce = nn.Sequential(
            nn.ReLU(), nn.Conv2d(cin, embedding_dim, 1), nn.AdaptiveAvgPool2d(1), nn.Flatten()
        )

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        return self.reduce(self.middle(self.entry(self.stem(blocks))))


@dataclass
class JointEmbeddingField:
    """Per-block joint embeddings ``x`` (``M*N x joint_dim``) on a grid."""

    x: np.ndarray
    grid: Optional[BlockGrid] = None
    ffe_dim: int = 0
    cfe_dim: int = 0

    @property
    def joint_dim(self) -> int:
        return self.x.shape[1]

    def split(self):
        return self.x[:, : self.ffe_dim], self.x[:, self.ffe_dim :]


def blocks_to_tensor(blocks, block_size: int, dtype=torch.float32) -> torch.Tensor:
    """``(K, B, B, 3)`` numpy blocks -> ``(K, 3, B, B)`` tensor, validating the shape."""
    if isinstance(blocks, torch.Tensor):
        t = blocks
        if t.ndim == 4 and t.shape[1] == 3 and t.shape[2:] == (block_size, block_size):
            return t.to(dtype)
    else:
        arr = np.asarray(blocks)
        if arr.ndim == 4 and arr.shape[1:] == (block_size, block_size, 3):
            return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)
        t = arr
    raise InvalidArgumentError(
        f"expected blocks of shape (K, {block_size}, {block_size}, 3), got {tuple(t.shape)}"
    )


@torch.no_grad()
def _extract(model: nn.Module, blocks, batch_size: int) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        t = blocks_to_tensor(blocks, model.block_size, dtype)
        outs = [model(t[i : i + batch_size]) for i in range(0, len(t), batch_size)]
        if not outs:
            return np.zeros((0, model.embedding_dim), dtype=np.float32)
        return torch.cat(outs).cpu().numpy()
    finally:
        model.train(was_training)


def extract_forensic(model: FfeModel, blocks, batch_size: int = 64) -> np.ndarray:
    """Forensic embeddings ``f_k`` for each block (evaluation mode, no softmax head)."""
    return _extract(model, blocks, batch_size)


def extract_context(model: CfeModel, blocks, batch_size: int = 64) -> np.ndarray:
    """Context embeddings ``c_k`` for each block (evaluation mode)."""
    return _extract(model, blocks, batch_size)


def join_embeddings(f, c, grid: Optional[BlockGrid] = None) -> JointEmbeddingField:
    """Concatenate forensic and context embeddings block by block (f first).

    Either side may be ``None`` for the single-extractor ablations.
    """
    if f is None and c is None:
        raise InvalidArgumentError("at least one embedding set is required")
    parts = [np.asarray(p) for p in (f, c) if p is not None]
    if any(p.ndim != 2 for p in parts):
        raise InvalidArgumentError("embeddings must be 2-D (blocks x dim)")
    if len(parts) == 2 and parts[0].shape[0] != parts[1].shape[0]:
        raise InvalidArgumentError(
            f"block count mismatch: {parts[0].shape[0]} forensic vs {parts[1].shape[0]} context"
        )
    if grid is not None and parts[0].shape[0] != grid.num_blocks:
        raise InvalidArgumentError(f"expected {grid.num_blocks} embeddings, got {parts[0].shape[0]}")
    x = np.concatenate(parts, axis=1)
    ffe_dim = 0 if f is None else parts[0].shape[1]
    return JointEmbeddingField(x, grid, ffe_dim=ffe_dim, cfe_dim=x.shape[1] - ffe_dim)


def ffe_pretrain_loss(probs, true_class, eps: float = EPS):
    """Camera-model cross-entropy on post-softmax outputs.

    ``probs`` is ``(n,)`` or ``(batch, n)``; ``true_class`` an index or a
    vector of indices. Batched inputs return the batch mean.
    """
    p = torch.as_tensor(probs)
    if not p.is_floating_point():
        p = p.to(torch.float64)
    single = p.ndim == 1
    if single:
        p = p.unsqueeze(0)
    t = torch.as_tensor(true_class, dtype=torch.long, device=p.device).reshape(-1)
    if t.numel() != p.shape[0]:
        raise InvalidArgumentError("one true class per probability vector is required")
    n = p.shape[1]
    if torch.any(t < 0) or torch.any(t >= n):
        raise InvalidArgumentError(f"true class outside [0, {n})")
    with torch.no_grad():
        tol = 1e-6 if p.dtype == torch.float64 else 1e-5
        if torch.any((p.sum(dim=1) - 1.0).abs() > tol):
            raise InvalidArgumentError("probabilities must sum to 1")
    picked = p.gather(1, t.unsqueeze(1)).squeeze(1)
    loss = -torch.log(picked.clamp_min(eps))
    return loss[0] if single else loss.mean()
