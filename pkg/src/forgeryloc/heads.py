"""Detection / localization heads and the training losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidArgumentError

EPS = 1e-12
DETECTION_THRESHOLD = 0.5


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must lie in (0, 1), got {self.alpha}")


class DetectionHead(nn.Module):
    """Two 1x1 conv+ReLU layers (200, 2 kernels), a fully connected layer, softmax.

    The fully connected layer consumes the flattened ``2 x M x N`` map, so the
    head is tied to one grid shape.
    """

    def __init__(self, in_dim: int, rows: int, cols: int, hidden: int = 200):
        super().__init__()
        self.in_dim, self.rows, self.cols = in_dim, rows, cols
        self.conv1 = nn.Conv2d(in_dim, hidden, 1)
        self.conv2 = nn.Conv2d(hidden, 2, 1)
        self.fc = nn.Linear(2 * rows * cols, 2)

    def logits(self, y: torch.Tensor) -> torch.Tensor:
        """``y``: ``(B, D, M, N)`` -> pre-softmax logits ``(B, 2)``."""
        _check_feature_map(y, self.in_dim, self.rows, self.cols)
        h = torch.relu(self.conv1(y))
        h = torch.relu(self.conv2(h))
        return self.fc(h.flatten(1))

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(y), dim=1)


class LocalizationHead(nn.Module):
    """Four 1x1 convolutions (192, 96, 12, 1 kernels); ReLU between, sigmoid last."""

    CHANNELS = (192, 96, 12, 1)

    def __init__(self, in_dim: int, rows: int, cols: int):
        super().__init__()
        self.in_dim, self.rows, self.cols = in_dim, rows, cols
        layers, cin = [], in_dim
        for i, cout in enumerate(self.CHANNELS):
            layers.append(nn.Conv2d(cin, cout, 1))
            if i < len(self.CHANNELS) - 1:
                layers.append(nn.ReLU())
            cin = cout
        self.layers = nn.Sequential(*layers)

    def logits(self, y: torch.Tensor) -> torch.Tensor:
        _check_feature_map(y, self.in_dim, self.rows, self.cols)
        return self.layers(y).flatten(1)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """``(B, D, M, N)`` -> block probabilities ``(B, M*N)`` in row-major order."""
        return torch.sigmoid(self.logits(y))


def _check_feature_map(y, dim, rows, cols):
    if y.ndim != 4 or tuple(y.shape[1:]) != (dim, rows, cols):
        raise InvalidArgumentError(f"expected features (B, {dim}, {rows}, {cols}), got {tuple(y.shape)}")


def _as_map(y, head) -> torch.Tensor:
    """Accept ``(M, N, D)`` / ``(P, D)`` arrays as well as ``(B, D, M, N)`` tensors."""
    t = torch.as_tensor(y) if not isinstance(y, torch.Tensor) else y
    t = t.to(next(head.parameters()).dtype)
    if t.ndim == 2 and t.shape[0] == head.rows * head.cols:
        t = t.reshape(head.rows, head.cols, -1)
    if t.ndim == 3:
        t = t.permute(2, 0, 1).unsqueeze(0)
    return t


@torch.no_grad()
def detect(head: DetectionHead, y) -> tuple[float, float]:
    """Return ``(p_pristine, p_fake)`` for one frame."""
    p = head(_as_map(y, head))
    if p.shape[0] != 1:
        raise InvalidArgumentError("detect takes a single frame")
    return float(p[0, 0]), float(p[0, 1])


def is_fake(p_fake: float, threshold: float = DETECTION_THRESHOLD) -> bool:
    return p_fake >= threshold


@torch.no_grad()
def localize(head: LocalizationHead, y) -> np.ndarray:
    """Block probabilities ``q`` (length ``M*N``) for one frame."""
    q = head(_as_map(y, head))
    if q.shape[0] != 1:
        raise InvalidArgumentError("localize takes a single frame")
    return q[0].cpu().numpy()


def _tensor(v) -> torch.Tensor:
    if not isinstance(v, torch.Tensor):
        return torch.as_tensor(np.asarray(v, dtype=np.float64))
    return v if v.is_floating_point() else v.to(torch.float64)


def detection_loss(p, w, eps: float = EPS, reduction: str = "mean"):
    """Cross-entropy between softmax pairs ``p`` and one-hot labels ``w``.

    Shapes ``(2,)`` or ``(B, 2)``; batched losses are averaged unless
    ``reduction="sum"``.
    """
    p, w = _tensor(p), _tensor(w).to(_tensor(p).dtype)
    if p.shape != w.shape or p.shape[-1] != 2:
        raise InvalidArgumentError(f"p {tuple(p.shape)} and w {tuple(w.shape)} must both end in 2")
    with torch.no_grad():
        if not torch.all((w == 0) | (w == 1)) or torch.any(w.sum(-1) != 1):
            raise InvalidArgumentError("w must be one-hot")
    loss = -(w * torch.log(p.clamp_min(eps))).sum(-1)
    if loss.ndim == 0:
        return loss
    return loss.sum() if reduction == "sum" else loss.mean()


def localization_loss(q, z, eps: float = EPS, reduction: str = "mean"):
    """Block-wise binary cross-entropy, summed over blocks.

    ``q``/``z`` are ``(K,)`` or ``(B, K)``; across frames the per-frame sums
    are averaged unless ``reduction="sum"``.
    """
    q, z = _tensor(q), _tensor(z)
    z = z.to(q.dtype)
    if q.shape != z.shape:
        raise InvalidArgumentError(f"q {tuple(q.shape)} and z {tuple(z.shape)} differ in shape")
    per_block = -z * torch.log(q.clamp_min(eps)) - (1 - z) * torch.log((1 - q).clamp_min(eps))
    per_frame = per_block.sum(-1)
    if per_frame.ndim == 0:
        return per_frame
    return per_frame.sum() if reduction == "sum" else per_frame.mean()


def joint_loss(ld, ll, weights: LossWeights | float = LossWeights()):
    alpha = weights.alpha if isinstance(weights, LossWeights) else LossWeights(float(weights)).alpha
    return alpha * ld + (1.0 - alpha) * ll


def detection_loss_from_logits(logits, labels, reduction: str = "mean"):
    """Same value as :func:`detection_loss` on ``softmax(logits)``, computed stably.

    ``labels`` holds class indices (0 pristine, 1 fake).
    """
    logp = torch.log_softmax(logits, dim=-1)
    loss = -logp.gather(-1, labels.long().unsqueeze(-1)).squeeze(-1)
    return loss.sum() if reduction == "sum" else loss.mean()


def localization_loss_from_logits(logits, z, reduction: str = "mean"):
    """Same value as :func:`localization_loss` on ``sigmoid(logits)``, computed stably."""
    per_frame = nn.functional.binary_cross_entropy_with_logits(
        logits, z.to(logits.dtype), reduction="none"
    ).sum(-1)
    return per_frame.sum() if reduction == "sum" else per_frame.mean()
