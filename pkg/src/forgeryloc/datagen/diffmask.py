"""Ground-truth masks recovered from an original/manipulated frame pair."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from ..geometry import ForgeryMask

DIFF_BLOCK = 16
DIFF_THRESHOLD = 0.1


def block_differences(original, manipulated, block: int = DIFF_BLOCK) -> np.ndarray:
    """Mean absolute difference over the 3 channels for each ``block x block`` cell.

    Edge cells smaller than ``block`` average over the pixels they hold.
    """
    a = np.asarray(getattr(original, "pixels", original), dtype=np.float64)
    b = np.asarray(getattr(manipulated, "pixels", manipulated), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"frame shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b).mean(axis=2)
    h, w = diff.shape
    rows, cols = -(-h // block), -(-w // block)
    padded = np.zeros((rows * block, cols * block))
    counts = np.zeros_like(padded)
    padded[:h, :w] = diff
    counts[:h, :w] = 1.0
    sums = padded.reshape(rows, block, cols, block).sum(axis=(1, 3))
    n = counts.reshape(rows, block, cols, block).sum(axis=(1, 3))
    return sums / n


def normalize_blocks(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant field maps to 1 if nonzero else 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        return (values - lo) / (hi - lo)
    return np.full_like(values, 1.0 if hi > 0 else 0.0)


def diff_mask(original, manipulated, threshold: float = DIFF_THRESHOLD, block: int = DIFF_BLOCK) -> ForgeryMask:
    """Binary mask of cells whose normalized difference exceeds ``threshold``."""
    cells = normalize_blocks(block_differences(original, manipulated, block)) > threshold
    a = np.asarray(getattr(original, "pixels", original))
    h, w = a.shape[:2]
    full = np.repeat(np.repeat(cells, block, axis=0), block, axis=1)[:h, :w]
    return ForgeryMask(full.astype(np.float64))
