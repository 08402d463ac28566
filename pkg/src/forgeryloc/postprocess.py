"""Block probabilities -> full-resolution binary mask.

Pipeline: histogram-valley threshold, flood-fill hole removal, then
bilinear upscaling (samples anchored at block centers) and a 0.5 cut.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import BlockGrid, ForgeryMask

NUM_BINS = 256
FALLBACK_THRESHOLD = 0.5


@dataclass
class ThresholdReport:
    histogram: np.ndarray
    chosen_threshold: float
    fallback_used: bool
    peak_bin: int = -1
    valley_bin: int = -1

    def to_dict(self) -> dict:
        return {
            "chosen_threshold": self.chosen_threshold,
            "fallback_used": self.fallback_used,
            "peak_bin": self.peak_bin,
            "valley_bin": self.valley_bin,
            "histogram": [int(v) for v in self.histogram],
        }


def _runs(hist):
    """Maximal runs of equal counts as ``(start, end_exclusive, value)``."""
    runs, start = [], 0
    for i in range(1, len(hist) + 1):
        if i == len(hist) or hist[i] != hist[start]:
            runs.append((start, i, hist[start]))
            start = i
    return runs


def select_threshold(q, num_bins: int = NUM_BINS, fallback: float = FALLBACK_THRESHOLD) -> ThresholdReport:
    """Threshold at the first histogram valley right of the first peak.

    Peaks and valleys are runs of equal bin counts whose neighbouring runs are
    both lower (peak) or both higher (valley); a run on the histogram border
    has only one neighbour to compare with for peaks, while a valley needs a
    higher run on both sides. Each is located at its run's lowest bin. With no
    valley the ``fallback`` threshold is used.
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.size == 0:
        raise InvalidArgumentError("cannot threshold an empty probability field")
    if np.any(q < 0) or np.any(q > 1) or not np.all(np.isfinite(q)):
        raise InvalidArgumentError("block probabilities must lie in [0, 1]")
    hist, _ = np.histogram(q, bins=num_bins, range=(0.0, 1.0))
    runs = _runs(hist)
    peak = None
    for r, (start, _, v) in enumerate(runs):
        left_ok = r == 0 or runs[r - 1][2] < v
        right_ok = r == len(runs) - 1 or runs[r + 1][2] < v
        if left_ok and right_ok and len(runs) > 1:
            peak = r
            break
    if peak is not None:
        for r in range(peak + 1, len(runs) - 1):
            v = runs[r][2]
            if runs[r - 1][2] > v and runs[r + 1][2] > v:
                b = runs[r][0]
                return ThresholdReport(hist, (b + 0.5) / num_bins, False, runs[peak][0], b)
    return ThresholdReport(hist, float(fallback), True, -1 if peak is None else runs[peak][0], -1)


def binarize_blocks(q, threshold: float) -> np.ndarray:
    return (np.asarray(q) >= threshold).astype(np.uint8)


def _check_binary(grid_values):
    a = np.asarray(grid_values)
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D block grid, got shape {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise InvalidArgumentError("block grid must be binary")
    return a.astype(np.uint8)


def fill_holes(binary_grid) -> np.ndarray:
    """Set every 0-region not 4-connected to the border to 1."""
    a = _check_binary(binary_grid)
    rows, cols = a.shape
    outside = np.zeros_like(a, dtype=bool)
    queue = deque()
    for r in range(rows):
        for c in (0, cols - 1):
            if a[r, c] == 0 and not outside[r, c]:
                outside[r, c] = True
                queue.append((r, c))
    for c in range(cols):
        for r in (0, rows - 1):
            if a[r, c] == 0 and not outside[r, c]:
                outside[r, c] = True
                queue.append((r, c))
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and a[rr, cc] == 0 and not outside[rr, cc]:
                outside[rr, cc] = True
                queue.append((rr, cc))
    return (~outside).astype(np.uint8)


def _axis_weights(n_out: int, n_blocks: int, block_size: int):
    """Source indices and weights for align-centers linear interpolation along one axis."""
    pos = (np.arange(n_out) + 0.5) / block_size - 0.5
    pos = np.clip(pos, 0.0, n_blocks - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_blocks - 1)
    return lo, hi, pos - lo


def interpolate_grid(values, grid: BlockGrid, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upscaling of an ``M x N`` grid to pixels, cropped to ``out_h x out_w``.

    Samples sit at block centers; outside the center lattice values are clamped.
    """
    v = np.asarray(values, dtype=np.float64).reshape(grid.rows, grid.cols)
    if out_h > grid.padded_height or out_w > grid.padded_width or out_h < 1 or out_w < 1:
        raise InvalidArgumentError(
            f"output {out_h}x{out_w} exceeds padded size {grid.padded_height}x{grid.padded_width}"
        )
    r0, r1, rw = _axis_weights(out_h, grid.rows, grid.block_size)
    c0, c1, cw = _axis_weights(out_w, grid.cols, grid.block_size)
    top = v[r0][:, c0] * (1 - cw) + v[r0][:, c1] * cw
    bottom = v[r1][:, c0] * (1 - cw) + v[r1][:, c1] * cw
    return top * (1 - rw)[:, None] + bottom * rw[:, None]


def upscale_mask(binary_grid, grid: BlockGrid, out_h: int, out_w: int) -> ForgeryMask:
    soft = interpolate_grid(binary_grid, grid, out_h, out_w)
    return ForgeryMask((soft >= 0.5).astype(np.float64), binarized=True)


def blocks_to_mask(q, grid: BlockGrid, out_h: int = None, out_w: int = None):
    """Full inference post-processing. Returns ``(mask, report, block_mask)``."""
    out_h = grid.height if out_h is None else out_h
    out_w = grid.width if out_w is None else out_w
    q = np.asarray(q, dtype=np.float64).reshape(grid.rows, grid.cols)
    report = select_threshold(q)
    block_mask = fill_holes(binarize_blocks(q, report.chosen_threshold))
    return upscale_mask(block_mask, grid, out_h, out_w), report, block_mask
