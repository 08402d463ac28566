"""Frame padding, block tiling and block-level labels.

Frames are ``H x W x 3`` float arrays in [0, 1]. A frame is padded on the
bottom/right to a multiple of the block size (edge replication) and cut into
non-overlapping square blocks enumerated in row-major order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError

DEFAULT_BLOCK_SIZE = 128


@dataclass(frozen=True)
class FrameTensor:
    pixels: np.ndarray
    frame_id: str = ""
    source_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgumentError(f"frame must be HxWx3, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise InvalidArgumentError("frame values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ForgeryMask:
    values: np.ndarray
    binarized: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidArgumentError(f"mask must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise InvalidArgumentError("mask values must lie in [0, 1]")
        if self.binarized and not np.all((v == 0.0) | (v == 1.0)):
            raise InvalidArgumentError("binarized mask holds values other than 0/1")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), binarized=True)


@dataclass(frozen=True)
class BlockGrid:
    rows: int
    cols: int
    block_size: int = DEFAULT_BLOCK_SIZE
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def num_blocks(self) -> int:
        return self.rows * self.cols

    @property
    def padded_height(self) -> int:
        return self.rows * self.block_size

    @property
    def padded_width(self) -> int:
        return self.cols * self.block_size

    @property
    def height(self) -> int:
        """Height of the unpadded frame this grid was planned for."""
        return self.padded_height - self.pad_bottom

    @property
    def width(self) -> int:
        return self.padded_width - self.pad_right

    def block_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise InvalidArgumentError(f"block ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def block_position(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.num_blocks:
            raise InvalidArgumentError(f"block index {k} outside [0, {self.num_blocks})")
        return divmod(k, self.cols)


def plan_grid(height: int, width: int, block_size: int = DEFAULT_BLOCK_SIZE) -> BlockGrid:
    """Plan the block grid covering a ``height x width`` frame.

    >>> g = plan_grid(1080, 1920)
    >>> (g.rows, g.cols, g.pad_bottom, g.pad_right)
    (9, 15, 72, 0)
    """
    if height < 1 or width < 1:
        raise InvalidArgumentError(f"frame dimensions must be positive, got {height}x{width}")
    if block_size < 8:
        raise InvalidArgumentError(f"block_size must be >= 8, got {block_size}")
    rows = math.ceil(height / block_size)
    cols = math.ceil(width / block_size)
    return BlockGrid(rows, cols, block_size, rows * block_size - height, cols * block_size - width)


def pad_frame(pixels: np.ndarray, grid: BlockGrid, mode: str = "edge") -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.shape[:2] != (grid.height, grid.width):
        raise InvalidArgumentError(
            f"frame {pixels.shape[:2]} does not match grid planned for {(grid.height, grid.width)}"
        )
    pad = [(0, grid.pad_bottom), (0, grid.pad_right)] + [(0, 0)] * (pixels.ndim - 2)
    return np.pad(pixels, pad, mode=mode)


def tile_frame(frame, grid: BlockGrid, mode: str = "edge") -> np.ndarray:
    """Cut a frame into ``grid.num_blocks`` blocks of shape ``(B, B, 3)``, row-major."""
    pixels = frame.pixels if isinstance(frame, FrameTensor) else np.asarray(frame)
    padded = pad_frame(pixels, grid, mode)
    b = grid.block_size
    c = padded.shape[2]
    blocks = padded.reshape(grid.rows, b, grid.cols, b, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(grid.num_blocks, b, b, c))


def untile_blocks(blocks: np.ndarray, grid: BlockGrid, crop: bool = True) -> np.ndarray:
    """Inverse of :func:`tile_frame`; crops the padding unless ``crop`` is false."""
    blocks = np.asarray(blocks)
    b = grid.block_size
    if blocks.shape[:3] != (grid.num_blocks, b, b):
        raise InvalidArgumentError(f"expected {grid.num_blocks} blocks of {b}x{b}, got {blocks.shape}")
    rest = blocks.shape[3:]
    full = blocks.reshape(grid.rows, grid.cols, b, b, *rest).swapaxes(1, 2)
    full = full.reshape(grid.padded_height, grid.padded_width, *rest)
    if crop:
        full = full[: grid.height, : grid.width]
    return full


def block_labels(mask: ForgeryMask, grid: BlockGrid) -> np.ndarray:
    """Fraction of tampered pixels per block, padded pixels counted as pristine.

    Returns a length ``M*N`` vector in row-major block order.
    """
    if not isinstance(mask, ForgeryMask):
        mask = ForgeryMask(np.asarray(mask), binarized=True)
    if not mask.binarized:
        raise InvalidArgumentError("block labels require a binarized mask")
    if mask.shape != (grid.height, grid.width):
        raise InvalidArgumentError(f"mask {mask.shape} does not match grid {(grid.height, grid.width)}")
    padded = pad_frame(mask.values, grid, mode="constant")
    b = grid.block_size
    counts = padded.reshape(grid.rows, b, grid.cols, b).sum(axis=(1, 3))
    return (counts / (b * b)).reshape(-1)


def read_mask(path, binarize: bool = True) -> ForgeryMask:
    """Load an 8-bit single-channel mask image (0 pristine, 255 tampered)."""
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    if binarize:
        return ForgeryMask((arr >= 0.5).astype(np.float64), binarized=True)
    return ForgeryMask(arr, binarized=False)


def write_mask(mask, path) -> Path:
    values = mask.values if isinstance(mask, ForgeryMask) else np.asarray(mask, dtype=np.float64)
    img = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    Image.fromarray(img).save(path)
    return path


def read_frame(path, frame_id: str = "", source_id: str = "") -> FrameTensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return FrameTensor(arr, frame_id=frame_id or Path(path).stem, source_id=source_id)


def write_frame(frame, path) -> Path:
    pixels = frame.pixels if isinstance(frame, FrameTensor) else np.asarray(frame)
    img = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    Image.fromarray(img).save(path)
    return path


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
