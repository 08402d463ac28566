"""Video forgery detection and localization from per-block forensic and context embeddings."""
from .errors import (
    ConfigurationError,
    EncoderError,
    ForgeryLocError,
    GenerationError,
    InvalidArgumentError,
    UndefinedMetricError,
)
from .geometry import BlockGrid, ForgeryMask, FrameTensor, block_labels, plan_grid, tile_frame, untile_blocks
from .model import ForgeryNet, ModelConfig, build_variant

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "EncoderError", "ForgeryLocError", "GenerationError",
    "InvalidArgumentError", "UndefinedMetricError", "BlockGrid", "ForgeryMask", "FrameTensor",
    "block_labels", "plan_grid", "tile_frame", "untile_blocks", "ForgeryNet", "ModelConfig",
    "build_variant",
]
