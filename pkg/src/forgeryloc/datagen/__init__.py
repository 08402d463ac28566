from .corpus import DATASETS, CorpusConfig, CorpusManifest, generate_corpus
from .diffmask import diff_mask
from .encode import EncodeSettings, encode_video, find_encoder
from .manipulations import (
    PROFILES,
    ManipulationRecipe,
    apply_inplace,
    apply_splice,
    sample_manipulation,
)
from .shapes import SHAPES, MaskRecipe, render_recipe, sample_mask
from .sources import make_signature, procedural_texture, render_with_signature, synthetic_video

__all__ = [
    "DATASETS", "CorpusConfig", "CorpusManifest", "generate_corpus", "diff_mask",
    "EncodeSettings", "encode_video", "find_encoder", "PROFILES", "ManipulationRecipe",
    "apply_inplace", "apply_splice", "sample_manipulation", "SHAPES", "MaskRecipe",
    "render_recipe", "sample_mask", "make_signature", "procedural_texture",
    "render_with_signature", "synthetic_video",
]
