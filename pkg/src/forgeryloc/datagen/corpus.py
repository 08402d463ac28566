"""Synthetic corpus generation and the line-delimited manifest.

Each item is a short "video" (or a single image for the I* datasets) rendered
by one simulated camera. Manipulated items get a compound-shape mask and
either spliced content from another camera's video (``*CMS``) or an in-place
edit with the visible (``*PVM``) or invisible (``*PIM``) profile. Every item
draws from its own RNG stream keyed by ``(seed, dataset index, item index)``
so results never depend on worker count or order.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, InvalidArgumentError
from ..geometry import ForgeryMask, read_frame, read_mask, write_mask
from .encode import EncodeSettings, encode_video
from .manipulations import apply_inplace, apply_splice, sample_manipulation
from .shapes import sample_mask
from .sources import make_signature, synthetic_video

# name -> (kind, profile, is_video)
DATASETS = {
    "VCMS": ("splice", None, True),
    "VPVM": ("inplace", "visible", True),
    "VPIM": ("inplace", "invisible", True),
    "ICMS": ("splice", None, False),
    "IPVM": ("inplace", "visible", False),
    "IPIM": ("inplace", "invisible", False),
}
# Table 1 letters
DATASET_LETTERS = {"A": "VCMS", "B": "VPVM", "C": "VPIM", "D": "ICMS", "E": "IPVM", "F": "IPIM"}
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.jsonl"


@dataclass
class CorpusConfig:
    datasets: tuple = ("VCMS", "VPVM", "VPIM")
    videos_per_dataset: int = 16
    frames_per_video: int = 4
    height: int = 256
    width: int = 384
    seed: int = 0
    codec: str = "lossless"
    crf: int = 23
    fps: int = 30
    manipulated_fraction: float = 0.5
    split_counts: tuple = None  # explicit (train, val, test); else proportional 3200:520:280
    num_cameras: int = 4
    workers: int = 1

    @classmethod
    def desk(cls, **overrides):
        return replace(cls(), **overrides)

    @classmethod
    def full(cls, **overrides):
        base = cls(videos_per_dataset=4000, frames_per_video=30, height=1080, width=1920,
                   codec="h264", split_counts=(3200, 520, 280))
        return replace(base, **overrides)

    def validate(self):
        unknown = [d for d in self.datasets if d not in DATASETS]
        if unknown:
            raise ConfigurationError(f"unknown datasets {unknown}; known: {sorted(DATASETS)}")
        if self.videos_per_dataset < 1 or self.frames_per_video < 1:
            raise ConfigurationError("videos_per_dataset and frames_per_video must be >= 1")
        if self.height < 128 or self.width < 128:
            raise ConfigurationError("frames must be at least 128x128")
        if not 0.0 <= self.manipulated_fraction <= 1.0:
            raise ConfigurationError("manipulated_fraction must lie in [0, 1]")
        if self.codec not in ("lossless", "h264"):
            raise ConfigurationError(f"unknown codec {self.codec!r}")
        if self.split_counts is not None and sum(self.split_counts) != self.videos_per_dataset:
            raise ConfigurationError("split_counts must add up to videos_per_dataset")
        if self.num_cameras < 2:
            raise ConfigurationError("splicing needs at least two simulated cameras")
        return self

    def splits(self) -> list:
        n = self.videos_per_dataset
        if self.split_counts is not None:
            counts = list(self.split_counts)
        else:
            train = int(round(n * 3200 / 4000))
            val = int(round(n * 520 / 4000))
            counts = [train, val, n - train - val]
        out = []
        for name, c in zip(SPLITS, counts):
            out += [name] * c
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = list(self.datasets)
        if self.split_counts is not None:
            d["split_counts"] = list(self.split_counts)
        return d


def item_rng(seed: int, dataset_index: int, item_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(dataset_index, item_index)))


def _is_manipulated(i: int, fraction: float) -> bool:
    # evenly interleaved so every split gets its share
    return math.floor((i + 1) * fraction) > math.floor(i * fraction)


def _make_item(args):
    cfg, root, di, name, i, split = args
    kind, profile, is_video = DATASETS[name]
    rng = item_rng(cfg.seed, di, i)
    n_frames = cfg.frames_per_video if is_video else 1
    camera = int(rng.integers(cfg.num_cameras))
    frames = synthetic_video(cfg.height, cfg.width, n_frames, rng, make_signature(camera))
    manipulated = _is_manipulated(i, cfg.manipulated_fraction)
    item_id = f"{name}_{i:05d}"
    item_dir = Path(root) / name / item_id
    item_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "id": item_id, "dataset": name, "split": split, "manipulated": manipulated,
        "kind": kind if manipulated else "authentic", "camera": camera,
        "seed": [cfg.seed, di, i], "recipe": None,
    }
    if manipulated:
        mask, mask_recipe = sample_mask(cfg.height, cfg.width, rng)
        recipe = {"mask": mask_recipe.to_dict()}
        if kind == "splice":
            other = int((camera + 1 + rng.integers(cfg.num_cameras - 1)) % cfg.num_cameras)
            donor = synthetic_video(cfg.height, cfg.width, n_frames, rng, make_signature(other))
            frames = [apply_splice(d, s, mask) for d, s in zip(frames, donor)]
            recipe["source_camera"] = other
        else:
            manip = sample_manipulation(profile, rng)
            frames = [apply_inplace(f, mask, manip, rng) for f in frames]
            recipe["manipulation"] = manip.to_dict()
        record["recipe"] = recipe
    else:
        mask = ForgeryMask.zeros(cfg.height, cfg.width)
    mask_path = item_dir / "mask.png"
    write_mask(mask, mask_path)

    codec = cfg.codec if is_video else "lossless"
    settings = EncodeSettings(codec, cfg.crf, cfg.fps)
    frame_dir = item_dir / "frames"
    if codec == "h264":
        result = encode_video(frames, item_dir / "video.mp4", settings)
        encode_video(result.frames, frame_dir, EncodeSettings("lossless"))
        record["container_path"] = str((item_dir / "video.mp4").relative_to(root))
    else:
        encode_video(frames, frame_dir, settings)
    record["encode_settings"] = settings.describe()
    record["mask_path"] = str(mask_path.relative_to(root))
    record["frame_paths"] = [str(p.relative_to(root)) for p in sorted(frame_dir.glob("frame_*.png"))]
    return record


def generate_corpus(out_dir, config: CorpusConfig) -> Path:
    """Write the corpus under ``out_dir`` and return the manifest path."""
    config.validate()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    splits = config.splits()
    jobs = [
        (config, str(root), di, name, i, splits[i])
        for di, name in enumerate(config.datasets)
        for i in range(config.videos_per_dataset)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(_make_item, jobs))
    else:
        records = [_make_item(j) for j in jobs]
    manifest = root / MANIFEST_NAME
    with manifest.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    (root / "corpus.json").write_text(json.dumps({"config": config.to_dict()}, indent=2, sort_keys=True))
    return manifest


class CorpusManifest:
    """Records of a manifest file, with paths resolved against its directory."""

    def __init__(self, records: list, root):
        self.records = records
        self.root = Path(root)

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise InvalidArgumentError(f"manifest {path} does not exist")
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        return cls(records, path.parent)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def select(self, datasets=None, split=None) -> "CorpusManifest":
        datasets = None if datasets is None else {DATASET_LETTERS.get(d, d) for d in datasets}
        keep = [r for r in self.records
                if (datasets is None or r["dataset"] in datasets) and (split is None or r["split"] == split)]
        return CorpusManifest(keep, self.root)

    def path(self, rel) -> Path:
        return self.root / rel

    def frames(self, record):
        """Yield ``(frame_id, FrameTensor)`` for one record."""
        for rel in record["frame_paths"]:
            p = self.path(rel)
            yield f"{record['id']}/{p.stem}", read_frame(p, source_id=record["id"])

    def mask(self, record) -> ForgeryMask:
        return read_mask(self.path(record["mask_path"]))

    def datasets(self) -> list:
        return sorted({r["dataset"] for r in self.records})
