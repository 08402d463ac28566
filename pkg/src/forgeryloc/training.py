"""FFE camera-signature pretraining and the five-stage curriculum."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import checkpoint
from .datagen.corpus import DATASET_LETTERS, CorpusManifest
from .datagen.sources import make_signature, procedural_texture, render_with_signature
from .errors import ConfigurationError, InvalidArgumentError
from .extractors import FfeModel, ffe_pretrain_loss
from .geometry import ForgeryMask, block_labels, plan_grid, tile_frame
from .heads import LossWeights, detection_loss_from_logits, joint_loss, localization_loss_from_logits
from .model import ForgeryNet, build_variant  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)


def lr_at_epoch(initial_lr: float, decay_rate: float, decay_step: int, epoch: int) -> float:
    """Step-wise exponential decay: ``initial_lr * decay_rate ** (epoch // decay_step)``, epochs from 0."""
    return initial_lr * decay_rate ** (epoch // decay_step)


# stage -> (datasets, epochs, initial lr, decay rate, decay step)
TABLE1 = {
    1: (("A",), 6, 1.0e-4, 0.75, 2),
    2: (("B",), 6, 8.5e-5, 0.85, 2),
    3: (("C",), 23, 8.5e-5, 0.85, 2),
    4: (("A", "B", "C"), 10, 8.5e-5, 0.85, 2),
    5: (("A", "B", "C", "D", "E", "F"), 9, 5.0e-5, 0.85, 2),
}


@dataclass
class StageConfig:
    stage: int
    datasets: tuple
    epochs: int
    initial_lr: float
    decay_rate: float
    decay_step: int
    optimizer: str = "SGD"
    momentum: float = 0.95
    alpha: float = 0.4
    freeze_ffe: bool = True
    ffe_lr_mult: float = 0.1
    batch_size: int = 2
    weight_decay: float = 0.0
    max_steps: Optional[int] = None
    seed: int = 0

    def validate(self) -> "StageConfig":
        if self.stage not in TABLE1:
            raise ConfigurationError(f"stage must be 1-5, got {self.stage}")
        if self.initial_lr <= 0:
            raise ConfigurationError("initial_lr must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ConfigurationError("decay_rate must lie in (0, 1]")
        if self.decay_step < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("decay_step, epochs and batch_size must be >= 1")
        if self.optimizer not in ("SGD", "Adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        unknown = [d for d in self.datasets if d not in DATASET_LETTERS and d not in DATASET_LETTERS.values()]
        if unknown:
            raise ConfigurationError(f"unknown datasets {unknown}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        return self

    def lr(self, epoch: int) -> float:
        return lr_at_epoch(self.initial_lr, self.decay_rate, self.decay_step, epoch)

    @property
    def dataset_names(self) -> list:
        return [DATASET_LETTERS.get(d, d) for d in self.datasets]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = list(self.datasets)
        return d


def stage_config(stage: int, **overrides) -> StageConfig:
    """Table 1 defaults for ``stage``; FFE frozen in stages 1-3, slow (0.1x lr) afterwards."""
    if stage not in TABLE1:
        raise ConfigurationError(f"stage must be 1-5, got {stage}")
    datasets, epochs, lr, rate, step = TABLE1[stage]
    cfg = StageConfig(stage, datasets, epochs, lr, rate, step, freeze_ffe=stage <= 3)
    if "datasets" in overrides:
        overrides["datasets"] = tuple(overrides["datasets"])
    return replace(cfg, **overrides).validate()


def load_stage_config(path) -> StageConfig:
    """Read a JSON stage file. Keys mirror the Table 1 columns; ``stage`` is required."""
    d = json.loads(Path(path).read_text())
    if "stage" not in d:
        raise ConfigurationError(f"{path}: missing 'stage'")
    stage = d.pop("stage")
    bad = set(d) - set(StageConfig.__dataclass_fields__)
    if bad:
        raise ConfigurationError(f"{path}: unknown keys {sorted(bad)}")
    return stage_config(stage, **d)


# ---- FFE pretraining ------------------------------------------------------

@dataclass
class PretrainConfig:
    lr: float = 1.0e-3
    momentum: float = 0.95
    decay_rate: float = 0.5
    decay_step: int = 2
    epochs: int = 10
    num_classes: int = 4
    train_scenes: int = 160
    heldout_scenes: int = 10
    blocks_per_scene: int = 4
    batch_size: int = 8
    embedding_dim: int = 32
    widths: tuple = (8, 16, 16, 32)
    block_size: int = 128
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        return lr_at_epoch(self.lr, self.decay_rate, self.decay_step, epoch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def camera_blocks(num_classes: int, num_scenes: int, blocks_per_scene: int, rng, block_size: int = 128):
    """Render a shared pool of scenes through every simulated camera and tile them.

    Returns ``(blocks (K, 3, b, b) float32 tensor, labels (K,) long tensor)``.
    Every class sees exactly the same scene content.
    """
    rng = np.random.default_rng(rng)
    sigs = [make_signature(c) for c in range(num_classes)]
    side = int(np.ceil(np.sqrt(blocks_per_scene)))
    blocks, labels = [], []
    for _ in range(num_scenes):
        scene = procedural_texture(side * block_size, side * block_size, rng)
        for c, sig in enumerate(sigs):
            img = render_with_signature(scene, sig, rng)
            tiles = tile_frame(img, plan_grid(img.shape[0], img.shape[1], block_size))[:blocks_per_scene]
            blocks.append(tiles)
            labels += [c] * len(tiles)
    arr = np.concatenate(blocks).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)), torch.tensor(labels)


@dataclass
class PretrainReport:
    heldout_accuracy: float
    per_class_accuracy: list
    train_loss: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)
    heldout_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@torch.no_grad()
def _accuracy(model, blocks, labels, num_classes, batch=64):
    model.eval()
    preds = torch.cat([model.classify(blocks[i : i + batch]).argmax(1) for i in range(0, len(blocks), batch)])
    per_class = [float((preds[labels == c] == c).float().mean()) for c in range(num_classes)]
    return float((preds == labels).float().mean()), per_class


def pretrain_ffe(config: PretrainConfig = PretrainConfig(), model: Optional[FfeModel] = None):
    """Train the FFE to tell simulated cameras apart, then strip its softmax head.

    Returns ``(model, PretrainReport)``; accuracy is measured on scenes never
    seen in training.
    """
    if config.num_classes < 2:
        raise InvalidArgumentError("camera-model pretraining needs at least two classes")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    train_x, train_y = camera_blocks(config.num_classes, config.train_scenes, config.blocks_per_scene,
                                     rng, config.block_size)
    test_x, test_y = camera_blocks(config.num_classes, config.heldout_scenes, config.blocks_per_scene,
                                   rng, config.block_size)
    if model is None:
        model = FfeModel(config.embedding_dim, config.widths, num_classes=config.num_classes,
                         block_size=config.block_size)
    elif model.classifier is None:
        model.classifier = nn.Linear(model.embedding_dim, config.num_classes)
    opt = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    report = PretrainReport(0.0, [])
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        order = torch.from_numpy(rng.permutation(len(train_x)))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            probs = torch.softmax(model.classify(train_x[idx]), dim=1)
            loss = ffe_pretrain_loss(probs, train_y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.enforce_constraint()
            if model.constrained:
                assert model.first_layer.constraint_violation() < 1e-6
            total += float(loss.detach()) * len(idx)
        acc, _ = _accuracy(model, test_x, test_y, config.num_classes)
        report.train_loss.append(total / len(train_x))
        report.lr_history.append(lr)
        report.heldout_history.append(acc)
        log.info("pretrain epoch %d lr=%.3g loss=%.4f heldout=%.3f", epoch, lr, report.train_loss[-1], acc)
    report.heldout_accuracy, report.per_class_accuracy = _accuracy(model, test_x, test_y, config.num_classes)
    model.strip_head()
    model.eval()
    return model, report


# ---- staged training ------------------------------------------------------

class FrameDataset(torch.utils.data.Dataset):
    """Frames of selected manifest records as ``(blocks, label, z)`` samples.

    Decoded frames are cached in memory after first access.
    """

    def __init__(self, manifest: CorpusManifest, block_size: int = 128, cache: bool = True):
        self.manifest = manifest
        self.block_size = block_size
        self.items = [(r, i) for r in manifest.records for i in range(len(r["frame_paths"]))]
        self._cache = {} if cache else None
        self._labels = {}

    def __len__(self):
        return len(self.items)

    def __getitem__(self, idx):
        if self._cache is not None and idx in self._cache:
            return self._cache[idx]
        from .geometry import read_frame

        record, fi = self.items[idx]
        frame = read_frame(self.manifest.path(record["frame_paths"][fi]))
        if record["id"] not in self._labels:
            self._labels[record["id"]] = self.manifest.mask(record)
        sample = make_sample(frame.pixels, self._labels[record["id"]], int(record["manipulated"]), self.block_size)
        if self._cache is not None:
            self._cache[idx] = sample
        return sample


def make_sample(pixels, mask, label: int, block_size: int = 128):
    """Tile one frame and its mask into a training sample ``(blocks, label, z)``."""
    pixels = np.asarray(pixels)
    grid = plan_grid(pixels.shape[0], pixels.shape[1], block_size)
    blocks = tile_frame(pixels, grid).transpose(0, 3, 1, 2)
    if not isinstance(mask, ForgeryMask):
        mask = ForgeryMask(np.asarray(mask, dtype=np.float64))
    z = block_labels(mask, grid)
    return (
        torch.from_numpy(np.ascontiguousarray(blocks, dtype=np.float32)),
        torch.tensor(label, dtype=torch.long),
        torch.from_numpy(z.astype(np.float32)),
    )


def _stage_data(stage: StageConfig, data, block_size):
    names = stage.dataset_names
    if isinstance(data, CorpusManifest):
        have = set(data.datasets())
        missing = [n for n in names if n not in have]
        if missing:
            raise ConfigurationError(f"stage {stage.stage} needs datasets {missing} absent from the manifest")
        return FrameDataset(data.select(names, split="train"), block_size)
    missing = [n for n in names if n not in data]
    if missing:
        raise ConfigurationError(f"stage {stage.stage} needs datasets {missing}")
    parts = [data[n] for n in names]
    return torch.utils.data.ConcatDataset(parts) if len(parts) > 1 else parts[0]


@dataclass
class StageResult:
    model: ForgeryNet
    log: list
    steps: int
    checkpoints: list


def _make_optimizer(model: ForgeryNet, stage: StageConfig):
    ffe = [p for p in model.ffe.parameters()] if model.ffe is not None else []
    ffe_ids = {id(p) for p in ffe}
    rest = [p for p in model.parameters() if id(p) not in ffe_ids]
    groups = [{"params": rest, "lr_mult": 1.0}]
    if ffe and not stage.freeze_ffe:
        groups.append({"params": ffe, "lr_mult": stage.ffe_lr_mult})
    if stage.optimizer == "SGD":
        return torch.optim.SGD(groups, lr=stage.initial_lr, momentum=stage.momentum,
                               weight_decay=stage.weight_decay)
    return torch.optim.Adam(groups, lr=stage.initial_lr, weight_decay=stage.weight_decay)


_CKPT_RE = re.compile(r"stage(\d)_epoch(\d{3})\.ckpt$")


def latest_checkpoint(out_dir, stage: int):
    out_dir = Path(out_dir)
    found = []
    for p in out_dir.glob(f"stage{stage}_epoch*.ckpt"):
        m = _CKPT_RE.search(p.name)
        if m:
            found.append((int(m.group(2)), p))
    return max(found)[1] if found else None


def run_stage(model: ForgeryNet, stage: StageConfig, data, out_dir=None, resume: bool = False,
              log_path=None) -> StageResult:
    """Train ``model`` for one curriculum stage.

    ``data`` is a :class:`CorpusManifest` (its train split is used) or a mapping
    from dataset name to a torch dataset of ``(blocks, label, z)`` samples.
    Learning rate follows the stage schedule per epoch; the FFE is frozen or
    trained at ``ffe_lr_mult`` times the rate. A checkpoint is written at the end
    of every epoch when ``out_dir`` is given.
    """
    stage.validate()
    dataset = _stage_data(stage, data, model.config.block_size)
    if len(dataset) == 0:
        raise ConfigurationError(f"stage {stage.stage}: no training frames")
    torch.manual_seed(stage.seed)
    model.set_ffe_frozen(stage.freeze_ffe)
    opt = _make_optimizer(model, stage)
    weights = LossWeights(stage.alpha)
    start_epoch, step = 0, 0
    ckpts, records = [], []
    if resume and out_dir is not None:
        last = latest_checkpoint(out_dir, stage.stage)
        if last is not None:
            tensors, manifest = checkpoint.load_tensors(last)
            checkpoint.state_to_module(model, tensors, prefix="model.")
            checkpoint.restore_optimizer(opt, tensors)
            start_epoch, step = manifest["epoch"] + 1, manifest["step"]
            log.info("resumed stage %d from %s", stage.stage, last)
    log_fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(start_epoch, stage.epochs):
            lr = stage.lr(epoch)
            for g in opt.param_groups:
                g["lr"] = lr * g["lr_mult"]
            model.train()
            gen = np.random.default_rng([stage.seed, stage.stage, epoch])
            order = gen.permutation(len(dataset))
            for i in range(0, len(order), stage.batch_size):
                if stage.max_steps is not None and step >= stage.max_steps:
                    break
                batch = [dataset[int(j)] for j in order[i : i + stage.batch_size]]
                blocks = torch.stack([b[0] for b in batch])
                labels = torch.stack([b[1] for b in batch])
                z = torch.stack([b[2] for b in batch])
                out = model(blocks)
                ld = detection_loss_from_logits(out["det_logits"], labels)
                ll = localization_loss_from_logits(out["loc_logits"], z)
                loss = joint_loss(ld, ll, weights)
                opt.zero_grad()
                loss.backward()
                opt.step()
                model.enforce_constraints()
                if model.ffe is not None and model.ffe.constrained:
                    assert model.ffe.first_layer.constraint_violation() < 1e-6
                rec = {"step": step, "stage": stage.stage, "epoch": epoch, "lr": lr,
                       "L_D": float(ld.detach()), "L_L": float(ll.detach()), "L": float(loss.detach())}
                records.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")
                step += 1
            if out_dir is not None:
                path = Path(out_dir) / f"stage{stage.stage}_epoch{epoch:03d}.ckpt"
                checkpoint.save_model(path, model, {"stage": stage.stage, "epoch": epoch, "step": step,
                                                    "stage_config": stage.to_dict()}, optimizer=opt)
                ckpts.append(path)
            if stage.max_steps is not None and step >= stage.max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()
        model.set_ffe_frozen(False)
    return StageResult(model, records, step, ckpts)


def run_curriculum(model: ForgeryNet, data, stages: Sequence[int] = (1, 2, 3, 4, 5), out_dir=None,
                   log_path=None, **overrides) -> list:
    """Run stages in order with Table 1 defaults (plus ``overrides`` for every stage)."""
    return [run_stage(model, stage_config(s, **overrides), data, out_dir=out_dir, log_path=log_path)
            for s in stages]


def attach_pretrained_ffe(model: ForgeryNet, ffe: FfeModel):
    if model.ffe is None:
        raise ConfigurationError("model was built without an FFE")
    state = {k: v for k, v in ffe.state_dict().items() if not k.startswith("classifier.")}
    model.ffe.load_state_dict(state)
    return model
