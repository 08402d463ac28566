"""Command-line entry points.

Every command reads an optional JSON config (``--config``) whose top level may
hold ``seed``, ``profile`` and one section per command (``datagen``,
``pretrain``, ``train``, ``model``, ``infer``, ``eval``, ``bench``). Flags
override file values. Each run writes ``run.json`` into its output directory
with the resolved config, seed and code version.

Exit codes: 0 success, 1 validation, 2 runtime, 3 environment.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__, checkpoint
from .errors import ConfigurationError, EncoderError, ForgeryLocError, InvalidArgumentError

log = logging.getLogger("forgeryloc")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_ENVIRONMENT = 0, 1, 2, 3
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


# ---- config plumbing ------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file {p} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{p}: top level must be an object")
    return cfg


def _section(args, name: str) -> dict:
    """File section ``name`` overlaid with flags that were given explicitly."""
    out = dict(args.file_config.get(name, {}))
    for key, value in vars(args).items():
        if key.startswith(f"{name}__") and value is not None:
            out[key.split("__", 1)[1]] = value
    return out


def _seed(args) -> int:
    return int(args.seed if args.seed is not None else args.file_config.get("seed", 0))


def _profile(args) -> str:
    prof = args.profile or args.file_config.get("profile", "desk")
    if prof not in ("desk", "full"):
        raise ConfigurationError(f"profile must be desk or full, got {prof!r}")
    return prof


def _out_dir(args) -> Path:
    out = args.out or args.file_config.get("out")
    if out is None:
        raise ConfigurationError("--out is required")
    return Path(out)


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_run_record(out_dir: Path, command: str, seed: int, profile: str, config: dict, argv) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command, "seed": seed, "profile": profile, "config": config,
        "argv": list(argv), "code_version": code_version(),
        "python": platform.python_version(), "torch": torch.__version__, "numpy": np.__version__,
    }
    path = out_dir / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str))
    return path


def _model_config(args, rows: int, cols: int):
    from .model import VARIANTS, ModelConfig

    section = _section(args, "model")
    variant = section.pop("variant", "proposed")
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    section = {**VARIANTS[variant], **section}
    preset = ModelConfig.full if _profile(args) == "full" else ModelConfig.desk
    bad = set(section) - set(ModelConfig.__dataclass_fields__)
    if bad:
        raise ConfigurationError(f"unknown model keys: {sorted(bad)}")
    section = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    section.setdefault("rows", rows)
    section.setdefault("cols", cols)
    return preset(**section).validate()


def _check_strict(height: int, width: int, strict: bool):
    if strict and (height, width) != (1080, 1920):
        raise InvalidArgumentError(f"strict-1080p mode: got {height}x{width}, need 1080x1920")


# ---- commands -------------------------------------------------------------

def cmd_datagen(args) -> dict:
    from .datagen import CorpusConfig, find_encoder, generate_corpus

    seed, profile = _seed(args), _profile(args)
    section = _section(args, "datagen")
    section = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    if isinstance(section.get("datasets"), str):
        section["datasets"] = tuple(s.strip() for s in section["datasets"].split(",") if s.strip())
    bad = set(section) - set(CorpusConfig.__dataclass_fields__)
    if bad:
        raise ConfigurationError(f"unknown datagen keys: {sorted(bad)}")
    maker = CorpusConfig.full if profile == "full" else CorpusConfig.desk
    cfg = maker(**section, seed=seed).validate()
    if cfg.codec == "h264" and find_encoder() is None:
        raise EncoderError("H.264 re-encoding requested but no ffmpeg executable was found "
                           "(install the 'video' extra or set FORGERYLOC_FFMPEG)")
    out = _out_dir(args)
    write_run_record(out, "datagen", seed, profile, cfg.to_dict(), args.argv)
    manifest = generate_corpus(out, cfg)
    n = sum(1 for _ in manifest.open())
    return {"manifest": str(manifest), "items": n}


def cmd_pretrain(args) -> dict:
    from .training import PretrainConfig, pretrain_ffe

    seed, profile = _seed(args), _profile(args)
    section = _section(args, "pretrain")
    bad = set(section) - set(PretrainConfig.__dataclass_fields__)
    if bad:
        raise ConfigurationError(f"unknown pretrain keys: {sorted(bad)}")
    if profile == "full":
        section.setdefault("embedding_dim", 384)
        section.setdefault("widths", (96, 64, 64, 128))
    section = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    cfg = PretrainConfig(**section, seed=seed)
    if cfg.num_classes < 2 or cfg.epochs < 1:
        raise ConfigurationError("pretraining needs >= 2 classes and >= 1 epoch")
    out = _out_dir(args)
    write_run_record(out, "pretrain-ffe", seed, profile, cfg.to_dict(), args.argv)
    model, report = pretrain_ffe(cfg)
    ckpt = checkpoint.save_model(out / "ffe.ckpt", model, {"pretrain_config": cfg.to_dict(),
                                                          "heldout_accuracy": report.heldout_accuracy})
    (out / "pretrain_report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return {"checkpoint": str(ckpt), "heldout_accuracy": report.heldout_accuracy}


def _corpus_grid(manifest, block_size=128):
    from .geometry import plan_grid, read_frame

    first = next(iter(manifest))
    frame = read_frame(manifest.path(first["frame_paths"][0]))
    return plan_grid(frame.height, frame.width, block_size)


def cmd_train(args) -> dict:
    from .datagen import CorpusManifest
    from .model import ForgeryNet
    from .training import load_stage_config, run_stage, stage_config

    seed, profile = _seed(args), _profile(args)
    section = _section(args, "train")
    corpus = section.pop("corpus", None)
    if corpus is None:
        raise ConfigurationError("train needs --corpus")
    stages = section.pop("stages", [1])
    if isinstance(stages, (int, str)):
        stages = [int(s) for s in str(stages).split(",")]
    stage_file = section.pop("stage_config", None)
    ffe_ckpt = section.pop("ffe_checkpoint", None)
    init_ckpt = section.pop("checkpoint", None)
    resume = bool(section.pop("resume", False))
    manifest = CorpusManifest.load(corpus)
    if len(manifest) == 0:
        raise ConfigurationError(f"corpus {corpus} is empty")
    if stage_file is not None:
        stage_cfgs = [replace(load_stage_config(stage_file), seed=seed)]
    else:
        stage_cfgs = [stage_config(int(s), seed=seed, **section) for s in stages]
    for ckpt_path in (ffe_ckpt, init_ckpt):
        if ckpt_path is not None and not Path(ckpt_path).exists():
            raise ConfigurationError(f"checkpoint {ckpt_path} does not exist")
    if init_ckpt is not None:
        model, _ = checkpoint.load_model(init_ckpt)
    else:
        grid = _corpus_grid(manifest)
        model = ForgeryNet(_model_config(args, grid.rows, grid.cols))
    if ffe_ckpt is not None:
        if model.ffe is None:
            raise ConfigurationError("variant has no FFE to load pretrained weights into")
        tensors, _ = checkpoint.load_tensors(ffe_ckpt)
        checkpoint.state_to_module(model.ffe, tensors, prefix="model.")
    torch.manual_seed(seed)
    out = _out_dir(args)
    write_run_record(out, "train", seed, profile,
                     {"stages": [s.to_dict() for s in stage_cfgs], "model": model.config.to_dict(),
                      "corpus": str(corpus), "ffe_checkpoint": ffe_ckpt, "checkpoint": init_ckpt},
                     args.argv)
    steps = 0
    for st in stage_cfgs:
        res = run_stage(model, st, manifest, out_dir=out, resume=resume, log_path=out / "train_log.jsonl")
        steps = res.steps
    final = checkpoint.save_model(out / "final.ckpt", model, {"stages": [s.stage for s in stage_cfgs],
                                                             "seed": seed})
    return {"checkpoint": str(final), "last_stage_steps": steps}


def _load_checkpoint(path):
    if path is None:
        raise ConfigurationError("--checkpoint is required")
    if not Path(path).exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    model, _ = checkpoint.load_model(path)
    model.eval()
    return model


def _input_frames(inp, size=None):
    """Yield ``(frame_id, FrameTensor)`` from an image, a directory of images or a video."""
    from .datagen.encode import decode_video
    from .geometry import FrameTensor, read_frame

    p = Path(inp)
    if not p.exists():
        raise InvalidArgumentError(f"input {p} does not exist")
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise InvalidArgumentError(f"no images in {p}")
        return [(f.stem, read_frame(f)) for f in files]
    if p.suffix.lower() in IMAGE_SUFFIXES:
        return [(p.stem, read_frame(p))]
    if size is None:
        raise InvalidArgumentError("video input needs --size HxW")
    h, w = size
    return [(f"{p.stem}_{i:04d}", FrameTensor(f, frame_id=str(i), source_id=p.stem))
            for i, f in enumerate(decode_video(p, h, w))]


def _parse_size(s):
    if s is None:
        return None
    try:
        h, w = (int(v) for v in str(s).lower().split("x"))
    except ValueError as exc:
        raise InvalidArgumentError(f"size must look like 1080x1920, got {s!r}") from exc
    return h, w


def cmd_infer(args) -> dict:
    from .attention import export_attention_maps
    from .evaluation import predicted_mask
    from .geometry import write_mask

    section = _section(args, "infer")
    model = _load_checkpoint(section.get("checkpoint"))
    if section.get("input") is None:
        raise ConfigurationError("infer needs --input")
    frames = _input_frames(section["input"], _parse_size(section.get("size")))
    strict = bool(section.get("strict_1080p", False))
    for _, f in frames:
        _check_strict(f.height, f.width, strict)
    out = _out_dir(args)
    write_run_record(out, "infer", _seed(args), _profile(args), section, args.argv)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for fid, frame in frames:
        pred = model.predict(frame)
        mask, trep = predicted_mask(pred, frame.height, frame.width, model.config.block_size,
                                    section.get("mask_mode", "histogram"))
        mask_path = write_mask(mask, out / "masks" / f"{fid}_mask.png")
        rec = {"frame_id": fid, "detection_score": pred["p_fake"], "is_fake": pred["p_fake"] >= 0.5,
               "threshold_report": trep, "mask_path": str(mask_path),
               "block_probabilities": [float(v) for v in pred["q"]]}
        if section.get("maps", True) and pred["maps"] is not None:
            rec["attention_maps"] = [str(p) for p in export_attention_maps(pred["maps"], out / "maps", fid)]
        records.append(rec)
    with (out / "results.jsonl").open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return {"frames": len(records), "fake_frames": sum(r["is_fake"] for r in records)}


def cmd_eval(args) -> dict:
    from .datagen import CorpusManifest
    from .evaluation import NetworkPredictor, OraclePredictor, evaluate_corpus

    section = _section(args, "eval")
    if section.get("corpus") is None:
        raise ConfigurationError("eval needs --corpus")
    manifest = CorpusManifest.load(section["corpus"])
    if section.get("oracle"):
        predictor = OraclePredictor(manifest)
    else:
        predictor = NetworkPredictor(_load_checkpoint(section.get("checkpoint")))
    out = _out_dir(args)
    write_run_record(out, "eval", _seed(args), _profile(args), section, args.argv)
    report = evaluate_corpus(manifest, predictor, split=section.get("split"),
                             out_dir=out / "masks" if section.get("save_masks") else None,
                             localization_mode=section.get("localization_mode", "per-frame"),
                             mask_mode=section.get("mask_mode", "histogram"))
    report.save(out / "metrics.json")
    (out / "metrics.txt").write_text(report.render() + "\n")
    print(report.render())
    return {"metrics": str(out / "metrics.json"), "summary": report.summary, "errors": len(report.errors)}


def cmd_bench(args) -> dict:
    from .evaluation import benchmark_throughput
    from .geometry import plan_grid
    from .model import ForgeryNet

    section = _section(args, "bench")
    h, w = _parse_size(section.get("size")) or (1080, 1920)
    _check_strict(h, w, bool(section.get("strict_1080p", False)))
    if section.get("checkpoint"):
        model = _load_checkpoint(section["checkpoint"])
    else:
        grid = plan_grid(h, w)
        model = ForgeryNet(_model_config(args, grid.rows, grid.cols))
    torch.manual_seed(_seed(args))
    out = _out_dir(args)
    write_run_record(out, "bench", _seed(args), _profile(args), {**section, "model": model.config.to_dict()},
                     args.argv)
    result = benchmark_throughput(model, int(section.get("frames", 100)), h, w, seed=_seed(args))
    (out / "bench.json").write_text(json.dumps(result, indent=2))
    return result


COMMANDS = {
    "datagen": cmd_datagen, "pretrain-ffe": cmd_pretrain, "train": cmd_train,
    "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench,
}


# ---- parser ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"status": "error", "exit_code": EXIT_VALIDATION, "error": "UsageError",
                          "message": message}), file=sys.stderr)
        sys.exit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--profile", choices=("desk", "full"))
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="forgeryloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--datasets", metavar="DATASETS", dest="datagen__datasets", help="comma-separated, e.g. VCMS,VPVM,VPIM")
    p.add_argument("--videos", metavar="VIDEOS", dest="datagen__videos_per_dataset", type=int)
    p.add_argument("--frames", metavar="FRAMES", dest="datagen__frames_per_video", type=int)
    p.add_argument("--height", metavar="HEIGHT", dest="datagen__height", type=int)
    p.add_argument("--width", metavar="WIDTH", dest="datagen__width", type=int)
    p.add_argument("--codec", dest="datagen__codec", choices=("lossless", "h264"))
    p.add_argument("--workers", metavar="WORKERS", dest="datagen__workers", type=int)

    p = sub.add_parser("pretrain-ffe", parents=[common], help="camera-signature pretraining of the FFE")
    p.add_argument("--epochs", metavar="EPOCHS", dest="pretrain__epochs", type=int)
    p.add_argument("--classes", metavar="CLASSES", dest="pretrain__num_classes", type=int)
    p.add_argument("--train-scenes", metavar="TRAIN_SCENES", dest="pretrain__train_scenes", type=int)

    p = sub.add_parser("train", parents=[common], help="run curriculum stages")
    p.add_argument("--corpus", metavar="CORPUS", dest="train__corpus")
    p.add_argument("--stages", metavar="STAGES", dest="train__stages", help="comma-separated stage numbers (default 1)")
    p.add_argument("--stage-config", metavar="STAGE_CONFIG", dest="train__stage_config", help="JSON file with one stage's settings")
    p.add_argument("--variant", metavar="VARIANT", dest="model__variant")
    p.add_argument("--ffe-checkpoint", metavar="FFE_CHECKPOINT", dest="train__ffe_checkpoint")
    p.add_argument("--checkpoint", metavar="CHECKPOINT", dest="train__checkpoint", help="continue from a full model checkpoint")
    p.add_argument("--epochs", metavar="EPOCHS", dest="train__epochs", type=int)
    p.add_argument("--lr", metavar="LR", dest="train__initial_lr", type=float)
    p.add_argument("--optimizer", dest="train__optimizer", choices=("SGD", "Adam"))
    p.add_argument("--batch-size", metavar="BATCH_SIZE", dest="train__batch_size", type=int)
    p.add_argument("--max-steps", metavar="MAX_STEPS", dest="train__max_steps", type=int)
    p.add_argument("--resume", dest="train__resume", action="store_true", default=None)

    p = sub.add_parser("infer", parents=[common], help="detect and localize on frames or a video")
    p.add_argument("--checkpoint", metavar="CHECKPOINT", dest="infer__checkpoint")
    p.add_argument("--input", metavar="INPUT", dest="infer__input", help="image, directory of images, or video")
    p.add_argument("--size", metavar="SIZE", dest="infer__size", help="HxW, required for video input")
    p.add_argument("--mask-mode", dest="infer__mask_mode", choices=("histogram", "fixed"))
    p.add_argument("--no-maps", dest="infer__maps", action="store_false", default=None)
    p.add_argument("--strict-1080p", dest="infer__strict_1080p", action="store_true", default=None)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a corpus")
    p.add_argument("--corpus", metavar="CORPUS", dest="eval__corpus")
    p.add_argument("--checkpoint", metavar="CHECKPOINT", dest="eval__checkpoint")
    p.add_argument("--oracle", dest="eval__oracle", action="store_true", default=None,
                   help="score ground truth against itself (pipeline check)")
    p.add_argument("--split", dest="eval__split", choices=("train", "val", "test"))
    p.add_argument("--localization-mode", dest="eval__localization_mode", choices=("per-frame", "pooled"))
    p.add_argument("--mask-mode", dest="eval__mask_mode", choices=("histogram", "fixed"))
    p.add_argument("--save-masks", dest="eval__save_masks", action="store_true", default=None)

    p = sub.add_parser("bench", parents=[common], help="measure single-frame throughput")
    p.add_argument("--checkpoint", metavar="CHECKPOINT", dest="bench__checkpoint")
    p.add_argument("--variant", metavar="VARIANT", dest="model__variant")
    p.add_argument("--frames", metavar="FRAMES", dest="bench__frames", type=int)
    p.add_argument("--size", metavar="SIZE", dest="bench__size")
    p.add_argument("--strict-1080p", dest="bench__strict_1080p", action="store_true", default=None)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    record = {"status": "error", "exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, EncoderError) and exc.diagnostics:
        record["diagnostics"] = exc.diagnostics
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.file_config = load_config(args.config)
        result = COMMANDS[args.command](args)
    except EncoderError as exc:
        return _fail(EXIT_ENVIRONMENT, exc)
    except (ConfigurationError, InvalidArgumentError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    except (ForgeryLocError, RuntimeError, OSError) as exc:
        return _fail(EXIT_RUNTIME, exc)
    print(json.dumps({"status": "ok", **result}, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
