"""Re-encoding of frame sequences.

``h264`` pipes raw RGB frames through an external ffmpeg process (libx264,
constant rate factor, fixed frame rate) and decodes the container back.
``lossless`` stores a PNG sequence and is the codec-free fallback.
"""
from __future__ import annotations

import logging
import os
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import EncoderError, InvalidArgumentError

log = logging.getLogger(__name__)

ENCODER_ENV = "FORGERYLOC_FFMPEG"


@dataclass(frozen=True)
class EncodeSettings:
    codec: str = "h264"
    crf: int = 23
    fps: int = 30

    def __post_init__(self):
        if self.codec not in ("h264", "lossless"):
            raise InvalidArgumentError(f"unknown codec {self.codec!r}")

    def describe(self) -> str:
        if self.codec == "lossless":
            return "lossless=png"
        return f"crf={self.crf},fps={self.fps}"


@dataclass
class EncodeResult:
    container: Path
    frames: list
    settings: str
    command: list = field(default_factory=list)


def find_encoder():
    """Locate an ffmpeg executable: ``$FORGERYLOC_FFMPEG``, ``PATH``, then imageio-ffmpeg."""
    env = os.environ.get(ENCODER_ENV)
    if env and Path(env).exists():
        return env
    exe = shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        return None
    try:
        return imageio_ffmpeg.get_ffmpeg_exe()
    except RuntimeError:
        return None


def _to_uint8(frames):
    out = []
    for f in frames:
        px = f.pixels if hasattr(f, "pixels") else f
        out.append(np.clip(np.rint(np.asarray(px) * 255.0), 0, 255).astype(np.uint8))
    if not out:
        raise InvalidArgumentError("no frames to encode")
    shape = out[0].shape
    if any(f.shape != shape for f in out) or len(shape) != 3 or shape[2] != 3:
        raise InvalidArgumentError("frames must share one HxWx3 shape")
    return out


def _run(cmd, stdin_bytes=None):
    log.info("running encoder: %s", " ".join(str(c) for c in cmd))
    try:
        proc = subprocess.run(cmd, input=stdin_bytes, capture_output=True, check=False)
    except OSError as exc:
        raise EncoderError(f"could not start encoder: {exc}", {"command": cmd}) from exc
    if proc.returncode != 0:
        raise EncoderError(
            f"encoder exited with status {proc.returncode}",
            {"command": cmd, "stderr": proc.stderr.decode(errors="replace")[-4000:]},
        )
    return proc.stdout


def encode_video(frames, out_path, settings: EncodeSettings = EncodeSettings(), encoder=None) -> EncodeResult:
    """Encode ``frames`` (float HxWx3 in [0, 1]) and return the decoded-back frames.

    For ``h264`` the output is ``out_path`` (an .mp4 container); for
    ``lossless`` ``out_path`` is a directory of ``frame_XXXX.png`` files.
    Frames are quantized to 8 bits first, so the lossless round trip is exact
    for 8-bit inputs.
    """
    data = _to_uint8(frames)
    out_path = Path(out_path)
    if settings.codec == "lossless":
        out_path.mkdir(parents=True, exist_ok=True)
        decoded = []
        for i, f in enumerate(data):
            p = out_path / f"frame_{i:04d}.png"
            Image.fromarray(f).save(p)
            decoded.append(np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0)
        return EncodeResult(out_path, decoded, settings.describe())

    exe = encoder or find_encoder()
    if exe is None:
        raise EncoderError("no ffmpeg executable found; install ffmpeg or imageio-ffmpeg, "
                           "or use the lossless fallback")
    h, w, _ = data[0].shape
    out_path.parent.mkdir(parents=True, exist_ok=True)
    cmd = [
        str(exe), "-y", "-loglevel", "error",
        "-f", "rawvideo", "-pix_fmt", "rgb24", "-s", f"{w}x{h}", "-r", str(settings.fps), "-i", "-",
        # yuv420p needs even dimensions
        "-vf", "pad=ceil(iw/2)*2:ceil(ih/2)*2",
        "-c:v", "libx264", "-crf", str(settings.crf), "-pix_fmt", "yuv420p", "-r", str(settings.fps),
        str(out_path),
    ]
    _run(cmd, b"".join(f.tobytes() for f in data))
    decoded = decode_video(out_path, h, w, exe)
    if len(decoded) != len(data):
        raise EncoderError(f"decoded {len(decoded)} frames, expected {len(data)}", {"command": cmd})
    return EncodeResult(out_path, decoded, settings.describe(), cmd)


def decode_video(path, height: int, width: int, encoder=None) -> list:
    """Decode a container to float frames cropped to ``height x width``."""
    exe = encoder or find_encoder()
    if exe is None:
        raise EncoderError("no ffmpeg executable found")
    ph, pw = height + height % 2, width + width % 2
    cmd = [str(exe), "-loglevel", "error", "-i", str(path), "-f", "rawvideo", "-pix_fmt", "rgb24", "-"]
    raw = np.frombuffer(_run(cmd), dtype=np.uint8)
    n = raw.size // (ph * pw * 3)
    frames = raw[: n * ph * pw * 3].reshape(n, ph, pw, 3)[:, :height, :width]
    return [f.astype(np.float64) / 255.0 for f in frames]


def psnr(a, b) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)
