"""Procedural pristine content and simulated camera processing.

Scene content is a random mix of smooth gradients, blobs, oriented stripes,
hard-edged patches and fine grain. A :class:`CameraSignature` then renders a
scene as a given simulated camera would: Bayer sampling with its own CFA
layout, bilinear demosaicing, sharpening, a tone curve, sensor noise and
8-bit quantization.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

CFA_LAYOUTS = ("RGGB", "BGGR", "GRBG", "GBRG")


def procedural_texture(height: int, width: int, rng, oversize: int = 0) -> np.ndarray:
    """Random textured RGB scene in [0, 1], ``(height + oversize) x (width + oversize) x 3``."""
    rng = np.random.default_rng(rng)
    h, w = height + oversize, width + oversize
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h, w)
    xx /= max(h, w)
    img = np.empty((h, w, 3))
    base = rng.uniform(0.15, 0.85, size=3)
    grad = rng.normal(0, 0.25, size=(2, 3))
    img[:] = base + xx[..., None] * grad[0] + yy[..., None] * grad[1]
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0, w / max(h, w)), rng.uniform(0, h / max(h, w))
        r = rng.uniform(0.05, 0.3)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        img += blob[..., None] * rng.normal(0, 0.3, size=3)
    for _ in range(int(rng.integers(1, 4))):
        theta, freq = rng.uniform(0, np.pi), rng.uniform(4, 40)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        img += stripes[..., None] * rng.uniform(0.02, 0.12) * rng.uniform(0.3, 1.0, size=3)
    for _ in range(int(rng.integers(2, 6))):
        y0, x0 = int(rng.integers(0, h)), int(rng.integers(0, w))
        ph, pw = int(rng.integers(h // 10 + 1, h // 3 + 2)), int(rng.integers(w // 10 + 1, w // 3 + 2))
        img[y0 : y0 + ph, x0 : x0 + pw] = 0.5 * img[y0 : y0 + ph, x0 : x0 + pw] + 0.5 * rng.uniform(0.1, 0.9, size=3)
    grain = ndimage.gaussian_filter(rng.normal(0, 1, size=(h, w)), rng.uniform(0.6, 2.0))
    img += grain[..., None] * rng.uniform(0.01, 0.05)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class CameraSignature:
    camera_id: int
    cfa: str
    sharpen: float
    gamma: float
    noise_std: float
    gains: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gains"] = list(self.gains)
        return d


def make_signature(camera_id: int) -> CameraSignature:
    """Deterministic processing parameters for simulated camera ``camera_id``."""
    rng = np.random.default_rng([7919, camera_id])
    return CameraSignature(
        camera_id=camera_id,
        cfa=CFA_LAYOUTS[camera_id % len(CFA_LAYOUTS)],
        sharpen=float([0.0, 0.8, 0.3, 1.4][camera_id % 4] + rng.uniform(0, 0.2)),
        gamma=float(rng.uniform(0.8, 1.25)),
        noise_std=float([0.004, 0.012, 0.008, 0.002][camera_id % 4] + rng.uniform(0, 0.002)),
        gains=tuple(float(g) for g in rng.uniform(0.9, 1.1, size=3)),
    )


def _cfa_masks(cfa: str, h: int, w: int) -> np.ndarray:
    m = np.zeros((h, w, 3), dtype=bool)
    channel = {"R": 0, "G": 1, "B": 2}
    for i, ch in enumerate(cfa):
        m[i // 2 :: 2, i % 2 :: 2, channel[ch]] = True
    return m


_K_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0


def render_with_signature(scene: np.ndarray, sig: CameraSignature, rng) -> np.ndarray:
    """Simulate capture of ``scene`` by camera ``sig``; output is 8-bit quantized."""
    rng = np.random.default_rng(rng)
    h, w, _ = scene.shape
    lin = np.clip(scene * np.asarray(sig.gains), 0, 1)
    masks = _cfa_masks(sig.cfa, h, w)
    out = np.empty_like(lin)
    for ch in range(3):
        sampled = np.where(masks[..., ch], lin[..., ch], 0.0)
        k = _K_G if ch == 1 else _K_RB
        out[..., ch] = ndimage.convolve(sampled, k, mode="mirror")
    if sig.sharpen > 0:
        blur = ndimage.gaussian_filter(out, sigma=(1.0, 1.0, 0))
        out = out + sig.sharpen * (out - blur)
    out = np.clip(out, 0, 1) ** sig.gamma
    out = out + rng.normal(0, sig.noise_std, size=out.shape)
    return np.rint(np.clip(out, 0, 1) * 255.0) / 255.0


def synthetic_video(height: int, width: int, n_frames: int, rng, signature: CameraSignature,
                    max_shift: int = 6) -> list:
    """A slowly panning scene rendered by one simulated camera."""
    rng = np.random.default_rng(rng)
    pad = 2 * max_shift
    scene = procedural_texture(height, width, rng, oversize=pad)
    vx, vy = rng.uniform(-1.5, 1.5, size=2)
    frames = []
    for t in range(n_frames):
        ox = int(np.clip(round(max_shift + vx * t), 0, pad))
        oy = int(np.clip(round(max_shift + vy * t), 0, pad))
        view = scene[oy : oy + height, ox : ox + width]
        frames.append(render_with_signature(view, signature, rng))
    return frames
