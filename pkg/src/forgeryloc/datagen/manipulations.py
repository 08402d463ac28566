"""In-place edits and splicing confined to a tamper mask.

Two strength profiles are provided. ``visible`` and ``invisible`` list, per
operation, its parameter range and the probability it is applied. Every op
works on the whole frame; the result is composited back through the mask so
pixels outside it are untouched bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.color import hsv2rgb, rgb2hsv

from ..errors import GenerationError, InvalidArgumentError

LUMA = np.array([0.299, 0.587, 0.114])

PROFILES = {
    "visible": {
        "order": ["brightness", "contrast", "saturation", "hue", "gaussian_blur",
                  "motion_blur", "gaussian_noise", "box_blur"],
        "brightness": {"range": (0.8, 1.6), "p": 1.0},
        "contrast": {"range": (0.7, 1.3), "p": 1.0},
        "saturation": {"range": (0.8, 1.1), "p": 1.0},
        "hue": {"range": (-0.2, 0.2), "p": 1.0},
        "gaussian_blur": {"kernel_size": 5, "sigma": 2.0, "p": 0.7},
        "motion_blur": {"kernel_size": 5, "angle": (-25.0, 25.0), "direction": (-1.0, 1.0), "p": 0.7},
        "box_blur": {"kernel_size": 5, "p": 0.7},
        "gaussian_noise": {"std": 0.05, "p": 1.0},
    },
    "invisible": {
        "order": ["brightness", "contrast", "saturation", "gaussian_blur", "motion_blur",
                  "box_blur", "gaussian_noise"],
        "brightness": {"range": (0.95, 1.05), "p": 0.9},
        "contrast": {"range": (0.95, 1.05), "p": 0.9},
        "saturation": {"range": (0.95, 1.05), "p": 0.9},
        "gaussian_blur": {"kernel_size": 3, "sigma": 1.2, "p": 0.7},
        "motion_blur": {"kernel_size": 3, "angle": (-20.0, 20.0), "direction": (-1.0, 1.0), "p": 0.7},
        "box_blur": {"kernel_size": 3, "p": 0.7},
        "gaussian_noise": {"std": 0.006, "p": 0.9},
    },
}

_FACTOR_OPS = ("brightness", "contrast", "saturation", "hue")


@dataclass
class ManipulationRecipe:
    """Sampled edit. ``ops`` is an ordered list of ``(name, params)`` that will be applied."""

    kind: str = "inplace"
    profile: str = "visible"
    ops: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "profile": self.profile,
                "ops": [{"op": name, **params} for name, params in self.ops]}

    @classmethod
    def from_dict(cls, d: dict) -> "ManipulationRecipe":
        ops = [(o["op"], {k: v for k, v in o.items() if k != "op"}) for o in d.get("ops", [])]
        return cls(d["kind"], d["profile"], ops)


def sample_manipulation(profile: str, rng, max_tries: int = 100) -> ManipulationRecipe:
    """Draw which ops fire (with their probabilities) and their parameters.

    Redraws until at least one op fires.
    """
    if profile not in PROFILES:
        raise InvalidArgumentError(f"unknown profile {profile!r}")
    spec = PROFILES[profile]
    rng = np.random.default_rng(rng)
    for _ in range(max_tries):
        ops = []
        for name in spec["order"]:
            s = spec[name]
            if rng.random() >= s["p"]:
                continue
            if name in _FACTOR_OPS:
                ops.append((name, {"factor": float(rng.uniform(*s["range"]))}))
            elif name == "motion_blur":
                ops.append((name, {
                    "kernel_size": s["kernel_size"],
                    "angle": float(rng.uniform(*s["angle"])),
                    "direction": float(rng.uniform(*s["direction"])),
                }))
            elif name == "gaussian_blur":
                ops.append((name, {"kernel_size": s["kernel_size"], "sigma": s["sigma"]}))
            elif name == "box_blur":
                ops.append((name, {"kernel_size": s["kernel_size"]}))
            elif name == "gaussian_noise":
                ops.append((name, {"std": s["std"]}))
        if ops:
            return ManipulationRecipe("inplace", profile, ops)
    raise GenerationError("could not draw a non-empty manipulation")


def validate_recipe(recipe: ManipulationRecipe):
    if recipe.profile not in PROFILES:
        raise InvalidArgumentError(f"unknown profile {recipe.profile!r}")
    spec = PROFILES[recipe.profile]
    if recipe.kind == "inplace" and not recipe.ops:
        raise InvalidArgumentError("an in-place recipe needs at least one op")
    for name, params in recipe.ops:
        if name not in spec:
            raise InvalidArgumentError(f"op {name!r} not allowed in the {recipe.profile} profile")
        s = spec[name]
        if name in _FACTOR_OPS:
            lo, hi = s["range"]
            if not lo <= params["factor"] <= hi:
                raise InvalidArgumentError(f"{name} factor {params['factor']} outside [{lo}, {hi}]")
        elif name == "motion_blur":
            if params["kernel_size"] != s["kernel_size"]:
                raise InvalidArgumentError("motion blur kernel size differs from the profile")
            if not s["angle"][0] <= params["angle"] <= s["angle"][1]:
                raise InvalidArgumentError(f"motion blur angle {params['angle']} outside {s['angle']}")
            if not s["direction"][0] <= params["direction"] <= s["direction"][1]:
                raise InvalidArgumentError("motion blur direction outside [-1, 1]")
        elif name in ("gaussian_blur", "box_blur"):
            if params["kernel_size"] != s["kernel_size"] or params.get("sigma", s.get("sigma")) != s.get("sigma"):
                raise InvalidArgumentError(f"{name} parameters differ from the profile")
        elif name == "gaussian_noise":
            if params["std"] != s["std"]:
                raise InvalidArgumentError(f"noise std {params['std']} differs from profile std {s['std']}")


# ---- kernels -------------------------------------------------------------

def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def motion_kernel(size: int, angle: float, direction: float) -> np.ndarray:
    """Line kernel through the center, weights ramped by ``direction``, rotated by ``angle`` degrees.

    ``direction=0`` is a uniform line; +-1 puts all weight on one end. The
    rotation resamples with cubic splines and the kernel is renormalized.
    """
    d = (np.clip(direction, -1.0, 1.0) + 1.0) / 2.0
    k = np.zeros((size, size))
    k[size // 2, :] = d + (1.0 - 2.0 * d) * np.arange(size) / (size - 1)
    k = ndimage.rotate(k, angle, reshape=False, order=3, mode="constant")
    k = np.clip(k, 0.0, None)
    s = k.sum()
    if s <= 0:
        k = np.zeros((size, size))
        k[size // 2, size // 2] = 1.0
        return k
    return k / s


def _convolve(img, kernel):
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.convolve(img[..., ch], kernel, mode="reflect")
    return out


def _apply_op(img, name, params, region, rng):
    if name == "brightness":
        out = img * params["factor"]
    elif name == "contrast":
        gray = img @ LUMA
        mean = gray[region].mean() if region.any() else gray.mean()
        out = params["factor"] * img + (1.0 - params["factor"]) * mean
    elif name == "saturation":
        gray = (img @ LUMA)[..., None]
        out = params["factor"] * img + (1.0 - params["factor"]) * gray
    elif name == "hue":
        hsv = rgb2hsv(img)
        hsv[..., 0] = np.mod(hsv[..., 0] + params["factor"], 1.0)
        out = hsv2rgb(hsv)
    elif name == "gaussian_blur":
        out = _convolve(img, gaussian_kernel(params["kernel_size"], params["sigma"]))
    elif name == "motion_blur":
        out = _convolve(img, motion_kernel(params["kernel_size"], params["angle"], params["direction"]))
    elif name == "box_blur":
        out = _convolve(img, box_kernel(params["kernel_size"]))
    elif name == "gaussian_noise":
        out = img + rng.normal(0.0, params["std"], size=img.shape)
    else:
        raise InvalidArgumentError(f"unknown op {name!r}")
    return np.clip(out, 0.0, 1.0)


def _pixels(frame):
    px = frame.pixels if hasattr(frame, "pixels") else frame
    return np.asarray(px, dtype=np.float64)


def _mask_bool(mask, shape):
    m = mask.values if hasattr(mask, "values") else np.asarray(mask)
    if m.shape != shape:
        raise InvalidArgumentError(f"mask {m.shape} does not match frame {shape}")
    return m > 0.5


def apply_inplace(frame, mask, recipe: ManipulationRecipe, rng=None) -> np.ndarray:
    """Apply ``recipe`` inside ``mask``; pixels outside the mask are returned unchanged."""
    validate_recipe(recipe)
    img = _pixels(frame)
    region = _mask_bool(mask, img.shape[:2])
    if not region.any():
        return img.copy()
    rng = np.random.default_rng(rng)
    work = img.copy()
    for name, params in recipe.ops:
        work = _apply_op(work, name, params, region, rng)
    return np.where(region[..., None], work, img)


def apply_splice(dest_frame, source_frame, mask) -> np.ndarray:
    """``source * mask + dest * (1 - mask)``, pixelwise."""
    dest, src = _pixels(dest_frame), _pixels(source_frame)
    if dest.shape != src.shape:
        raise InvalidArgumentError(f"splice frames differ in size: {dest.shape} vs {src.shape}")
    m = mask.values if hasattr(mask, "values") else np.asarray(mask, dtype=np.float64)
    if m.shape != dest.shape[:2]:
        raise InvalidArgumentError(f"mask {m.shape} does not match frames {dest.shape[:2]}")
    m = m[..., None]
    return src * m + dest * (1.0 - m)
