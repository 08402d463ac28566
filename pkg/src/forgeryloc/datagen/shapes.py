"""Compound-shape tamper masks.

Ten base shapes are described as polygons in unit coordinates. Up to three
of them are overlapped into a compound shape, which is then scaled, rotated
and placed inside the frame. Rasterization is an even-odd fill sampled at
pixel centers, so masks are strictly binary.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import GenerationError, InvalidArgumentError
from ..geometry import ForgeryMask

SHAPES = (
    "rectangle", "circle", "ellipse", "triangle", "pentagon", "heptagon",
    "star5", "star8", "star12", "star18",
)
_STAR_POINTS = {"star5": 5, "star8": 8, "star12": 12, "star18": 18}
_REGULAR_SIDES = {"triangle": 3, "pentagon": 5, "heptagon": 7}
_CURVE_VERTICES = 72

MAX_AREA = 0.75
MAX_TRIES = 100


def _regular(n, radius=1.0, phase=np.pi / 2):
    t = phase + 2 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)


def shape_polygon(name: str, aspect: float = 1.0) -> np.ndarray:
    """Vertices ``(V, 2)`` of a base shape with unit outer radius, as ``(x, y)``."""
    if name == "rectangle":
        return np.array([[-1, -aspect], [1, -aspect], [1, aspect], [-1, aspect]], dtype=float)
    if name == "circle":
        return _regular(_CURVE_VERTICES)
    if name == "ellipse":
        return _regular(_CURVE_VERTICES) * np.array([1.0, aspect])
    if name in _REGULAR_SIDES:
        return _regular(_REGULAR_SIDES[name])
    if name in _STAR_POINTS:
        k = _STAR_POINTS[name]
        # inner radius grows with point count so spikes stay wider than a pixel
        inner = 0.45 if k <= 8 else 0.6
        radii = np.where(np.arange(2 * k) % 2 == 0, 1.0, inner)
        t = np.pi / 2 + np.pi * np.arange(2 * k) / k
        return np.stack([radii * np.cos(t), radii * np.sin(t)], axis=1)
    raise InvalidArgumentError(f"unknown shape {name!r}")


def rasterize_polygon(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Even-odd fill of a polygon given in pixel coordinates ``(x, y)``."""
    out = np.zeros((height, width), dtype=bool)
    v = np.asarray(vertices, dtype=np.float64)
    x0, y0 = np.floor(v.min(axis=0)).astype(int)
    x1, y1 = np.ceil(v.max(axis=0)).astype(int)
    c0, c1 = max(x0, 0), min(x1 + 1, width)
    r0, r1 = max(y0, 0), min(y1 + 1, height)
    if c0 >= c1 or r0 >= r1:
        return out
    xc = np.arange(c0, c1) + 0.5
    yc = (np.arange(r0, r1) + 0.5)[:, None]
    inside = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    nxt = np.roll(v, -1, axis=0)
    for (xa, ya), (xb, yb) in zip(v, nxt):
        if ya == yb:
            continue
        straddles = (ya > yc) != (yb > yc)
        x_cross = xa + (yc - ya) * (xb - xa) / (yb - ya)
        inside ^= straddles & (xc[None, :] < x_cross)
    out[r0:r1, c0:c1] = inside
    return out


@dataclass
class ShapeComponent:
    shape: str
    scale: float
    rotation: float
    offset: tuple
    aspect: float = 1.0


@dataclass
class MaskRecipe:
    components: list
    radius: float
    rotation: float
    center: tuple
    seed: object = None
    rejected: int = 0
    area: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        for c in d["components"]:
            c["offset"] = list(c["offset"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MaskRecipe":
        comps = [ShapeComponent(**{**c, "offset": tuple(c["offset"])}) for c in d["components"]]
        return cls(comps, d["radius"], d["rotation"], tuple(d["center"]), d.get("seed"),
                   d.get("rejected", 0), d.get("area", 0.0))


def _rotation(deg):
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def render_recipe(recipe: MaskRecipe, height: int, width: int) -> np.ndarray:
    """Rasterize a recipe into a boolean ``height x width`` array."""
    mask = np.zeros((height, width), dtype=bool)
    outer = _rotation(recipe.rotation)
    for comp in recipe.components:
        poly = shape_polygon(comp.shape, comp.aspect) * comp.scale
        poly = poly @ _rotation(comp.rotation).T + np.asarray(comp.offset)
        pix = (poly @ outer.T) * recipe.radius + np.asarray(recipe.center)
        mask |= rasterize_polygon(pix, height, width)
    return mask


def _draw_recipe(rng, height, width, scale_range, max_components):
    n = int(rng.integers(1, max_components + 1))
    comps = []
    for i in range(n):
        comps.append(ShapeComponent(
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            scale=float(rng.uniform(0.5, 1.0)),
            rotation=float(rng.uniform(0.0, 360.0)),
            # later components overlap the first one
            offset=(0.0, 0.0) if i == 0 else tuple(float(v) for v in rng.uniform(-0.6, 0.6, size=2)),
            aspect=float(rng.uniform(0.4, 1.0)),
        ))
    radius = float(rng.uniform(*scale_range) * min(height, width))
    rotation = float(rng.uniform(0.0, 360.0))
    center = (float(rng.uniform(0, width)), float(rng.uniform(0, height)))
    return MaskRecipe(comps, radius, rotation, center)


def sample_mask(
    height: int,
    width: int,
    rng=None,
    max_area: float = MAX_AREA,
    max_tries: int = MAX_TRIES,
    scale_range: tuple = (0.1, 0.6),
    max_components: int = 3,
):
    """Rejection-sample a compound-shape mask covering at most ``max_area``.

    ``rng`` may be a seed or a ``numpy.random.Generator``. Empty masks are
    rejected as well. Returns ``(ForgeryMask, MaskRecipe)``.
    """
    if height < 128 or width < 128:
        raise InvalidArgumentError(f"mask dimensions must be >= 128, got {height}x{width}")
    if not 1 <= max_components <= 3:
        raise InvalidArgumentError("a compound shape has 1 to 3 components")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    for attempt in range(max_tries):
        recipe = _draw_recipe(rng, height, width, scale_range, max_components)
        m = render_recipe(recipe, height, width)
        area = float(m.mean())
        if 0.0 < area <= max_area:
            recipe.seed = None if seed is None else int(seed)
            recipe.rejected = attempt
            recipe.area = area
            return ForgeryMask(m.astype(np.float64)), recipe
    raise GenerationError(f"no acceptable mask after {max_tries} tries (max area {max_area})")
