"""Sensor disturbances: known noise for training, unknown weather for evaluation.

All functions are pure: they return a new :class:`Sample` and never touch the
labels or the ground-truth depth. Camera images live in [0,1]; the depth stream
is the densified inverse-depth image, whose zero value means "infinity".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from robustfusion.scenegen import Sample

STREAMS = ("camera", "depth")
CAMERA_SATURATION = 1.0
DEPTH_SENTINEL = 0.0

POLYGON_COUNT = (1, 5)
POLYGON_VERTICES = (3, 8)
POLYGON_AREA_FRAC = (0.02, 0.15)

RAIN_BRIGHTNESS = 0.7
RAIN_STREAK_VALUE = 0.9
RAIN_SLANT_DEG = (-60.0, -30.0)
RAIN_PRESETS = {"light": (500, 10), "moderate": (1500, 30), "heavy": (2500, 60)}

FOG_AIRLIGHT = 0.8
FOG_BETAS = (0.005, 0.010, 0.020)

SUN_RADIUS_FRAC = (0.05, 0.20)
SUN_FALLOFF_PX = 2.0


class CorruptionSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Clean:
    def __str__(self):
        return "clean"


@dataclass(frozen=True)
class Polygons:
    stream: str
    count: Optional[int] = None
    area_frac: tuple = POLYGON_AREA_FRAC

    def __str__(self):
        return f"polygons:{self.stream}" + ("" if self.count is None else f":{self.count}")


@dataclass(frozen=True)
class Blackout:
    stream: str

    def __str__(self):
        return f"blackout:{self.stream}"


@dataclass(frozen=True)
class Rain:
    n_lines: int
    length: int
    brightness: float = RAIN_BRIGHTNESS

    def __post_init__(self):
        if self.n_lines < 0 or self.length < 1 or not 0 < self.brightness <= 1:
            raise CorruptionSpecError(f"invalid rain parameters {self}")

    def __str__(self):
        s = f"rain:{self.n_lines}:{self.length}"
        return s if self.brightness == RAIN_BRIGHTNESS else f"{s}:{self.brightness!r}"


@dataclass(frozen=True)
class Fog:
    beta: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise CorruptionSpecError("fog beta must be >= 0")

    def __str__(self):
        return f"fog:{self.beta!r}"


@dataclass(frozen=True)
class BlindingSun:
    count: int = 1
    radius_frac: tuple = SUN_RADIUS_FRAC

    def __str__(self):
        return f"sun:{self.count}"


CorruptionSpec = Union[Clean, Polygons, Blackout, Rain, Fog, BlindingSun]


def _check_stream(stream: str) -> str:
    if stream not in STREAMS:
        raise CorruptionSpecError(f"unknown stream {stream!r}; expected camera or depth")
    return stream


def parse_spec(text: str) -> CorruptionSpec:
    """Parse the CLI text form, e.g. ``fog:0.02`` or ``rain:heavy``."""
    parts = text.strip().split(":")
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "clean" and not args:
            return Clean()
        if kind == "polygons" and 1 <= len(args) <= 2:
            return Polygons(_check_stream(args[0]), int(args[1]) if len(args) == 2 else None)
        if kind == "blackout" and len(args) == 1:
            return Blackout(_check_stream(args[0]))
        if kind == "rain" and len(args) == 1 and args[0] in RAIN_PRESETS:
            return Rain(*RAIN_PRESETS[args[0]])
        if kind == "rain" and len(args) in (2, 3):
            return Rain(int(args[0]), int(args[1]), *(float(a) for a in args[2:]))
        if kind == "fog" and len(args) == 1:
            return Fog(float(args[0]))
        if kind == "sun" and len(args) <= 1:
            return BlindingSun(int(args[0]) if args else 1)
    except ValueError as exc:
        raise CorruptionSpecError(f"bad corruption spec {text!r}: {exc}") from exc
    raise CorruptionSpecError(f"unknown corruption spec {text!r}")


# --- polygons -----------------------------------------------------------------


def random_convex_polygon(rng: np.random.Generator, h: int, w: int, area_frac: tuple) -> np.ndarray:
    """Vertices (k,2) as (x,y) of a convex polygon lying fully inside an h x w image.

    Shapes too elongated to fit at their target area are redrawn.
    """
    limit = np.array([w, h], dtype=float)
    for _ in range(100):
        k = int(rng.integers(POLYGON_VERTICES[0], POLYGON_VERTICES[1] + 1))
        target = rng.uniform(*area_frac) * h * w
        # one vertex per angular sector keeps the shape from degenerating
        angles = (np.arange(k) + rng.uniform(0.0, 1.0, size=k)) * (2 * np.pi / k)
        radii = rng.uniform(0.6, 1.0, size=k)
        pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        pts = pts[_convex_hull(pts)]
        pts = pts * np.array([rng.uniform(1.0, 2.0), 1.0])
        pts *= np.sqrt(target / _polygon_area(pts))
        span = pts.max(axis=0) - pts.min(axis=0)
        if np.all(span <= limit):
            break
    else:
        pts *= (limit / span).min()
        span = pts.max(axis=0) - pts.min(axis=0)
    offset = rng.uniform(0.0, 1.0, size=2) * (limit - span) - pts.min(axis=0)
    return pts + offset


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Indices of the counter-clockwise convex hull (monotone chain)."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for i in order:
        while len(lower) >= 2 and cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 0:
            lower.pop()
        lower.append(i)
    for i in order[::-1]:
        while len(upper) >= 2 and cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 0:
            upper.pop()
        upper.append(i)
    return np.array(lower[:-1] + upper[:-1])


def polygon_mask(vertices: np.ndarray, h: int, w: int) -> np.ndarray:
    """Pixels whose centres lie inside a convex counter-clockwise polygon."""
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    inside = np.ones((h, w), dtype=bool)
    nxt = np.roll(vertices, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(vertices, nxt):
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def polygons_mask(h: int, w: int, seed: int, count: Optional[int] = None, area_frac: tuple = POLYGON_AREA_FRAC) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if count is None:
        count = int(rng.integers(POLYGON_COUNT[0], POLYGON_COUNT[1] + 1))
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(count):
        mask |= polygon_mask(random_convex_polygon(rng, h, w, area_frac), h, w)
    return mask


def apply_polygons(
    sample: Sample,
    stream: str,
    seed: int,
    count: Optional[int] = None,
    area_frac: tuple = POLYGON_AREA_FRAC,
) -> Sample:
    """Paint random convex polygons with the stream's saturation value.

    ``count=None`` draws the count uniformly from ``POLYGON_COUNT``.
    """
    _check_stream(stream)
    if count == 0:
        return sample
    if stream == "camera":
        h, w = sample.image.shape[1:]
        mask = polygons_mask(h, w, seed, count, area_frac)
        return sample.replace(image=np.where(mask[None], CAMERA_SATURATION, sample.image))
    _require_depth(sample)
    h, w = sample.depth.shape[1:]
    mask = polygons_mask(h, w, seed, count, area_frac)
    return sample.replace(depth=np.where(mask[None], DEPTH_SENTINEL, sample.depth))


def _require_depth(sample: Sample) -> None:
    if sample.depth is None:
        raise ValueError("sample has no preprocessed depth image")


def apply_blackout(sample: Sample, stream: str) -> Sample:
    """Total failure of one stream: white camera or all-infinity depth."""
    _check_stream(stream)
    if stream == "camera":
        return sample.replace(image=np.full_like(sample.image, CAMERA_SATURATION))
    _require_depth(sample)
    return sample.replace(depth=np.full_like(sample.depth, DEPTH_SENTINEL))


# --- weather ------------------------------------------------------------------


def rain_streaks(h: int, w: int, n_lines: int, length: int, seed: int) -> tuple[np.ndarray, float]:
    """Boolean streak mask and the slant (radians from vertical) shared by all streaks."""
    rng = np.random.default_rng(seed)
    slant = np.deg2rad(rng.uniform(*RAIN_SLANT_DEG))
    mask = np.zeros((h, w), dtype=bool)
    if n_lines == 0:
        return mask, slant
    y0 = rng.uniform(0, h, size=n_lines)
    x0 = rng.uniform(0, w, size=n_lines)
    t = np.arange(length)
    ys = np.floor(y0[:, None] + t[None] * np.cos(slant)).astype(int)
    xs = np.floor(x0[:, None] + t[None] * np.sin(slant)).astype(int)
    ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    mask[ys[ok], xs[ok]] = True
    return mask, slant


def apply_rain(
    sample: Sample, n_lines: int, length: int, seed: int, brightness: float = RAIN_BRIGHTNESS
) -> Sample:
    """Darken the camera by ``brightness`` and draw slanted 1-px bright streaks."""
    if n_lines < 0:
        raise ValueError("n_lines must be >= 0")
    image = sample.image * brightness if brightness != 1.0 else sample.image.copy()
    h, w = image.shape[1:]
    mask, _ = rain_streaks(h, w, n_lines, length, seed)
    image[:, mask] = RAIN_STREAK_VALUE
    return sample.replace(image=image)


def apply_fog(sample: Sample, beta: float, airlight: float = FOG_AIRLIGHT) -> Sample:
    """Attenuation plus airlight: I' = I*t + L*(1-t), t = exp(-beta*depth)."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if sample.true_depth is None:
        raise ValueError("fog needs the sample's ground-truth depth")
    if beta == 0:
        return sample.replace(image=sample.image.copy())
    t = np.exp(-beta * sample.true_depth)
    return sample.replace(image=sample.image * t + airlight * (1.0 - t))


def sun_alpha(h: int, w: int, count: int, seed: int, radius_frac: tuple = SUN_RADIUS_FRAC) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    alpha = np.zeros((h, w))
    for _ in range(count):
        r = rng.uniform(*radius_frac) * h
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        dist = np.hypot(yy - cy, xx - cx)
        alpha = np.maximum(alpha, np.clip((r + SUN_FALLOFF_PX - dist) / SUN_FALLOFF_PX, 0.0, 1.0))
    return alpha


def apply_blinding_sun(sample: Sample, count: int, seed: int, radius_frac: tuple = SUN_RADIUS_FRAC) -> Sample:
    """White discs with a soft edge on the camera image."""
    if count < 1:
        raise ValueError("count must be >= 1")
    h, w = sample.image.shape[1:]
    a = sun_alpha(h, w, count, seed, radius_frac)[None]
    return sample.replace(image=sample.image * (1.0 - a) + CAMERA_SATURATION * a)


def apply(sample: Sample, spec: CorruptionSpec, seed: int) -> Sample:
    """Dispatch a parsed corruption spec."""
    if isinstance(spec, Clean):
        return sample
    if isinstance(spec, Polygons):
        return apply_polygons(sample, spec.stream, seed, spec.count, spec.area_frac)
    if isinstance(spec, Blackout):
        return apply_blackout(sample, spec.stream)
    if isinstance(spec, Rain):
        return apply_rain(sample, spec.n_lines, spec.length, seed, spec.brightness)
    if isinstance(spec, Fog):
        return apply_fog(sample, spec.beta)
    if isinstance(spec, BlindingSun):
        return apply_blinding_sun(sample, spec.count, seed, spec.radius_frac)
    raise TypeError(f"not a corruption spec: {spec!r}")
