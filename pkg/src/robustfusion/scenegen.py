"""Procedural street scenes with paired camera, lidar, labels and depth.

A scene is a ground plane (road band plus verge), axis-aligned boxes for cars,
pedestrians, poles and buildings, and empty sky. Camera pixels and lidar beams
are both resolved by ray casting against that layout, so the two sensors agree
geometrically by construction.

Camera frame: x right, y down, z forward, origin at the sensor, mounted
``CAMERA_HEIGHT`` metres above the ground plane.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

CLASS_NAMES = ("background", "road", "car", "pedestrian", "pole", "building")
NUM_CLASSES = len(CLASS_NAMES)
BACKGROUND, ROAD, CAR, PEDESTRIAN, POLE, BUILDING = range(NUM_CLASSES)
IGNORE_ID = 255

SKY_DEPTH = 1000.0
CAMERA_HEIGHT = 1.6
ROAD_HALF_WIDTH = 5.0

# 16 beams, emulating a 16-layer scanner
LIDAR_ROWS = 16
LIDAR_ELEVATION_DEG = (-25.0, 10.0)
LIDAR_AZIMUTH_STEP_DEG = 3.0

_TRAIN_STREAM = 0
_VAL_STREAM = 1


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_h: int
    image_w: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.image_w and 0 <= self.cy <= self.image_h):
            raise ValueError("principal point outside the image")

    @classmethod
    def for_image(cls, image_h: int, image_w: int) -> "CameraIntrinsics":
        return cls(fx=image_w / 2, fy=image_w / 2, cx=image_w / 2, cy=image_h / 2, image_h=image_h, image_w=image_w)

    def pixel_rays(self) -> np.ndarray:
        """Unnormalised ray directions through pixel centres, shape (H, W, 3) with z=1."""
        v, u = np.mgrid[0 : self.image_h, 0 : self.image_w].astype(float)
        return np.stack(
            [(u + 0.5 - self.cx) / self.fx, (v + 0.5 - self.cy) / self.fy, np.ones_like(u)], axis=-1
        )


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    image_h: int = 48
    image_w: int = 96
    cars: tuple = (1, 4)
    pedestrians: tuple = (1, 3)
    poles: tuple = (1, 3)
    buildings: tuple = (3, 6)

    @property
    def num_classes(self) -> int:
        return NUM_CLASSES

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.for_image(self.image_h, self.image_w)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [x0,x1]x[y0,y1]x[z0,z1] in camera coordinates."""

    lo: tuple
    hi: tuple
    label: int
    color: tuple


@dataclass
class Layout:
    boxes: list = field(default_factory=list)
    road_color: tuple = (0.36, 0.36, 0.38)
    verge_color: tuple = (0.34, 0.46, 0.24)
    sky_color: tuple = (0.55, 0.70, 0.92)
    illumination: float = 1.0
    texture_seed: int = 0


@dataclass
class Sample:
    """One scene instance.

    ``image`` is [3,H,W] in [0,1]; ``points`` is (N,3) camera-frame metres;
    ``labels`` is [H,W] class ids; ``true_depth`` is [1,H,W] z-depth in metres
    with sky at ``SKY_DEPTH``. ``depth`` holds the densified inverse-depth
    image once the lidar has been preprocessed (0 means no return).
    """

    image: np.ndarray
    points: np.ndarray
    labels: np.ndarray
    true_depth: Optional[np.ndarray]
    depth: Optional[np.ndarray] = None
    index: int = -1

    def replace(self, **changes) -> "Sample":
        return replace(self, **changes)


def _ray_box_hits(origins_dirs: np.ndarray, boxes: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hit parameter t, box index and hit face axis for rays from the origin."""
    d = origins_dirs.reshape(-1, 3)
    best_t = np.full(d.shape[0], np.inf)
    best_i = np.full(d.shape[0], -1)
    best_axis = np.zeros(d.shape[0], dtype=int)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        for i, b in enumerate(boxes):
            lo, hi = np.asarray(b.lo), np.asarray(b.hi)
            t1 = lo * inv
            t2 = hi * inv
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            # rays parallel to a slab: inside -> unbounded, outside -> miss
            par = d == 0
            inside = (lo <= 0) & (0 <= hi)
            tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
            t_near = tmin.max(axis=1)
            t_far = tmax.min(axis=1)
            hit = (t_near <= t_far) & (t_near > 0) & (t_near < best_t)
            best_t = np.where(hit, t_near, best_t)
            best_i = np.where(hit, i, best_i)
            best_axis = np.where(hit, tmin.argmax(axis=1), best_axis)
    return best_t, best_i, best_axis


def cast_rays(dirs: np.ndarray, layout: Layout) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Resolve rays (z component 1) against the layout.

    Returns z-depth, class label, surface id (-1 ground, -2 sky, >=0 box index)
    and the hit face axis, all flattened.
    """
    flat = dirs.reshape(-1, 3)
    t_box, idx, axis = _ray_box_hits(flat, layout.boxes)
    with np.errstate(divide="ignore"):
        t_ground = np.where(flat[:, 1] > 0, CAMERA_HEIGHT / flat[:, 1], np.inf)
    ground_first = t_ground < t_box
    surface = np.where(ground_first, -1, idx)
    t = np.where(ground_first, t_ground, t_box)
    sky = ~np.isfinite(t)
    surface = np.where(sky, -2, surface)
    depth = np.where(sky, SKY_DEPTH, t * flat[:, 2])

    labels = np.full(flat.shape[0], BACKGROUND, dtype=np.int64)
    box_labels = np.array([b.label for b in layout.boxes] + [BACKGROUND], dtype=np.int64)
    labels = np.where(surface >= 0, box_labels[np.where(surface >= 0, surface, -1)], labels)
    on_ground = surface == -1
    x_ground = np.where(on_ground, t * flat[:, 0], np.inf)
    labels = np.where(on_ground & (np.abs(x_ground) <= ROAD_HALF_WIDTH), ROAD, labels)
    return depth, labels, surface, axis


def render(layout: Layout, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render camera image, labels and true depth for a layout."""
    h, w = intrinsics.image_h, intrinsics.image_w
    rays = intrinsics.pixel_rays()
    depth, labels, surface, axis = cast_rays(rays, layout)

    colors = np.empty((h * w, 3))
    sky = surface == -2
    ground = surface == -1
    road = ground & (labels == ROAD)
    v = np.repeat(np.arange(h), w)
    sky_grad = 1.0 - 0.25 * v / h
    colors[sky] = np.outer(sky_grad[sky], layout.sky_color)
    colors[road] = layout.road_color
    colors[ground & ~road] = layout.verge_color
    boxes = surface >= 0
    if layout.boxes:
        box_colors = np.array([b.color for b in layout.boxes])
        # front faces brightest, sides darker, tops lighter
        shade = np.array([0.78, 1.12, 1.0])[axis]
        colors[boxes] = box_colors[surface[boxes]] * shade[boxes, None]

    # texture varies with distance so far surfaces look smoother
    rng = np.random.default_rng(layout.texture_seed)
    noise = rng.normal(0.0, 0.04, size=(h * w, 1)) + rng.normal(0.0, 0.015, size=(h * w, 3))
    noise[sky] *= 0.3
    colors = (colors + noise) * layout.illumination
    image = np.clip(colors, 0.0, 1.0).reshape(h, w, 3).transpose(2, 0, 1)
    return image, labels.reshape(h, w), depth.reshape(1, h, w)


def lidar_pixels(intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixel rows/cols sampled by the scanner's regular angular grid.

    Beam directions are snapped to pixel centres so each return lands on the
    pixel whose depth it measures.
    """
    elev = np.deg2rad(np.linspace(LIDAR_ELEVATION_DEG[0], LIDAR_ELEVATION_DEG[1], LIDAR_ROWS))
    rows = np.floor(intrinsics.cy - intrinsics.fy * np.tan(elev)).astype(int)
    half_fov = np.arctan2(intrinsics.image_w - intrinsics.cx, intrinsics.fx)
    az = np.deg2rad(np.arange(-np.rad2deg(half_fov), np.rad2deg(half_fov), LIDAR_AZIMUTH_STEP_DEG))
    cols = np.floor(intrinsics.cx + intrinsics.fx * np.tan(az)).astype(int)
    rows = np.unique(rows[(rows >= 0) & (rows < intrinsics.image_h)])
    cols = np.unique(cols[(cols >= 0) & (cols < intrinsics.image_w)])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr.ravel(), cc.ravel()


def scan_lidar(layout: Layout, intrinsics: CameraIntrinsics) -> np.ndarray:
    """First-surface lidar returns as an (N,3) array; sky beams produce nothing."""
    rows, cols = lidar_pixels(intrinsics)
    rays = intrinsics.pixel_rays()[rows, cols]
    depth, _, surface, _ = cast_rays(rays, layout)
    keep = surface != -2
    return rays[keep] * depth[keep, None]


def _sample_layout(spec: SceneSpec, rng: np.random.Generator) -> Layout:
    boxes: list[Box] = []
    gy = CAMERA_HEIGHT

    def uniform_count(rng_range):
        return int(rng.integers(rng_range[0], rng_range[1] + 1))

    for _ in range(uniform_count(spec.buildings)):
        side = rng.choice([-1.0, 1.0])
        inner = rng.uniform(8.0, 12.0)
        depth = rng.uniform(6.0, 12.0)
        z0 = rng.uniform(5.0, 55.0)
        length = rng.uniform(6.0, 20.0)
        height = rng.uniform(5.0, 16.0)
        x0, x1 = (inner, inner + depth) if side > 0 else (-inner - depth, -inner)
        tint = rng.uniform(0.45, 0.8)
        color = (tint + 0.12, tint, tint - 0.1)
        boxes.append(Box((x0, gy - height, z0), (x1, gy, min(z0 + length, 60.0)), BUILDING, color))

    car_palette = [(0.75, 0.12, 0.1), (0.12, 0.2, 0.7), (0.9, 0.9, 0.88), (0.12, 0.12, 0.14), (0.8, 0.65, 0.1)]
    for _ in range(uniform_count(spec.cars)):
        x = rng.uniform(-3.5, 3.5)
        z = rng.uniform(5.0, 40.0)
        color = car_palette[int(rng.integers(len(car_palette)))]
        boxes.append(Box((x - 0.9, gy - 1.5, z), (x + 0.9, gy, z + 4.2), CAR, color))

    for _ in range(uniform_count(spec.pedestrians)):
        side = rng.choice([-1.0, 1.0])
        x = side * rng.uniform(4.0, 7.0)
        z = rng.uniform(5.0, 25.0)
        color = tuple(rng.uniform(0.2, 0.85, size=3))
        boxes.append(Box((x - 0.3, gy - 1.8, z), (x + 0.3, gy, z + 0.5), PEDESTRIAN, color))

    for _ in range(uniform_count(spec.poles)):
        side = rng.choice([-1.0, 1.0])
        x = side * rng.uniform(5.5, 6.5)
        z = rng.uniform(5.0, 25.0)
        boxes.append(Box((x - 0.25, gy - 6.0, z), (x + 0.25, gy, z + 0.5), POLE, (0.55, 0.55, 0.58)))

    return Layout(
        boxes=boxes,
        illumination=float(rng.uniform(0.9, 1.1)),
        texture_seed=int(rng.integers(2**31)),
    )


def _scene_rng(seed: int, index: int, stream: int = _TRAIN_STREAM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def render_sample(layout: Layout, intrinsics: CameraIntrinsics, index: int = -1) -> Sample:
    image, labels, depth = render(layout, intrinsics)
    points = scan_lidar(layout, intrinsics)
    return Sample(image=image, points=points, labels=labels, true_depth=depth, index=index)


def generate_scene(spec: SceneSpec, index: int, stream: int = _TRAIN_STREAM) -> Sample:
    """Deterministic sample for (spec.seed, stream, index)."""
    layout = _sample_layout(spec, _scene_rng(spec.seed, index, stream))
    return render_sample(layout, spec.intrinsics, index=index)


# --- dataset directory format -------------------------------------------------


def _netpbm_header(magic: str, h: int, w: int, comments: Optional[dict]) -> bytes:
    notes = "".join(f"# {k}={v}\n" for k, v in (comments or {}).items())
    return f"{magic}\n{notes}{w} {h}\n255\n".encode()


def write_ppm(path: Path, image: np.ndarray, comments: Optional[dict] = None) -> None:
    """[3,H,W] floats in [0,1] as 8-bit binary PPM; ``comments`` become header lines."""
    h, w = image.shape[1:]
    data = np.clip(np.round(image.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Path(path).write_bytes(_netpbm_header("P6", h, w, comments) + data.tobytes())


def write_pgm(path: Path, labels: np.ndarray, comments: Optional[dict] = None) -> None:
    h, w = labels.shape
    Path(path).write_bytes(_netpbm_header("P5", h, w, comments) + labels.astype(np.uint8).tobytes())


def _read_netpbm(path: Path) -> tuple[str, np.ndarray]:
    raw = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode())
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit netpbm is supported")
    channels = 3 if magic == "P6" else 1
    arr = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=pos)
    return magic, arr.reshape(h, w, channels)


def read_ppm(path) -> np.ndarray:
    magic, arr = _read_netpbm(Path(path))
    if magic != "P6":
        raise ValueError(f"{path}: expected P6, found {magic}")
    return arr.transpose(2, 0, 1).astype(float) / 255.0


def read_pgm(path) -> np.ndarray:
    magic, arr = _read_netpbm(Path(path))
    if magic != "P5":
        raise ValueError(f"{path}: expected P5, found {magic}")
    return arr[:, :, 0].astype(np.int64)


def write_sample(sample_dir: Path, sample: Sample) -> None:
    sample_dir.mkdir(parents=True, exist_ok=True)
    write_ppm(sample_dir / "image.ppm", sample.image)
    write_pgm(sample_dir / "labels.pgm", sample.labels)
    sample_dir.joinpath("depth_true.bin").write_bytes(sample.true_depth[0].astype("<f8").tobytes())
    lines = "".join(f"{x:.6f},{y:.6f},{z:.6f}\n" for x, y, z in sample.points)
    sample_dir.joinpath("points.csv").write_text(lines)


def read_sample(sample_dir: Path, image_h: int, image_w: int, index: int = -1) -> Sample:
    sample_dir = Path(sample_dir)
    image = read_ppm(sample_dir / "image.ppm")
    labels = read_pgm(sample_dir / "labels.pgm")
    depth = np.frombuffer(sample_dir.joinpath("depth_true.bin").read_bytes(), dtype="<f8")
    text = sample_dir.joinpath("points.csv").read_text().strip()
    points = np.array([[float(v) for v in ln.split(",")] for ln in text.splitlines()]) if text else np.zeros((0, 3))
    return Sample(
        image=image,
        points=points.reshape(-1, 3),
        labels=labels,
        true_depth=depth.reshape(1, image_h, image_w).copy(),
        index=index,
    )


def write_manifest(path: Path, entries: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def read_manifest(path: Path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def build_dataset(spec: SceneSpec, n_train: int, n_val: int, out_dir) -> Path:
    """Write ``n_train + n_val`` samples plus ``manifest.txt`` under ``out_dir``.

    Train and val samples come from separate seed streams of ``spec.seed``.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    if not os.access(root, os.W_OK):
        raise PermissionError(f"cannot write to {root}")
    intr = spec.intrinsics
    for split, n, stream in (("train", n_train, _TRAIN_STREAM), ("val", n_val, _VAL_STREAM)):
        for i in range(n):
            write_sample(root / split / f"{i:05d}", generate_scene(spec, i, stream))
    write_manifest(
        root / "manifest.txt",
        {
            "fx": repr(intr.fx),
            "fy": repr(intr.fy),
            "cx": repr(intr.cx),
            "cy": repr(intr.cy),
            "H": spec.image_h,
            "W": spec.image_w,
            "C": NUM_CLASSES,
            "n_train": n_train,
            "n_val": n_val,
            "seed": spec.seed,
            "classes": ",".join(CLASS_NAMES),
        },
    )
    return root
