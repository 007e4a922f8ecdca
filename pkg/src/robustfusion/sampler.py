"""Training-time augmentation (SLM / RLM) and the fixed adverse evaluation set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from robustfusion import corruption as K
from robustfusion.lidar import encode_depth, normalize_image
from robustfusion.scenegen import IGNORE_ID, Sample
from robustfusion.tensor import nearest_resize, resize_array

CATEGORIES = ("clean", "partial", "full")
MIN_EXTENT = 8


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class AugPolicy:
    mode: str = "slm"
    rlm_weights: tuple = (1, 2, 4)
    resize_range: tuple = (0.5, 2.0)
    flip_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", self.mode.lower())
        if self.mode not in ("slm", "rlm"):
            raise ValueError(f"policy mode must be slm or rlm, got {self.mode!r}")
        if len(self.rlm_weights) != 3 or min(self.rlm_weights) <= 0:
            raise ValueError("rlm_weights needs three positive entries")
        if not 0 < self.resize_range[0] <= self.resize_range[1]:
            raise ValueError("resize range must be positive and ordered")

    @property
    def category_probs(self) -> np.ndarray:
        wts = np.asarray(self.rlm_weights, dtype=float)
        return wts / wts.sum()


class AugPlan(NamedTuple):
    flip: bool
    scale: float
    category: str
    stream: Optional[str]
    corruption_seed: int


class TrainingExample(NamedTuple):
    camera: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    plan: AugPlan


def plan_augmentation(policy: AugPolicy, seed: int) -> AugPlan:
    """All random choices for one training draw, fixed by ``seed``."""
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < policy.flip_prob)
    scale = float(rng.uniform(*policy.resize_range))
    u = rng.random()
    stream_u = rng.random()
    corruption_seed = int(rng.integers(2**63 - 1))
    if policy.mode == "slm":
        return AugPlan(flip, scale, "clean", None, corruption_seed)
    cdf = np.cumsum(policy.category_probs)
    category = CATEGORIES[min(int(np.searchsorted(cdf, u, side="right")), 2)]
    stream = None if category == "clean" else K.STREAMS[int(stream_u < 0.5)]
    return AugPlan(flip, scale, category, stream, corruption_seed)


def _fit(arr: np.ndarray, h: int, w: int, fill: float) -> np.ndarray:
    """Centre-crop or pad the last two axes to (h, w)."""
    src_h, src_w = arr.shape[-2:]
    out = np.full(arr.shape[:-2] + (h, w), fill, dtype=arr.dtype)

    def spans(src, dst):
        if src >= dst:
            off = (src - dst) // 2
            return slice(off, off + dst), slice(0, dst)
        off = (dst - src) // 2
        return slice(0, src), slice(off, off + src)

    (sy, dy), (sx, dx) = spans(src_h, h), spans(src_w, w)
    out[..., dy, dx] = arr[..., sy, sx]
    return out


def geometric_transform(sample: Sample, flip: bool, scale: float) -> Sample:
    """Joint flip and resize of camera, depth and labels, fitted back to the original extent.

    Camera is resized bilinearly; depth and labels by nearest neighbour so the
    depth sentinel and class ids survive. Padding is black camera, infinite
    depth and ignored labels.
    """
    image, depth, labels = sample.image, sample.depth, sample.labels
    if flip:
        image, depth, labels = image[..., ::-1], depth[..., ::-1], labels[..., ::-1]
    h, w = labels.shape
    new_h = max(MIN_EXTENT, int(round(h * scale)))
    new_w = max(MIN_EXTENT, int(round(w * scale)))
    if (new_h, new_w) != (h, w):
        image = _fit(resize_array(np.ascontiguousarray(image), new_h, new_w), h, w, 0.0)
        depth = _fit(nearest_resize(depth, new_h, new_w), h, w, K.DEPTH_SENTINEL)
        labels = _fit(nearest_resize(labels, new_h, new_w), h, w, IGNORE_ID)
    return sample.replace(
        image=np.ascontiguousarray(image),
        depth=np.ascontiguousarray(depth),
        labels=np.ascontiguousarray(labels),
        true_depth=None,
    )


def corrupt_for_plan(sample: Sample, plan: AugPlan) -> Sample:
    if plan.category == "partial":
        return K.apply_polygons(sample, plan.stream, plan.corruption_seed)
    if plan.category == "full":
        return K.apply_blackout(sample, plan.stream)
    return sample


def network_inputs(sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """Normalised camera and encoded depth, as fed to the networks."""
    return normalize_image(sample.image), encode_depth(sample.depth)


def draw_training_sample(dataset, index: int, policy: AugPolicy, seed: int) -> TrainingExample:
    plan = plan_augmentation(policy, seed)
    sample = geometric_transform(dataset[index], plan.flip, plan.scale)
    sample = corrupt_for_plan(sample, plan)
    camera, depth = network_inputs(sample)
    return TrainingExample(camera, depth, sample.labels, plan)


# --- adverse evaluation set ---------------------------------------------------

# one block of seven: 1 clean, 4 polygons, 2 blackouts, streams balanced
_ADVERSE_BLOCK = (
    K.Clean(),
    K.Polygons("camera"),
    K.Polygons("depth"),
    K.Polygons("camera"),
    K.Polygons("depth"),
    K.Blackout("camera"),
    K.Blackout("depth"),
)


def adverse_assignment(index: int, seed: int) -> K.CorruptionSpec:
    """Corruption for validation sample ``index``: a seeded shuffle within blocks of seven."""
    block, pos = divmod(index, len(_ADVERSE_BLOCK))
    perm = np.random.default_rng(derive_seed(seed, block)).permutation(len(_ADVERSE_BLOCK))
    return _ADVERSE_BLOCK[perm[pos]]


def adverse_seed(index: int, seed: int) -> int:
    return derive_seed(seed, 7, index)


def build_adverse_eval_set(dataset, seed: int) -> list[tuple[Sample, K.CorruptionSpec]]:
    """Each validation sample paired with its fixed adverse corruption, already applied."""
    out = []
    for i in range(len(dataset)):
        spec = adverse_assignment(i, seed)
        out.append((K.apply(dataset[i], spec, adverse_seed(i, seed)), spec))
    return out
