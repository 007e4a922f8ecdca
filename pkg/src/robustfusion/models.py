"""Miniature three-branch segmentation networks with cascade feature fusion.

Four input arrangements share one decoder:

* ``early``      camera and depth concatenated into a 4-channel input
* ``late``       separate camera and depth encoders per scale, concatenated
                 per scale before fusion
* ``img-only``   camera alone (3 channels)
* ``depth-only`` depth alone (1 channel)

Each scale's encoder starts with a stride-2 convolution, so the full, half and
quarter scale branches produce features at 1/2, 1/4 and 1/8 of the input.
Two CFF stages merge low into mid, then the result into full; the final
classifier output is bilinearly upsampled to the input size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from robustfusion import tensor as T
from robustfusion.tensor import ParamState, Tensor

ARCHS = ("early", "late", "img-only", "depth-only")
LOSS_WEIGHTS = (1.0, 0.4, 0.16)


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "late"
    num_classes: int = 6
    branch_widths: tuple = (16, 24, 32)
    encoder_depth: int = 2
    init_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if len(self.branch_widths) != 3 or min(self.branch_widths) < 1:
            raise ValueError("branch_widths needs three positive entries")
        if self.encoder_depth < 1 or self.num_classes < 2:
            raise ValueError("encoder_depth >= 1 and num_classes >= 2 required")
        object.__setattr__(self, "branch_widths", tuple(int(w) for w in self.branch_widths))

    @property
    def streams(self) -> dict[str, int]:
        """Encoder input streams and their channel counts."""
        return {
            "early": {"fused": 4},
            "late": {"camera": 3, "depth": 1},
            "img-only": {"camera": 3},
            "depth-only": {"depth": 1},
        }[self.arch]

    @property
    def input_channels(self) -> int:
        return sum(self.streams.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_widths"] = ",".join(str(w) for w in self.branch_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        widths = d.get("branch_widths", "16,24,32")
        if isinstance(widths, str):
            widths = tuple(int(w) for w in widths.split(","))
        return cls(
            arch=d.get("arch", "late"),
            num_classes=int(d.get("num_classes", 6)),
            branch_widths=tuple(widths),
            encoder_depth=int(d.get("encoder_depth", 2)),
            init_seed=int(d.get("init_seed", 0)),
        )


def _conv_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, kernel shape) for every convolution in the network."""
    w_full, w_mid, w_low = cfg.branch_widths
    shapes = []
    for stream, cin in cfg.streams.items():
        for s, w in zip(("s1", "s2", "s4"), cfg.branch_widths):
            prev = cin
            for k in range(cfg.encoder_depth):
                shapes.append((f"enc.{stream}.{s}.{k}", (w, prev, 3, 3)))
                prev = w
    fan = len(cfg.streams)
    c_full, c_mid, c_low = (fan * w for w in cfg.branch_widths)
    nc = cfg.num_classes
    shapes += [
        ("cff1.low", (w_mid, c_low, 3, 3)),
        ("cff1.high", (w_mid, c_mid, 1, 1)),
        ("cff1.aux", (nc, c_low, 1, 1)),
        ("cff2.low", (w_full, w_mid, 3, 3)),
        ("cff2.high", (w_full, c_full, 1, 1)),
        ("cff2.aux", (nc, w_mid, 1, 1)),
        ("head.conv", (w_full, w_full, 3, 3)),
        ("head.cls", (nc, w_full, 1, 1)),
    ]
    return shapes


def init_params(cfg: ModelConfig) -> dict[str, ParamState]:
    """Uniform fan-in initialisation, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias."""
    rng = np.random.default_rng(cfg.init_seed)
    params: dict[str, ParamState] = {}
    for name, shape in _conv_shapes(cfg):
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(6.0 / fan_in)
        params[f"{name}.weight"] = ParamState(f"{name}.weight", Tensor(rng.uniform(-bound, bound, size=shape)))
        params[f"{name}.bias"] = ParamState(f"{name}.bias", Tensor(np.zeros(shape[0])))
    return params


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count (weights plus biases)."""
    return sum(int(np.prod(s)) + s[0] for _, s in _conv_shapes(cfg))


class FusionNet:
    """Parameters plus forward pass for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, params: Optional[dict[str, ParamState]] = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = {f"{n}.{kind}" for n, _ in _conv_shapes(config) for kind in ("weight", "bias")}
        if set(self.params) != expected:
            raise ValueError("parameter set does not match model config")

    def parameters(self) -> list[ParamState]:
        return list(self.params.values())

    def _conv(self, name, x, stride=1, dilation=1):
        return T.conv2d(
            x,
            self.params[f"{name}.weight"].value,
            self.params[f"{name}.bias"].value,
            stride=stride,
            dilation=dilation,
        )

    def encode(self, stream: str, x: Tensor) -> list[Tensor]:
        """Run one input stream through its three scale encoders."""
        scales = [x, T.avg_downsample(x, 2)]
        scales.append(T.avg_downsample(scales[1], 2))
        feats = []
        for s, inp in zip(("s1", "s2", "s4"), scales):
            h = inp
            for k in range(self.config.encoder_depth):
                h = T.relu(self._conv(f"enc.{stream}.{s}.{k}", h, stride=2 if k == 0 else 1))
            feats.append(h)
        return feats

    def _cff(self, name: str, low: Tensor, high: Tensor) -> tuple[Tensor, Tensor]:
        up = T.bilinear_resize(low, high.shape[1], high.shape[2])
        fused = T.relu(T.add(self._conv(f"{name}.low", up, dilation=2), self._conv(f"{name}.high", high)))
        return fused, self._conv(f"{name}.aux", up)

    def stream_inputs(self, camera: np.ndarray, depth: np.ndarray) -> dict[str, Tensor]:
        if camera.shape[1:] != depth.shape[1:]:
            raise T.ShapeError(f"camera {camera.shape} and depth {depth.shape} differ in extent")
        h, w = camera.shape[1:]
        if h % 4 or w % 4:
            raise T.ShapeError(f"input extents {h}x{w} must be divisible by 4")
        cam, dep = Tensor(camera), Tensor(depth)
        arch = self.config.arch
        if arch == "early":
            return {"fused": T.concat_channels(cam, dep)}
        if arch == "late":
            return {"camera": cam, "depth": dep}
        if arch == "img-only":
            return {"camera": cam}
        return {"depth": dep}

    def forward(self, camera: np.ndarray, depth: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """Return (logits_full, logits_mid, logits_low).

        ``camera`` is a normalised [3,H,W] image, ``depth`` the encoded [1,H,W]
        inverse-depth channel. ``logits_full`` is [C,H,W]; the auxiliary
        outputs sit at H/2 and H/4.
        """
        inputs = self.stream_inputs(camera, depth)
        per_stream = [self.encode(name, x) for name, x in inputs.items()]
        feats = per_stream[0]
        for other in per_stream[1:]:
            feats = [T.concat_channels(a, b) for a, b in zip(feats, other)]
        f_full, f_mid, f_low = feats

        y1, logits_low = self._cff("cff1", f_low, f_mid)
        y2, logits_mid = self._cff("cff2", y1, f_full)
        h = T.relu(self._conv("head.conv", y2))
        logits_half = self._conv("head.cls", h)
        logits_full = T.bilinear_resize(logits_half, camera.shape[1], camera.shape[2])
        return logits_full, logits_mid, logits_low

    def predict(self, camera: np.ndarray, depth: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(camera, depth)[0].data, axis=0)


def forward_early(camera, depth, params, config: ModelConfig):
    if config.arch != "early":
        raise ValueError("config is not an early-fusion config")
    return FusionNet(config, params).forward(camera, depth)


def forward_late(camera, depth, params, config: ModelConfig):
    if config.arch != "late":
        raise ValueError("config is not a late-fusion config")
    return FusionNet(config, params).forward(camera, depth)


def downsample_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return T.nearest_resize(labels, out_h, out_w)


def multi_scale_loss(
    logits: tuple[Tensor, Tensor, Tensor],
    labels: np.ndarray,
    weights: tuple = LOSS_WEIGHTS,
    ignore_id: int = 255,
) -> Tensor:
    """Weighted sum of per-resolution cross-entropies.

    Scales whose downsampled label map is entirely ``ignore_id`` are skipped,
    which only happens under extreme zoom-out augmentation.
    """
    terms = []
    for lg, wt in zip(logits, weights):
        if wt == 0:
            continue
        lab = downsample_labels(labels, lg.shape[1], lg.shape[2])
        if not (lab != ignore_id).any():
            continue
        terms.append(T.scale(T.cross_entropy(lg, lab, ignore_id), wt))
    if not terms:
        raise ValueError("every pixel is ignored at every scale")
    return T.sum_scalars(terms)
