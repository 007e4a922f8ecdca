"""Plain-text run configuration: ``key = value`` lines, ``#`` comments.

Every default of the pipeline lives here so one file reproduces a run.
Unknown keys are rejected; command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from robustfusion.lidar import DEFAULT_RADIUS
from robustfusion.models import ARCHS, ModelConfig
from robustfusion.sampler import AugPolicy
from robustfusion.scenegen import SceneSpec
from robustfusion.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # dataset
    data_seed: int = 0
    train_n: int = 200
    val_n: int = 50
    image_h: int = 48
    image_w: int = 96
    radius: int = DEFAULT_RADIUS
    # model
    arch: str = "late"
    branch_widths: tuple = (16, 24, 32)
    encoder_depth: int = 2
    # augmentation
    policy: str = "slm"
    rlm_weights: tuple = (1, 2, 4)
    resize_range: tuple = (0.5, 2.0)
    flip_prob: float = 0.5
    # optimisation
    iters: int = 3000
    batch: int = 2
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lr_power: float = 0.9
    train_seed: int = 0
    # evaluation
    eval_seed: int = 0
    specs: tuple = ("clean", "adverse", "blackout:camera", "blackout:depth", "fog:0.005", "fog:0.01", "fog:0.02")

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.policy not in ("slm", "rlm"):
            raise ConfigError(f"policy must be slm or rlm, got {self.policy!r}")
        for name in ("train_n", "val_n", "iters", "batch"):
            if getattr(self, name) < (0 if name.endswith("_n") else 1):
                raise ConfigError(f"{name} out of range: {getattr(self, name)}")

    # --- parsing --------------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, key: str, text: str):
        """Convert ``text`` to the type of the default for ``key``."""
        defaults = cls()
        if key not in cls.keys():
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(defaults, key)
        text = text.strip()
        try:
            if isinstance(default, tuple):
                items = [t.strip() for t in text.split(",") if t.strip()]
                kind = type(default[0])
                return tuple(kind(t) for t in items)
            if isinstance(default, bool):
                return text.lower() in ("1", "true", "yes")
            return type(default)(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> dict:
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{n}: expected key = value")
            values[key.strip()] = cls.coerce(key.strip(), value)
        return values

    @classmethod
    def load(cls, path: Optional[str | Path] = None, **overrides) -> "RunConfig":
        """File values first, then any non-None ``overrides`` on top."""
        values = cls.parse(Path(path).read_text(), str(path)) if path else {}
        for k, v in overrides.items():
            if k not in cls.keys():
                raise ConfigError(f"unknown config key {k!r}")
            if v is not None:
                values[k] = cls.coerce(k, v) if isinstance(v, str) else v
        return cls(**values)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    def echo(self) -> dict:
        return {f"run.{k}": v for k, v in self.to_dict().items()}

    # --- views onto the library configs ---------------------------------------

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(seed=self.data_seed, image_h=self.image_h, image_w=self.image_w)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            arch=self.arch,
            branch_widths=self.branch_widths,
            encoder_depth=self.encoder_depth,
            init_seed=self.train_seed,
        )

    def aug_policy(self) -> AugPolicy:
        return AugPolicy(self.policy, self.rlm_weights, self.resize_range, self.flip_prob)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iters=self.iters,
            batch=self.batch,
            base_lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_power=self.lr_power,
            seed=self.train_seed,
        )

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)
