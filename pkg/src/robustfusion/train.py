"""Training loop, corruption-sweep evaluation and run comparison."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from robustfusion import corruption as K
from robustfusion.metrics import ConfusionMatrix, miou, pixel_acc
from robustfusion.models import FusionNet, ModelConfig, multi_scale_loss
from robustfusion.sampler import (
    AugPolicy,
    adverse_assignment,
    adverse_seed,
    derive_seed,
    draw_training_sample,
    network_inputs,
)
from robustfusion.scenegen import CLASS_NAMES, IGNORE_ID
from robustfusion.tensor import poly_lr, sgd_step

log = logging.getLogger(__name__)

ADVERSE = "adverse"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 3000
    batch: int = 2
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lr_power: float = 0.9
    seed: int = 0


@dataclass
class TrainResult:
    model: FusionNet
    curve: list = field(default_factory=list)  # (iter, loss, lr)


def train(
    dataset,
    policy: AugPolicy,
    model_config: ModelConfig,
    config: TrainConfig = TrainConfig(),
    progress_every: int = 0,
) -> TrainResult:
    """Momentum SGD with poly learning-rate decay; gradients averaged over ``batch`` draws."""
    if config.iters < 1 or config.batch < 1:
        raise ValueError("iters and batch must be >= 1")
    if len(dataset) == 0:
        raise ValueError("empty training set")
    # initialisation is seeded from the training seed
    model = FusionNet(replace(model_config, init_seed=config.seed))
    params = model.parameters()
    curve = []
    for it in range(config.iters):
        lr = poly_lr(config.base_lr, it, config.iters, config.lr_power)
        total = 0.0
        for b in range(config.batch):
            draw_seed = derive_seed(config.seed, it, b)
            index = int(np.random.default_rng(draw_seed).integers(len(dataset)))
            ex = draw_training_sample(dataset, index, policy, draw_seed)
            # overflow is reported through TrainingDiverged below
            with np.errstate(over="ignore", invalid="ignore"):
                loss = multi_scale_loss(model.forward(ex.camera, ex.depth), ex.labels, ignore_id=IGNORE_ID)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at iteration {it} (lr={lr:.3g}, sample index {index})")
            loss.backward(np.array(1.0 / config.batch))
            total += value
        sgd_step(params, lr, config.momentum, config.weight_decay)
        curve.append((it, total / config.batch, lr))
        if progress_every and (it % progress_every == 0 or it == config.iters - 1):
            log.info("iter %d loss %.4f lr %.2e", it, total / config.batch, lr)
    return TrainResult(model, curve)


def write_curve(path, curve: Sequence[tuple], config_echo: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (config_echo or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "loss", "lr"])
        for it, loss, lr in curve:
            w.writerow([it, repr(float(loss)), repr(float(lr))])


# --- evaluation ---------------------------------------------------------------


@dataclass
class ReportRow:
    spec: str
    acc: float
    miou: float
    class_iou: tuple
    pixels: int


@dataclass
class RunReport:
    rows: list
    config: dict = field(default_factory=dict)
    seed: int = 0

    def row(self, spec: str) -> ReportRow:
        for r in self.rows:
            if r.spec == spec:
                return r
        raise KeyError(spec)

    @property
    def specs(self) -> list:
        return [r.spec for r in self.rows]

    def miou(self, spec: str) -> float:
        return self.row(spec).miou

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.config.items():
            buf.write(f"# {k}={v}\n")
        buf.write(f"# eval_seed={self.seed}\n")
        n = len(self.rows[0].class_iou) if self.rows else len(CLASS_NAMES)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["spec", "acc", "miou", "pixels"] + [f"iou_{i}" for i in range(n)])
        for r in self.rows:
            w.writerow([r.spec, repr(r.acc), repr(r.miou), r.pixels] + [repr(float(v)) for v in r.class_iou])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunReport":
        config, seed, body = {}, 0, []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                if k == "eval_seed":
                    seed = int(v)
                else:
                    config[k] = v
            elif line:
                body.append(line)
        reader = csv.DictReader(body)
        rows = []
        for rec in reader:
            ious = tuple(float(rec[k]) for k in rec if k.startswith("iou_"))
            rows.append(ReportRow(rec["spec"], float(rec["acc"]), float(rec["miou"]), ious, int(rec["pixels"])))
        return cls(rows, config, seed)

    @classmethod
    def read_csv(cls, path) -> "RunReport":
        return cls.from_csv(Path(path).read_text())


def expand_specs(specs: Iterable) -> list:
    """Parse spec strings; ``adverse`` stays a keyword for the fixed adverse set."""
    out = []
    for s in specs:
        if isinstance(s, str):
            s = s.strip()
            out.append(ADVERSE if s == ADVERSE else K.parse_spec(s))
        else:
            out.append(s)
    return out


def evaluate(model: FusionNet, dataset, specs: Iterable, seed: int = 0, config_echo: Optional[dict] = None) -> RunReport:
    """One confusion matrix per corruption spec over the whole validation set.

    Sample ``i`` is always corrupted with seed ``derive_seed(seed, i)``, so every
    model sees the identical disturbed inputs.
    """
    if model.config.num_classes != dataset.num_classes:
        raise ValueError(
            f"model predicts {model.config.num_classes} classes, dataset has {dataset.num_classes}"
        )
    rows = []
    for spec in expand_specs(specs):
        cm = ConfusionMatrix(dataset.num_classes)
        for i in range(len(dataset)):
            sample = dataset[i]
            if spec == ADVERSE:
                corrupted = K.apply(sample, adverse_assignment(i, seed), adverse_seed(i, seed))
            else:
                corrupted = K.apply(sample, spec, derive_seed(seed, i))
            camera, depth = network_inputs(corrupted)
            cm.accumulate(model.predict(camera, depth), sample.labels, ignore_id=IGNORE_ID)
        rows.append(ReportRow(str(spec), pixel_acc(cm), miou(cm), tuple(cm.class_iou()), cm.total))
    return RunReport(rows, dict(config_echo or {}), seed)


def average_reports(reports: Sequence[RunReport]) -> RunReport:
    """Seed average: mean acc, mIoU and per-class IoU per spec."""
    if not reports:
        raise ValueError("nothing to average")
    specs = reports[0].specs
    for r in reports[1:]:
        if r.specs != specs:
            raise ValueError("reports cover different corruption specs")
    rows = []
    for s in specs:
        rs = [r.row(s) for r in reports]
        ious = np.array([r.class_iou for r in rs], dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # classes absent in every run stay NaN
            class_iou = tuple(np.nanmean(ious, axis=0))
        rows.append(
            ReportRow(
                s,
                float(np.mean([r.acc for r in rs])),
                float(np.mean([r.miou for r in rs])),
                class_iou,
                rs[0].pixels,
            )
        )
    return RunReport(rows, {"averaged_over": len(reports)}, reports[0].seed)


@dataclass(frozen=True)
class Expectation:
    """``better`` should beat ``worse`` on ``spec`` by more than ``-tolerance``.

    ``strict`` expectations require a positive margin beyond the tolerance
    band, i.e. delta > -tolerance when tolerance > 0 and delta > 0 otherwise.
    """

    better: str
    worse: str
    spec: str
    tolerance: float = 0.0
    strict: bool = True


@dataclass
class OrderingSummary:
    deltas: dict  # (a, b) -> {spec: miou_a - miou_b}
    checks: list  # (Expectation, delta, ok)

    @property
    def violations(self) -> list:
        return [(e, d) for e, d, ok in self.checks if not ok]


def compare_runs(reports: dict, expectations: Sequence[Expectation] = ()) -> OrderingSummary:
    """Pairwise mIoU deltas per spec and pass/fail for each expected ordering."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    names = list(reports)
    specs = reports[names[0]].specs
    for n in names[1:]:
        if reports[n].specs != specs or reports[n].seed != reports[names[0]].seed:
            raise ValueError(f"report {n!r} was evaluated on a different eval set")
    deltas = {}
    for a in names:
        for b in names:
            if a != b:
                deltas[(a, b)] = {s: reports[a].miou(s) - reports[b].miou(s) for s in specs}
    checks = []
    for e in expectations:
        d = deltas[(e.better, e.worse)][e.spec]
        ok = d > -e.tolerance if e.strict else d >= -e.tolerance
        checks.append((e, d, ok))
    return OrderingSummary(deltas, checks)


def config_echo(**sections) -> dict:
    """Flatten dataclass configs into ``section.key`` pairs for artifact headers."""
    out = {}
    for name, obj in sections.items():
        d = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj) if hasattr(obj, "__dataclass_fields__") else obj
        for k, v in d.items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            out[f"{name}.{k}"] = v
    return out
