"""Command-line entry point: gen-data, train, eval, render.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from robustfusion import corruption as K
from robustfusion.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from robustfusion.config import ConfigError, RunConfig
from robustfusion.dataset import SceneDataset
from robustfusion.models import ARCHS
from robustfusion.sampler import adverse_assignment, adverse_seed, derive_seed, network_inputs
from robustfusion.scenegen import IGNORE_ID, build_dataset, write_ppm
from robustfusion.train import ADVERSE, TrainingDiverged, evaluate, expand_specs, train, write_curve

log = logging.getLogger("robustfusion")

# fixed class palette (RGB); ignore pixels render black
PALETTE = np.array(
    [
        [90, 90, 90],  # background
        [128, 64, 128],  # road
        [0, 0, 255],  # car
        [220, 20, 60],  # pedestrian
        [255, 220, 0],  # pole
        [70, 130, 180],  # building
    ],
    dtype=np.uint8,
)
IGNORE_COLOR = np.array([0, 0, 0], dtype=np.uint8)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def colorize(labels: np.ndarray) -> np.ndarray:
    """[H,W] class ids to a [3,H,W] float image in [0,1]."""
    rgb = np.empty(labels.shape + (3,), dtype=np.uint8)
    known = labels != IGNORE_ID
    if np.any(labels[known] >= len(PALETTE)) or np.any(labels[known] < 0):
        raise ValueError("label id outside the palette")
    rgb[known] = PALETTE[labels[known]]
    rgb[~known] = IGNORE_COLOR
    return rgb.transpose(2, 0, 1) / 255.0


def _run_config(args, **overrides) -> RunConfig:
    try:
        return RunConfig.load(getattr(args, "config", None), **overrides)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _parse_specs(text: str) -> list:
    try:
        return expand_specs(s for s in text.split(",") if s.strip())
    except K.CorruptionSpecError as exc:
        raise UsageError(str(exc)) from exc


def _dataset_echo(ds: SceneDataset) -> dict:
    m = ds.manifest
    return {f"data.{k}": m[k] for k in ("seed", "n_train", "n_val", "H", "W") if k in m} | {"data.split": ds.split}


# --- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _run_config(args, data_seed=args.seed, train_n=args.train_n, val_n=args.val_n)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
    build_dataset(cfg.scene_spec(), cfg.train_n, cfg.val_n, out)
    (out / "run_config.txt").write_text(cfg.to_text())
    print(f"wrote {cfg.train_n} train + {cfg.val_n} val samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(
        args,
        arch=args.arch,
        policy=args.policy,
        iters=args.iters,
        train_seed=args.seed,
        lr=args.lr,
        batch=args.batch,
    )
    ds = SceneDataset(args.data, "train", cfg.radius)
    echo = cfg.echo() | _dataset_echo(ds)
    result = train(ds, cfg.aug_policy(), cfg.model_config(), cfg.train_config(), progress_every=args.log_every)
    out = Path(args.out)
    save_checkpoint(out, result.model, echo)
    curve_path = out.with_name(out.name + ".curve.csv")
    write_curve(curve_path, result.curve, echo)
    print(f"checkpoint {out}\ncurve {curve_path}\nfinal loss {result.curve[-1][1]:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args, eval_seed=args.seed, specs=args.specs)
    specs = _parse_specs(",".join(cfg.specs))
    model, meta = load_checkpoint(args.checkpoint)
    ds = SceneDataset(args.data, args.split, cfg.radius)
    echo = {f"checkpoint.{k}": v for k, v in meta.items()} | {
        "eval.seed": cfg.eval_seed,
        "eval.specs": ",".join(cfg.specs),
        "eval.radius": cfg.radius,
    } | _dataset_echo(ds)
    report = evaluate(model, ds, specs, cfg.eval_seed, echo)
    if args.out:
        report.write_csv(args.out)
    for row in report.rows:
        print(f"{row.spec:24s} acc {row.acc:.4f} mIoU {row.miou:.4f}")
    return 0


def cmd_render(args) -> int:
    cfg = _run_config(args, eval_seed=args.seed)
    specs = _parse_specs(args.spec)
    if len(specs) != 1:
        raise UsageError("render takes exactly one corruption spec")
    spec = specs[0]
    model, meta = load_checkpoint(args.checkpoint)
    ds = SceneDataset(args.data, args.split, cfg.radius)
    if not 0 <= args.index < len(ds):
        raise UsageError(f"index {args.index} out of range for {len(ds)} samples")
    sample = ds[args.index]
    if spec == ADVERSE:
        spec_obj = adverse_assignment(args.index, cfg.eval_seed)
        corrupted = K.apply(sample, spec_obj, adverse_seed(args.index, cfg.eval_seed))
    else:
        spec_obj = spec
        corrupted = K.apply(sample, spec, derive_seed(cfg.eval_seed, args.index))
    if model.config.num_classes != ds.num_classes:
        raise ValueError("checkpoint and dataset disagree on the number of classes")
    pred = model.predict(*network_inputs(corrupted))
    echo = {f"checkpoint.{k}": v for k, v in meta.items() if k.startswith(("model.", "run.arch", "run.policy"))}
    echo |= {"render.index": args.index, "render.spec": str(spec_obj), "eval.seed": cfg.eval_seed}
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    inv = corrupted.depth[0]
    depth_vis = np.repeat((inv / max(float(inv.max()), 1e-12))[None], 3, axis=0)
    outputs = {
        "input": corrupted.image,
        "depth": depth_vis,
        "pred": colorize(pred),
        "gt": colorize(sample.labels),
    }
    for name, img in outputs.items():
        path = prefix.with_name(f"{prefix.name}_{name}.ppm")
        write_ppm(path, img, echo)
        print(path)
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustfusion", description="Synthetic camera+lidar segmentation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--train-n", type=int)
    g.add_argument("--val-n", type=int)
    g.add_argument("--force", action="store_true")
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", choices=ARCHS)
    t.add_argument("--policy", choices=("slm", "rlm"))
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--out", required=True, help="checkpoint path; the curve goes to <out>.curve.csv")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under corruption specs")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--specs", help='comma list, e.g. "clean,fog:0.02,blackout:camera,adverse"')
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--split", default="val")
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="write input, prediction and ground-truth PPMs for one sample")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--index", type=int, required=True)
    r.add_argument("--spec", default="clean")
    r.add_argument("--out", required=True, help="output prefix")
    r.add_argument("--seed", type=int)
    r.add_argument("--split", default="val")
    r.add_argument("--config")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        verbose = args.verbose or getattr(args, "log_every", 0)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"robustfusion: usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, CheckpointError, TrainingDiverged) as exc:
        print(f"robustfusion: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
