"""Parameter checkpoints: a text manifest followed by raw little-endian doubles.

Layout::

    robustfusion-checkpoint 1
    meta <key>=<value>          (model config and run metadata)
    param <name> <d0,d1,...>    (serialisation order)
    end
    <binary payload>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from robustfusion.models import FusionNet, ModelConfig
from robustfusion.tensor import ParamState, Tensor

MAGIC = "robustfusion-checkpoint 1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: FusionNet, meta: dict | None = None) -> Path:
    path = Path(path)
    lines = [MAGIC]
    entries = {f"model.{k}": v for k, v in model.config.to_dict().items()}
    entries.update(meta or {})
    for k, v in entries.items():
        text = str(v)
        if "\n" in text or "=" in k:
            raise CheckpointError(f"unserialisable metadata entry {k!r}")
        lines.append(f"meta {k}={text}")
    for name, p in model.params.items():
        lines.append(f"param {name} {','.join(str(d) for d in p.shape)}")
    lines.append("end")
    payload = b"".join(p.value.data.astype("<f8").tobytes() for p in model.params.values())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(lines) + "\n").encode() + payload)
    return path


def load_checkpoint(path) -> tuple[FusionNet, dict]:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(MAGIC.encode()) or cut < 0:
        raise CheckpointError(f"{path} is not a checkpoint")
    header = raw[:cut].decode().splitlines()[1:]
    payload = raw[cut + len(marker):]
    meta, shapes = {}, []
    for line in header:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            k, _, v = rest.partition("=")
            meta[k] = v
        elif kind == "param":
            name, dims = rest.rsplit(" ", 1)
            shapes.append((name, tuple(int(d) for d in dims.split(","))))
        else:
            raise CheckpointError(f"bad manifest line {line!r}")
    config = ModelConfig.from_dict({k[len("model."):]: v for k, v in meta.items() if k.startswith("model.")})
    values = np.frombuffer(payload, dtype="<f8")
    expected = sum(int(np.prod(s)) for _, s in shapes)
    if values.size != expected:
        raise CheckpointError(f"payload holds {values.size} values, manifest lists {expected}")
    params, pos = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        params[name] = ParamState(name, Tensor(values[pos:pos + n].reshape(shape).astype(np.float64)))
        pos += n
    try:
        model = FusionNet(config, params)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    for name, shape in shapes:
        if model.params[name].shape != shape:
            raise CheckpointError(f"{name}: shape {shape} does not match config")
    return model, meta
