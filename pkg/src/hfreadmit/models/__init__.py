"""Model catalog: the nineteen comparison rows, construction, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .base import LOSS_VARIANTS, Model, loss_coefficients, sequence_loss
from .crf import CrfConfig, CrfModel
from .feedforward import (CnnConfig, CnnModel, CnnWideConfig, CnnWideModel, LogisticConfig,
                          LogisticModel, MlpConfig, MlpModel, lasso_train, logistic_l2_train)
from .recurrent import (RecurrentConfig, RecurrentNet, ScheduledSamplingNet, augment_previous_labels,
                        scheduled_sampling_prob)

LOSS_SLUGS = {v.lower(): v for v in LOSS_VARIANTS}

MODEL_NAMES = (
    ["cnn", "cnn-wide"]
    + [f"rnn-{s}" for s in LOSS_SLUGS]
    + [f"rnnss-{s}" for s in LOSS_SLUGS]
    + ["neuralcrf-pairwise", "neuralcrf-unary", "crf-pairwise", "crf-unary",
       "rnncrf-pairwise", "rnncrf-unary", "mlp", "lr-l2", "lr-l1"]
)

FAMILY_OF = {"rnn": "rnn", "rnnss": "rnnss", "crf": "crf", "neuralcrf": "crf", "rnncrf": "crf",
             "cnn": "cnn", "cnn-wide": "cnn-wide", "mlp": "mlp", "lr": "lr"}

_CLASSES = {"rnn": (RecurrentNet, RecurrentConfig), "rnnss": (ScheduledSamplingNet, RecurrentConfig),
            "crf": (CrfModel, CrfConfig), "cnn": (CnnModel, CnnConfig),
            "cnn-wide": (CnnWideModel, CnnWideConfig), "mlp": (MlpModel, MlpConfig),
            "lr": (LogisticModel, LogisticConfig)}


def family(name: str) -> str:
    if name not in MODEL_NAMES:
        raise KeyError(f"unknown model {name!r}; valid names: {', '.join(MODEL_NAMES)}")
    head = name if name in ("cnn", "cnn-wide", "mlp") else name.split("-")[0]
    return FAMILY_OF[head]


def default_config(name: str, d: int):
    """Best-reported configuration of each row, with dimensions resolved for input size ``d``."""
    fam = family(name)
    head, _, tail = name.partition("-")
    if fam == "rnn":
        return RecurrentConfig(loss_variant=LOSS_SLUGS[tail])
    if fam == "rnnss":
        return RecurrentConfig(cell_type="gru", hidden=128, input_embed_dim=d // 2, output_embed_dim=128 // 3,
                               nonlinearity="tanh", p_dropout=0.15, loss_variant=LOSS_SLUGS[tail],
                               ss_schedule="exponential", ss_rho=0.9)
    if fam == "crf":
        if head == "crf":
            return CrfConfig(potentials=tail, features="linear")
        if head == "neuralcrf":
            return CrfConfig(potentials=tail, features="neural", input_embed_dim=d // 2,
                             output_embed_dim=(d // 2) // 3)
        return CrfConfig(potentials=tail, features="recurrent", input_embed_dim=d // 2,
                         output_embed_dim=128 // 3)
    if fam == "lr":
        return LogisticConfig(penalty=tail, lam=1e-1)
    return _CLASSES[fam][1]()


def config_from_dict(name: str, data: dict):
    cls = _CLASSES[family(name)][1]
    known = {f.name for f in fields(cls)}
    bad = set(data) - known
    if bad:
        raise ValueError(f"unknown config fields for {name}: {sorted(bad)}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**data)


def build_model(name: str, d: int, t_max: int | None = None, seed: int = 0, config=None, **overrides) -> Model:
    cfg = default_config(name, d) if config is None else config
    if overrides:
        cfg = replace(cfg, **overrides)
    model = _CLASSES[family(name)][0](cfg, d, seed=seed, t_max=t_max)
    model.name = name
    return model


# -- checkpoints ------------------------------------------------------------------

def _write_arrays(path: Path, arrays: dict) -> list:
    manifest, offset = [], 0
    with open(path, "wb") as fh:
        for k in sorted(arrays):
            a = np.ascontiguousarray(arrays[k], dtype="<f8")
            fh.write(a.tobytes())
            manifest.append({"name": k, "shape": list(a.shape), "offset": offset})
            offset += a.size
    return manifest


def _read_arrays(path: Path, manifest: list) -> dict:
    flat = np.fromfile(path, dtype="<f8")
    out = {}
    for m in manifest:
        n = int(np.prod(m["shape"])) if m["shape"] else 1
        out[m["name"]] = flat[m["offset"]:m["offset"] + n].reshape(m["shape"]).astype(np.float64)
    return out


def save_checkpoint(model: Model, directory) -> Path:
    """JSON config plus little-endian float64 parameter and state blobs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"name": model.name, "d": model.d, "t_max": model.t_max, "config": asdict(model.config),
            "params": _write_arrays(directory / "params.bin", model.params),
            "state": _write_arrays(directory / "state.bin", model.state)}
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> Model:
    directory = Path(directory)
    meta_path = directory / "model.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no checkpoint at {directory}")
    meta = json.loads(meta_path.read_text())
    cfg = config_from_dict(meta["name"], meta["config"])
    model = build_model(meta["name"], meta["d"], meta["t_max"], config=cfg)
    params = _read_arrays(directory / "params.bin", meta["params"])
    if set(params) != set(model.params):
        raise ValueError("checkpoint parameters do not match the model layout")
    model.params = params
    model.state = _read_arrays(directory / "state.bin", meta["state"])
    return model


__all__ = [
    "MODEL_NAMES", "LOSS_VARIANTS", "Model", "build_model", "default_config", "config_from_dict", "family",
    "save_checkpoint", "load_checkpoint", "loss_coefficients", "sequence_loss", "RecurrentConfig",
    "RecurrentNet", "ScheduledSamplingNet", "augment_previous_labels", "scheduled_sampling_prob",
    "CrfConfig", "CrfModel", "CnnConfig", "CnnModel", "CnnWideConfig", "CnnWideModel", "LogisticConfig",
    "LogisticModel", "MlpConfig", "MlpModel", "lasso_train", "logistic_l2_train",
]
