"""Parameter checkpoints: an ``.npz`` archive of little-endian float32 tensors.

Besides one entry per parameter name the archive holds ``__version__`` and
``__config__`` (the :class:`DenoiserConfig` as JSON) so a checkpoint is
self-describing.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .unet import DenoiserConfig, DenoiserParams

CHECKPOINT_VERSION = 2


def save_checkpoint(path: str | Path, params: DenoiserParams, meta: dict | None = None) -> None:
    cfg = asdict(params.config)
    arrays = {name: np.asarray(v, dtype="<f4") for name, v in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            __version__=np.array(CHECKPOINT_VERSION),
            __config__=np.array(json.dumps(cfg, sort_keys=True)),
            __meta__=np.array(json.dumps(meta or {}, sort_keys=True)),
            **arrays,
        )


def load_checkpoint(path: str | Path) -> DenoiserParams:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        cfg = json.loads(str(z["__config__"]))
        tensors = {k: z[k].astype(np.float32) for k in z.files if not k.startswith("__")}
    return DenoiserParams(DenoiserConfig(**cfg), tensors)


def checkpoint_meta(path: str | Path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(str(z["__meta__"]))
