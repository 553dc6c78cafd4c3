"""Checkpoint persistence: JSON manifest + one little-endian float32 blob.

The manifest records every tensor's name, shape, dtype and byte offset, the
run config snapshot, the training stage, and the step counter.  Loading
validates the blob against the manifest and restores tensors bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .config import RunConfig

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"

STAGE_CONTRASTIVE = "contrastive"
STAGE_ADVERSARIAL = "adversarial"


class CorruptionError(RuntimeError):
    """Blob does not match the manifest."""


@dataclass
class TrainState:
    """Everything needed to restore a training run's model exactly."""

    stage: str
    step: int
    seed: int
    config: RunConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def module_tensors(module: torch.nn.Module, prefix: str = "model.") -> dict[str, np.ndarray]:
    """Named parameters and buffers as float32 arrays, names prefixed."""
    out = {}
    for name, param in module.named_parameters():
        out[prefix + name] = param.detach().cpu().numpy().astype("<f4")
    for name, buf in module.named_buffers():
        out[prefix + name] = buf.detach().cpu().numpy().astype("<f4")
    return out


def load_module_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray],
                        prefix: str = "model.") -> None:
    """Copy stored arrays back into a module's parameters and buffers."""
    with torch.no_grad():
        for name, param in module.named_parameters():
            key = prefix + name
            if key not in tensors:
                raise CorruptionError(f"checkpoint is missing tensor {key}")
            value = torch.from_numpy(tensors[key].copy())
            if tuple(param.shape) != tuple(value.shape):
                raise CorruptionError(
                    f"{key}: stored shape {tuple(value.shape)} != model shape {tuple(param.shape)}"
                )
            param.copy_(value)
        for name, buf in module.named_buffers():
            key = prefix + name
            if key in tensors:
                buf.copy_(torch.from_numpy(tensors[key].copy()))


def save_checkpoint(directory: str | Path, state: TrainState) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, array in state.tensors.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        raw = data.tobytes()
        entries.append({
            "name": name,
            "shape": list(data.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "stage": state.stage,
        "step": state.step,
        "seed": state.seed,
        "config": config_mod.to_dict(state.config),
        "total_nbytes": offset,
        "tensors": entries,
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(directory / BLOB_NAME, "wb") as fh:
        fh.write(b"".join(chunks))
    return directory


def load_checkpoint(directory: str | Path) -> TrainState:
    directory = Path(directory)
    with open(directory / MANIFEST_NAME, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    blob = (directory / BLOB_NAME).read_bytes()
    if len(blob) != manifest["total_nbytes"]:
        # find the first tensor the truncation (or padding) breaks
        for entry in manifest["tensors"]:
            if entry["offset"] + entry["nbytes"] > len(blob):
                raise CorruptionError(
                    f"params.bin has {len(blob)} bytes; tensor {entry['name']} "
                    f"needs bytes up to {entry['offset'] + entry['nbytes']}"
                )
        raise CorruptionError(
            f"params.bin has {len(blob)} bytes, manifest says {manifest['total_nbytes']}"
        )
    tensors = {}
    for entry in manifest["tensors"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        array = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = array
    return TrainState(
        stage=manifest["stage"],
        step=manifest["step"],
        seed=manifest["seed"],
        config=config_mod.from_dict(manifest["config"]),
        tensors=tensors,
    )
