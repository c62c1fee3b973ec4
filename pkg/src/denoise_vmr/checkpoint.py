"""Checkpoint directories: one DRNF file per tensor plus ``manifest.json``."""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import ConfigError, DataError
from .features import decode_features, encode_features

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG_FILE = "config.txt"


def _as_matrix(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    return arr.reshape(-1, arr.shape[-1])


def _encode_rng() -> dict:
    buf = io.BytesIO()
    torch.save(torch.get_rng_state(), buf)
    return {"torch": base64.b64encode(buf.getvalue()).decode("ascii")}


def restore_rng(state: dict):
    if state and "torch" in state:
        blob = base64.b64decode(state["torch"])
        torch.set_rng_state(torch.load(io.BytesIO(blob), weights_only=True))


def save_checkpoint(path, model: torch.nn.Module, cfg: RunConfig, epoch: int = 0, extra: dict | None = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype != np.float32:
            log.warning("tensor %s stored as float32 (was %s)", name, arr.dtype)
        blob = encode_features(_as_matrix(arr.astype(np.float32)))
        fname = f"{name}.drnf"
        (path / fname).write_bytes(blob)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "file": fname,
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
    cfg.save(path / CONFIG_FILE)
    manifest = {
        "tensors": entries,
        "config": cfg.to_flat(),
        "fingerprint": cfg.fingerprint(),
        "epoch": epoch,
        "rng_state": _encode_rng(),
    }
    manifest.update(extra or {})
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.exists():
        raise DataError(f"not a checkpoint directory (no {MANIFEST}): {path}")
    return json.loads(mpath.read_text(encoding="utf-8"))


def load_state(path) -> tuple:
    """Returns ``(state_dict, RunConfig, manifest)``; verifies every tensor's sha256."""
    path = Path(path)
    manifest = read_manifest(path)
    state = {}
    for entry in manifest["tensors"]:
        blob = (path / entry["file"]).read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise DataError(f"checksum mismatch for {entry['name']} in {path}")
        arr = decode_features(blob, source=entry["file"])
        if arr.size != math.prod(entry["shape"]):
            raise DataError(f"{entry['name']}: stored size {arr.size} does not match shape {entry['shape']}")
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    try:
        cfg = RunConfig.from_flat(manifest["config"])
    except ConfigError as exc:
        raise ConfigError(f"checkpoint {path}: {exc}") from exc
    return state, cfg, manifest


def load_checkpoint(path):
    """Rebuild the network from a checkpoint; returns ``(model, cfg, manifest)``."""
    from .model import MomentRetrievalNet

    state, cfg, manifest = load_state(path)
    model = MomentRetrievalNet(cfg, cfg.model.video_input_dim, cfg.model.text_input_dim)
    model.load_state_dict(state)
    model.eval()
    return model, cfg, manifest
