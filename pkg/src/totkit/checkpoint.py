"""JSON checkpoint container for trained models.

Layout::

    {"magic": "TOTKIT-CKPT", "format_version": 1, "feature_order_version": 1,
     "config": {...ModelConfig...}, "metadata": {...},
     "params": [{"name": "w_in", "shape": [E, D], "data": "<base64 <f8>"}, ...]}

Parameter blobs appear in canonical layer order and are little-endian
float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError, ConfigError
from .features import FEATURE_ORDER_VERSION, FeatureMask
from .model import PARAM_NAMES, ModelConfig, ModelParams
from .splits import DatasetManifest

MAGIC = "TOTKIT-CKPT"
FORMAT_VERSION = 1
LSTM_VARIANT = "single-layer, no-peephole"


def _encode(arr: np.ndarray) -> dict[str, Any]:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(name: str, blob: dict[str, Any]) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in blob["shape"])
        raw = base64.b64decode(blob["data"].encode("ascii"), validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"parameter {name}: corrupt blob ({exc})") from None
    if len(raw) != 8 * int(np.prod(shape)):
        raise CheckpointError(f"parameter {name}: {len(raw)} bytes do not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def checkpoint_dict(params: ModelParams, config: ModelConfig,
                    manifest: DatasetManifest | None = None, **extra: Any) -> dict[str, Any]:
    params.check(config)
    meta: dict[str, Any] = {"lstm_variant": LSTM_VARIANT, "n_params": params.n_params(), **extra}
    if manifest is not None:
        meta["dataset"] = {"seed": manifest.seed, "rate": manifest.rate, "counts": manifest.counts,
                           "n_episodes": len(manifest.splits)}
    return {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "feature_order_version": FEATURE_ORDER_VERSION,
        "config": config.to_dict(),
        "metadata": meta,
        "params": [{"name": name, **_encode(arr)} for name, arr in params.named().items()],
    }


def save_checkpoint(path: str | Path, params: ModelParams, config: ModelConfig,
                    manifest: DatasetManifest | None = None, **extra: Any) -> Path:
    path = Path(path)
    text = json.dumps(checkpoint_dict(params, config, manifest, **extra), indent=1)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def parse_checkpoint(obj: Any, expected_mask: FeatureMask | str | None = None) -> tuple[ModelParams, ModelConfig]:
    if not isinstance(obj, dict) or obj.get("magic") != MAGIC:
        raise CheckpointError("not a totkit checkpoint (bad magic)")
    if obj.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {obj.get('format_version')!r}")
    if obj.get("feature_order_version") != FEATURE_ORDER_VERSION:
        raise CheckpointError(
            f"checkpoint uses feature order version {obj.get('feature_order_version')!r}, "
            f"this build uses {FEATURE_ORDER_VERSION}")
    try:
        config = ModelConfig.from_dict(obj["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from None
    if expected_mask is not None:
        want = FeatureMask.parse(expected_mask) if isinstance(expected_mask, str) else expected_mask
        if want != config.mask:
            raise CheckpointError(f"checkpoint was trained on features {config.mask.code}, expected {want.code}")
    blobs = obj.get("params")
    if not isinstance(blobs, list) or [b.get("name") for b in blobs] != list(PARAM_NAMES):
        raise CheckpointError(f"parameter blobs must be {PARAM_NAMES} in order")
    params = ModelParams(**{b["name"]: _decode(b["name"], b) for b in blobs})
    try:
        params.check(config)
    except ValueError as exc:
        raise CheckpointError(f"parameters do not match the config: {exc}") from None
    return params, config


def load_checkpoint(path: str | Path, expected_mask: FeatureMask | str | None = None) -> tuple[ModelParams, ModelConfig]:
    """Load ``(params, config)``; fails on corruption, version or mask mismatch."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint at {path}") from None
    except UnicodeDecodeError:
        raise CheckpointError(f"{path} is not a text checkpoint") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt or truncated checkpoint ({exc.msg})") from None
    return parse_checkpoint(obj, expected_mask)


def read_metadata(path: str | Path) -> dict[str, Any]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return obj.get("metadata", {})
