"""Versioned model checkpoints.

A checkpoint is a single ``.npz`` holding a JSON metadata record (format
version, layer config, optional task-head config, free-form extras), every
parameter tensor in registry order, optional optimizer state arrays, and a
sha256 over all of it.  Wiring masks are rebuilt from the seeds in the
config, which is deterministic, so a loaded model reproduces the saved
model's forward passes bit for bit.  The hash is verified on load; any
mismatch means the file was corrupted or hand-edited.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .errors import ValidationError
from .layer import NsacConfig, NsacLayer, NsacRegressor
from .optim import AdamW

FORMAT_VERSION = 1

_META_KEY = "__meta__"
_HASH_KEY = "__sha256__"


def _content_hash(meta_json: str, arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    h.update(meta_json.encode("utf-8"))
    for key in sorted(arrays):
        arr = np.ascontiguousarray(arrays[key])
        h.update(key.encode("utf-8"))
        h.update(str(arr.dtype).encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(path, model, optimizer: AdamW | None = None,
                    extra: dict | None = None) -> str:
    """Write ``model`` (a layer or a regressor) to ``path``; returns the hash."""
    if isinstance(model, NsacRegressor):
        layer = model.layer
        head = {"out_dim": model.out_dim, "readout": model.readout}
    elif isinstance(model, NsacLayer):
        layer, head = model, None
    else:
        raise ValidationError(f"cannot checkpoint object of type {type(model).__name__}")

    meta = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(layer.cfg),
        "head": head,
        "extra": extra or {},
    }
    arrays = {f"param_{i:04d}": p.data for i, p in enumerate(layer.parameters())}
    if optimizer is not None:
        for key, arr in optimizer.state_arrays().items():
            arrays[f"opt_{key}"] = arr
    meta_json = json.dumps(meta, sort_keys=True)
    digest = _content_hash(meta_json, arrays)
    with open(path, "wb") as f:  # keep the exact path, no implicit .npz suffix
        np.savez(f, **{_META_KEY: meta_json, _HASH_KEY: digest}, **arrays)
    return digest


def load_checkpoint(path):
    """Rebuild the saved model.

    Returns ``(model, meta, opt_state)`` where ``model`` is an
    :class:`NsacLayer` or :class:`NsacRegressor` matching what was saved,
    ``meta`` is the metadata record, and ``opt_state`` maps optimizer state
    names to arrays (empty when none were saved); feed it to
    :meth:`AdamW.load_state_arrays`.
    """
    try:
        with np.load(path, allow_pickle=False) as npz:
            contents = {key: npz[key] for key in npz.files}
    except OSError:
        raise
    except Exception as e:  # zip/format damage surfaces as ValueError et al.
        raise ValidationError(f"unreadable checkpoint {path}: {e}") from e

    if _META_KEY not in contents or _HASH_KEY not in contents:
        raise ValidationError(f"{path} is not a model checkpoint")
    meta_json = str(contents.pop(_META_KEY))
    stored_hash = str(contents.pop(_HASH_KEY))
    if _content_hash(meta_json, contents) != stored_hash:
        raise ValidationError(f"checkpoint {path} failed its integrity check")

    meta = json.loads(meta_json)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"checkpoint format {meta.get('format_version')} is not supported"
        )

    layer = NsacLayer(NsacConfig(**meta["config"]))
    params = layer.parameters()
    saved = [key for key in sorted(contents) if key.startswith("param_")]
    if len(saved) != len(params):
        raise ValidationError(
            f"checkpoint has {len(saved)} parameter arrays, model needs {len(params)}"
        )
    for key, p in zip(saved, params):
        arr = contents[key]
        if arr.shape != p.data.shape:
            raise ValidationError(f"checkpoint array {key} has shape {arr.shape}, "
                                  f"expected {p.data.shape}")
        p.data = arr.astype(np.float64, copy=True)

    opt_state = {key[len("opt_"):]: contents[key]
                 for key in contents if key.startswith("opt_")}
    model = layer
    if meta.get("head") is not None:
        model = NsacRegressor(layer, **meta["head"])
    return model, meta, opt_state
