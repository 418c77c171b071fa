"""Checkpoint directories: manifest.json + params.bin.

params.bin is every parameter array concatenated in manifest key order as
little-endian float32. Loading verifies each shape and the exact total
byte length before accepting the file.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from storyfill.model import ModelConfig

FORMAT_VERSION = 1
MODEL_KINDS = ("generator", "l2r", "ranker")


class CheckpointError(ValueError):
    pass


def save_checkpoint(directory, kind: str, config: ModelConfig, params: dict,
                    vocab_file: str = "vocab.json"):
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config.to_dict(),
        "vocab_file": vocab_file,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        for value in params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(directory, expect_kind=None):
    """Returns (kind, config, params dict, vocab_file)."""
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {manifest.get('format_version')}")
    kind = manifest["kind"]
    if expect_kind is not None and kind not in expect_kind:
        raise CheckpointError(f"checkpoint kind {kind!r}, expected one of {expect_kind}")
    config = ModelConfig.from_dict(manifest["config"])
    blob = open(os.path.join(directory, "params.bin"), "rb").read()
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"]) * 4
    if len(blob) != expected:
        raise CheckpointError(f"params.bin has {len(blob)} bytes, manifest requires {expected}")
    params = {}
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.copy()  # writable, native-order copy
        offset += count * 4
    return kind, config, params, manifest.get("vocab_file", "vocab.json")


def checkpoint_digest(directory) -> str:
    """sha256 of params.bin; used to tell checkpoints apart."""
    h = hashlib.sha256()
    with open(os.path.join(directory, "params.bin"), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
