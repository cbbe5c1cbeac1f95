"""Binary checkpoint container shared by every model kind.

Layout: the magic bytes ``IATCNN1\\n``, one line of compact JSON (the
manifest: model kind, config, tensor names, shapes, byte offsets and the
payload length), then the raw little-endian float64 payload.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import attenet as tl
from . import fusion
from . import iatcnn as mp

MAGIC = b"IATCNN1\n"
KINDS = ("iatcnn", "attenet", "arcp")


class CheckpointError(ValueError):
    pass


def write(path, kind: str, config: dict, arrays: dict[str, np.ndarray]) -> None:
    tensors = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = {"kind": kind, "config": config, "tensors": tensors, "payload_bytes": offset}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + head + b"\n")
        for c in chunks:
            fh.write(c)


def read(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Return ``(kind, config, arrays)``; every array is a fresh float64 copy."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: manifest line is not terminated")
    try:
        manifest = json.loads(raw[len(MAGIC) : end].decode("utf-8"))
        kind, config, tensors, declared = (manifest["kind"], manifest["config"], manifest["tensors"],
                                           int(manifest["payload_bytes"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    payload = raw[end + 1 :]
    if len(payload) != declared:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest declares {declared}")
    arrays = {}
    for t in tensors:
        shape = tuple(t["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        start = int(t["offset"])
        if start < 0 or start + n > declared:
            raise CheckpointError(f"{path}: tensor {t['name']!r} lies outside the payload")
        arrays[t["name"]] = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=start).astype(np.float64).reshape(shape)
    return kind, config, arrays


# ----------------------------------------------------------------------
# model level
# ----------------------------------------------------------------------


def _describe(model) -> tuple[str, dict]:
    if isinstance(model, mp.IATCNN):
        return "iatcnn", model.config.to_dict()
    if isinstance(model, tl.AtteNet):
        return "attenet", model.config.to_dict()
    if isinstance(model, fusion.ARCP):
        cfg = {
            "fusion": model.config.to_dict(),
            "motion": model.motion.config.to_dict() if model.motion is not None else None,
            "light": model.light.config.to_dict() if model.light is not None else None,
            "rule": {"corridor": list(model.rule.corridor), "horizon": model.rule.horizon},
            "frame_rate": model.frame_rate,
        }
        return "arcp", cfg
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save(model, path) -> None:
    kind, cfg = _describe(model)
    write(path, kind, cfg, model.named_arrays())


def _build(kind: str, cfg: dict):
    if kind == "iatcnn":
        return mp.build(mp.ModelConfig.from_dict(cfg))
    if kind == "attenet":
        return tl.build(tl.AtteNetConfig.from_dict(cfg))
    if kind == "arcp":
        motion = mp.build(mp.ModelConfig.from_dict(cfg["motion"])) if cfg["motion"] else None
        light = tl.build(tl.AtteNetConfig.from_dict(cfg["light"])) if cfg["light"] else None
        rule = fusion.CrossingRule(tuple(cfg["rule"]["corridor"]), cfg["rule"]["horizon"])
        return fusion.build_arcp(fusion.FusionConfig(**cfg["fusion"]), motion, light, rule=rule,
                                 frame_rate=cfg["frame_rate"])
    raise CheckpointError(f"unknown model kind {kind!r}")


def load(path, kind: str | None = None, config: dict | None = None):
    """Rebuild a model from ``path``.

    ``kind`` and ``config``, when given, must match the manifest exactly.
    """
    found, cfg, arrays = read(path)
    if kind is not None and found != kind:
        raise CheckpointError(f"{path}: holds a {found!r} model, expected {kind!r}")
    if config is not None and json.loads(json.dumps(config)) != cfg:
        raise CheckpointError(f"{path}: config in the manifest does not match the expected config")
    try:
        model = _build(found, cfg)
    except (TypeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config in manifest ({exc})") from exc
    expected = model.named_arrays()
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: tensor names differ from the config (missing {missing[:3]}, extra {extra[:3]})")
    for name, a in expected.items():
        if np.shape(a) != arrays[name].shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {arrays[name].shape}, config implies {np.shape(a)}")
    model.load_arrays(arrays)
    return model
