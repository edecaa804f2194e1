"""``cuti-ckpt-1`` checkpoint container.

A zip archive (stored, fixed timestamps, so identical states give identical
bytes) holding ``meta.json`` and one member per parameter under
``arrays/<name>``. Each array member is ``b"CUTA"``, a little-endian uint32
rank, one little-endian uint32 per dimension, then the values as
little-endian float32.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneSpec, CutiNet, ModelState
from .errors import FormatError

CKPT_FORMAT = "cuti-ckpt-1"
ARRAY_MAGIC = b"CUTA"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def encode_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f4")
    return ARRAY_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + a.tobytes()


def decode_array(buf: bytes, name: str = "array") -> np.ndarray:
    if buf[:4] != ARRAY_MAGIC:
        raise FormatError(f"{name}: bad array magic", 0)
    if len(buf) < 8:
        raise FormatError(f"{name}: truncated header", len(buf))
    (ndim,) = struct.unpack_from("<I", buf, 4)
    header = 8 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"{name}: truncated shape header", len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, 8)
    count = int(np.prod(shape)) if ndim else 1
    if len(buf) != header + 4 * count:
        raise FormatError(f"{name}: expected {header + 4 * count} bytes, found {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype="<f4", offset=header).reshape(shape).astype(np.float32)


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(state: ModelState, path, extra_meta: dict | None = None) -> Path:
    path = Path(path)
    tensors = state.model.state_dict()
    meta = {
        "format": CKPT_FORMAT,
        "architecture": state.spec.to_dict(),
        "has_generators": state.model.has_generators,
        "epoch": state.epoch,
        "seed": state.seed,
        "config_hash": state.config_hash,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "info": {**state.meta, **(extra_meta or {})},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_member("meta.json"), json.dumps(meta, indent=2, sort_keys=True))
        for k, v in tensors.items():
            zf.writestr(_member(f"arrays/{k}"), encode_array(v.detach().cpu().numpy()))
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise FormatError(f"{path}: not a checkpoint archive ({exc})") from None
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise FormatError(f"{path}: missing meta.json") from None
        if meta.get("format") != CKPT_FORMAT:
            raise FormatError(f"{path}: unsupported format {meta.get('format')!r}")
        spec = BackboneSpec.from_dict(meta["architecture"])
        model = CutiNet(spec, with_generators=meta["has_generators"])
        expected = model.state_dict()
        names = [a["name"] for a in meta["arrays"]]
        if set(names) != set(expected):
            missing = sorted(set(expected) - set(names))
            unexpected = sorted(set(names) - set(expected))
            raise FormatError(f"{path}: parameters do not match the architecture (missing {missing}, unexpected {unexpected})")
        loaded = {}
        for name in names:
            arr = decode_array(zf.read(f"arrays/{name}"), name)
            if tuple(arr.shape) != tuple(expected[name].shape):
                raise FormatError(f"{path}: {name} has shape {arr.shape}, architecture needs {tuple(expected[name].shape)}")
            loaded[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(loaded)
    model.eval()
    state = ModelState(model, epoch=meta["epoch"], seed=meta["seed"], config_hash=meta["config_hash"])
    state.meta = dict(meta.get("info", {}))
    return state


def checkpoint_keys(path) -> list[str]:
    with zipfile.ZipFile(path) as zf:
        return [a["name"] for a in json.loads(zf.read("meta.json"))["arrays"]]
