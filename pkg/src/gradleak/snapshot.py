"""Binary model snapshots and the snapshot-log directory.

File layout: ``FLSNAP1\\0`` magic, an 8-byte little-endian header length, a
UTF-8 JSON header, then raw little-endian float64 parameters in layer order,
weights before biases.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, Tuple

import numpy as np

from .constants import SNAPSHOT_MAGIC
from .diagnostics import log_info
from .errors import ContainerFormatError
from .models import LayerParams, LayerSpec, Model, SnapshotLog

_LEN = struct.Struct("<Q")
_F8 = np.dtype("<f8")


def write_container(fh: BinaryIO, magic: bytes, header: Dict[str, Any], arrays) -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    fh.write(magic)
    fh.write(_LEN.pack(len(blob)))
    fh.write(blob)
    for arr in arrays:
        fh.write(np.ascontiguousarray(arr, dtype=_F8).tobytes())


def read_container(raw: bytes, magic: bytes, what: str) -> Tuple[Dict[str, Any], memoryview]:
    if not raw.startswith(magic):
        raise ContainerFormatError(f"not a {what} file (bad magic)")
    offset = len(magic)
    if len(raw) < offset + _LEN.size:
        raise ContainerFormatError(f"truncated {what} header")
    (n,) = _LEN.unpack_from(raw, offset)
    offset += _LEN.size
    try:
        header = json.loads(raw[offset : offset + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerFormatError(f"corrupt {what} header: {e}") from None
    return header, memoryview(raw)[offset + n :]


def take_array(payload: memoryview, offset: int, shape) -> Tuple[np.ndarray, int]:
    count = int(np.prod(shape, dtype=np.int64))
    end = offset + count * _F8.itemsize
    if end > len(payload):
        raise ContainerFormatError("payload shorter than header describes")
    arr = np.frombuffer(payload[offset:end], dtype=_F8).astype(np.float64).reshape(shape)
    return arr, end


def save_model(path: Path, model: Model, round_index: int = 0) -> Path:
    header = {
        "layers": [spec.to_dict() for spec in model.layers],
        "input_shape": list(model.input_shape),
        "shapes": [[list(p.weight.shape), list(p.bias.shape)] for p in model.params],
        "round": int(round_index),
        "seed": int(model.rng_seed),
    }
    arrays = [a for p in model.params for a in (p.weight, p.bias)]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        write_container(fh, SNAPSHOT_MAGIC, header, arrays)
    return path


def load_model(path: Path) -> Tuple[Model, int]:
    header, payload = read_container(path.read_bytes(), SNAPSHOT_MAGIC, "model snapshot")
    try:
        layers = tuple(LayerSpec.from_dict(d) for d in header["layers"])
        shapes = header["shapes"]
        offset = 0
        params = []
        for w_shape, b_shape in shapes:
            w, offset = take_array(payload, offset, tuple(w_shape))
            b, offset = take_array(payload, offset, tuple(b_shape))
            w.setflags(write=False)
            b.setflags(write=False)
            params.append(LayerParams(w, b))
        model = Model(
            layers=layers,
            params=tuple(params),
            rng_seed=int(header["seed"]),
            input_shape=tuple(header["input_shape"]),
        )
        round_index = int(header["round"])
    except (KeyError, TypeError, ValueError) as e:
        raise ContainerFormatError(f"invalid snapshot header in {path}: {e}") from None
    if offset != len(payload):
        raise ContainerFormatError(f"{path}: {len(payload) - offset} trailing bytes after parameters")
    return model, round_index


def snapshot_name(round_index: int) -> str:
    return f"round_{round_index}.flsnap"


def save_snapshot_log(log: SnapshotLog, out_dir: Path, meta: Dict[str, Any]) -> Path:
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    for r, model in zip(log.rounds, log.models):
        save_model(snap_dir / snapshot_name(r), model, r)
    manifest = dict(meta)
    manifest["rounds"] = list(log.rounds)
    manifest["files"] = [f"snapshots/{snapshot_name(r)}" for r in log.rounds]
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    log_info("Saved %s snapshots to %s", len(log), snap_dir)
    return path


def load_snapshot_log(run_dir: Path) -> Tuple[SnapshotLog, Dict[str, Any]]:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ContainerFormatError(f"no manifest.json in {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    log = SnapshotLog()
    for rel in manifest.get("files", []):
        model, r = load_model(run_dir / rel)
        log.add(r, model)
    if not len(log):
        raise ContainerFormatError(f"{run_dir} contains no snapshots")
    log_info("Loaded %s snapshots from %s", len(log), run_dir)
    return log, manifest
