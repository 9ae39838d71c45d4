"""Versioned binary checkpoints.

Layout (documented byte-exactly in docs/checkpoint-format.md):

    bytes 0..3    magic ``REMN``
    bytes 4..7    format version, little-endian u32 (currently 1)
    bytes 8..15   JSON header length H, little-endian u64
    bytes 16..    UTF-8 JSON header (H bytes)
    then          payload: concatenated raw little-endian tensor buffers

The JSON header carries the architecture config snapshot, epoch counter, best
metric, optimizer/scheduler state, the data-order RNG state, and a tensor
directory of (name, dtype, shape, offset, length, crc32) entries.  Offsets are
relative to the payload start.  Every buffer is CRC-checked on load, so any
flipped byte surfaces as an integrity error naming the tensor.

Saving is atomic: the bytes land in a temporary sibling file which is then
renamed over the target.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ResEmoteNetModel, build_model
from .optim import PlateauScheduler, SgdState

MAGIC = b"REMN"
FORMAT_VERSION = 1

_DTYPE_CODES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def _config_to_dict(config: ModelConfig) -> dict:
    raw = dataclasses.asdict(config)
    raw["stem_channels"] = list(raw["stem_channels"])
    raw["residual_channels"] = [list(t) for t in raw["residual_channels"]]
    raw["aap_output"] = list(raw["aap_output"])
    return raw


def _config_from_dict(raw: dict) -> ModelConfig:
    return ModelConfig(
        input_channels=raw["input_channels"],
        input_size=raw["input_size"],
        stem_channels=tuple(raw["stem_channels"]),
        se_reduction=raw["se_reduction"],
        residual_channels=tuple(tuple(t) for t in raw["residual_channels"]),
        num_classes=raw["num_classes"],
        aap_output=tuple(raw["aap_output"]),
        seed=raw["seed"],
    )


def _little_endian(arr: np.ndarray) -> tuple[np.ndarray, str]:
    if arr.dtype == np.float64:
        code = "<f8"
    elif arr.dtype == np.float32:
        code = "<f4"
    else:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=np.dtype(code)), code


@dataclass
class LoadedCheckpoint:
    """Everything a checkpoint restores.  `optimizer`, `scheduler`, and
    `rng_state` are None for inference-only files."""

    model: ResEmoteNetModel
    optimizer: SgdState | None
    scheduler: PlateauScheduler | None
    epoch: int
    best_metric: float
    rng_state: dict | None


def save(model: ResEmoteNetModel, optimizer: SgdState | None,
         scheduler: PlateauScheduler | None, epoch: int, path,
         rng_state: dict | None = None, best_metric: float | None = None) -> None:
    """Write the full training state (or just the model, for inference
    checkpoints) to `path` atomically."""
    path = Path(path)
    tensors: list[tuple[str, np.ndarray]] = [
        (f"model.{name}", arr) for name, arr in model.state_tensors().items()
    ]
    if optimizer is not None:
        tensors.extend(
            (f"velocity.{name}", arr) for name, arr in sorted(optimizer.velocity.items())
        )

    directory = []
    chunks = []
    offset = 0
    for name, arr in tensors:
        buf, code = _little_endian(arr)
        raw = buf.tobytes()
        directory.append({
            "name": name,
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(raw),
            "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
        })
        chunks.append(raw)
        offset += len(raw)

    header: dict[str, Any] = {
        "config": _config_to_dict(model.config),
        "epoch": int(epoch),
        "best_metric": float(best_metric) if best_metric is not None else None,
        "optimizer": None if optimizer is None else {
            "lr": optimizer.lr,
            "momentum": optimizer.momentum,
            "weight_decay": optimizer.weight_decay,
        },
        "scheduler": None if scheduler is None else {
            "factor": scheduler.factor,
            "patience": scheduler.patience,
            "min_lr": scheduler.min_lr,
            "mode": scheduler.mode,
            "best_metric": None if scheduler.best_metric == -np.inf
            else scheduler.best_metric,
            "epochs_since_improve": scheduler.epochs_since_improve,
        },
        "rng_state": rng_state,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")

    try:
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<I", FORMAT_VERSION))
                fh.write(struct.pack("<Q", len(header_bytes)))
                fh.write(header_bytes)
                for raw in chunks:
                    fh.write(raw)
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
    except OSError as err:
        raise CheckpointError(f"cannot write checkpoint {path}: {err}") from None


def _validate_directory(directory: list[dict], payload_size: int) -> None:
    seen = set()
    spans = []
    for entry in directory:
        name = entry["name"]
        if name in seen:
            raise CheckpointError(f"tensor {name!r} appears twice in the directory")
        seen.add(name)
        off, length = entry["offset"], entry["length"]
        if off < 0 or length < 0 or off + length > payload_size:
            raise CheckpointError(
                f"tensor {name!r} spans [{off}, {off + length}) outside the "
                f"{payload_size}-byte payload")
        spans.append((off, off + length, name))
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise CheckpointError(
                f"tensors {name_a!r} and {name_b!r} overlap in the payload")


def load(path, expected_config: ModelConfig | None = None,
         allow_config_mismatch: bool = False) -> LoadedCheckpoint:
    """Read a checkpoint back into a freshly built model plus training state.

    When `expected_config` is given, every architecture field must match the
    file's snapshot; the first differing field is named in the error.
    `allow_config_mismatch=True` downgrades that to acceptance of the file's
    own config (the tensors belong to it).  Files written without optimizer
    state load fine for inference; their `optimizer`/`scheduler` are None.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (magic mismatch)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected "
            f"{FORMAT_VERSION})")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header: {err}") from None
    payload = blob[16 + header_len:]

    file_config = _config_from_dict(header["config"])
    if expected_config is not None and file_config != expected_config:
        for field in dataclasses.fields(ModelConfig):
            a = getattr(file_config, field.name)
            b = getattr(expected_config, field.name)
            if a != b:
                if not allow_config_mismatch:
                    raise CheckpointError(
                        f"{path}: config field '{field.name}' is {a!r} in the "
                        f"file but {b!r} was expected")
                break

    directory = header["tensors"]
    _validate_directory(directory, len(payload))

    arrays: dict[str, np.ndarray] = {}
    for entry in directory:
        name = entry["name"]
        raw = payload[entry["offset"]:entry["offset"] + entry["length"]]
        if (zlib.crc32(raw) & 0xFFFFFFFF) != entry["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch for tensor {name!r}")
        dtype = _DTYPE_CODES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(
                f"{path}: tensor {name!r} has unsupported dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if count * dtype.itemsize != entry["length"]:
            raise CheckpointError(
                f"{path}: tensor {name!r} length {entry['length']} does not "
                f"match shape {shape}")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    model = build_model(file_config)
    expected_names = {f"model.{n}" for n in model.state_tensors()}
    stored_names = {n for n in arrays if n.startswith("model.")}
    missing = expected_names - stored_names
    if missing:
        raise CheckpointError(
            f"{path}: missing model tensors: {sorted(missing)[:3]}"
            + ("..." if len(missing) > 3 else ""))
    for name, current in model.state_tensors().items():
        stored = arrays[f"model.{name}"]
        if stored.shape != current.shape:
            raise CheckpointError(
                f"{path}: tensor 'model.{name}' has shape {stored.shape} but the "
                f"model expects {current.shape}")
    model.load_state({name[len("model."):]: arr for name, arr in arrays.items()
                      if name.startswith("model.")})

    optimizer = None
    if header["optimizer"] is not None:
        optimizer = SgdState(lr=header["optimizer"]["lr"],
                             momentum=header["optimizer"]["momentum"],
                             weight_decay=header["optimizer"]["weight_decay"])
        optimizer.velocity = {
            name[len("velocity."):]: arr for name, arr in arrays.items()
            if name.startswith("velocity.")
        }
    scheduler = None
    if header["scheduler"] is not None:
        s = header["scheduler"]
        scheduler = PlateauScheduler(
            factor=s["factor"], patience=s["patience"], min_lr=s["min_lr"],
            mode=s["mode"],
            best_metric=-np.inf if s["best_metric"] is None else s["best_metric"],
            epochs_since_improve=s["epochs_since_improve"])

    best = header.get("best_metric")
    return LoadedCheckpoint(
        model=model,
        optimizer=optimizer,
        scheduler=scheduler,
        epoch=int(header["epoch"]),
        best_metric=-np.inf if best is None else float(best),
        rng_state=header.get("rng_state"),
    )
