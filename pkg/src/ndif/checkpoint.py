"""Binary model checkpoints.

Layout: ``b"NDIF1"``, format version (u32 LE), header length (u32 LE), a UTF-8
JSON header, then every tensor as little-endian float32 in manifest order.
Manifest offsets are relative to the first byte after the header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tensor
from .data import Normalizer
from .diffusion import NoiseSchedule
from .unet import UNet, UNetConfig

MAGIC = b"NDIF1"
VERSION = 1
_ADAM_M = "adam.m."
_ADAM_V = "adam.v."


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: UNet
    schedule: NoiseSchedule
    normalizer: Normalizer
    step: int = 0
    epoch: int = 0
    adam: AdamState | None = None


def encode(ckpt: Checkpoint) -> bytes:
    names = [n for n, _ in ckpt.model._shapes]
    arrays = [(n, ckpt.model.params[n].data) for n in names]
    adam = None
    if ckpt.adam is not None:
        arrays += [(_ADAM_M + n, m) for n, m in zip(names, ckpt.adam.m)]
        arrays += [(_ADAM_V + n, v) for n, v in zip(names, ckpt.adam.v)]
        adam = {
            "step_count": ckpt.adam.step_count,
            "learning_rate": ckpt.adam.learning_rate,
            "beta1": ckpt.adam.beta1,
            "beta2": ckpt.adam.beta2,
            "epsilon": ckpt.adam.epsilon,
        }
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "unet": ckpt.model.config.to_dict(),
        "schedule": ckpt.schedule.to_dict(),
        "normalizer": ckpt.normalizer.to_dict(),
        "training": {"step": ckpt.step, "epoch": ckpt.epoch, "adam": adam},
        "tensors": manifest,
        "data_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + b"".join(blobs)


def decode(raw: bytes) -> Checkpoint:
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic bytes)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    version, head_len = struct.unpack_from("<II", raw, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    try:
        header = json.loads(raw[pos : pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    data = raw[pos + head_len :]
    if len(data) != header.get("data_bytes"):
        raise CheckpointError(f"data section is {len(data)} bytes, header declares {header.get('data_bytes')}")
    arrays, expected = {}, 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if entry["offset"] != expected:
            raise CheckpointError(f"tensor {entry['name']}: offset {entry['offset']} inconsistent, expected {expected}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=expected).astype(np.float64).reshape(shape)
        expected += nbytes
    if expected != len(data):
        raise CheckpointError("manifest does not cover the data section")

    config = UNetConfig.from_dict(header["unet"])
    names = [n for n in arrays if not n.startswith((_ADAM_M, _ADAM_V))]
    params = {n: Tensor(arrays[n], requires_grad=True) for n in names}
    try:
        model = UNet(config, params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    training = header.get("training", {})
    adam = None
    if training.get("adam"):
        order = [n for n, _ in model._shapes]
        a = training["adam"]
        adam = AdamState(
            m=[arrays[_ADAM_M + n].copy() for n in order],
            v=[arrays[_ADAM_V + n].copy() for n in order],
            step_count=int(a["step_count"]),
            learning_rate=float(a["learning_rate"]),
            beta1=float(a["beta1"]),
            beta2=float(a["beta2"]),
            epsilon=float(a["epsilon"]),
        )
    return Checkpoint(
        model=model,
        schedule=NoiseSchedule.from_dict(header["schedule"]),
        normalizer=Normalizer(**header["normalizer"]),
        step=int(training.get("step", 0)),
        epoch=int(training.get("epoch", 0)),
        adam=adam,
    )


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes())
