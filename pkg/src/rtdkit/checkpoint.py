"""Checkpoint container: named float32 tensors plus a JSON manifest.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, then the tensor payload — little-endian float32, row-major,
concatenated in index order.  Optimizer moments ride along under reserved
``adam.m/`` and ``adam.v/`` name prefixes so a training run can resume
bitwise-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Parameter
from .optim import AdamState

MAGIC = b"rtdkit\x00\x01"
FORMAT_VERSION = 1
COMPONENTS = ("discriminator", "generator", "task-head")

_M_PREFIX = "adam.m/"
_V_PREFIX = "adam.v/"


class CheckpointError(RuntimeError):
    """Base class for checkpoint read/write failures."""


class TruncatedCheckpointError(CheckpointError):
    """The file ends before the manifest says it should."""


class VersionError(CheckpointError):
    """The file was written by an incompatible format version."""


class UnknownTensorError(CheckpointError):
    """The file names a tensor the target model does not have (or misses one)."""


class TensorShapeError(CheckpointError):
    """A stored tensor's shape does not match the target parameter."""


@dataclass(frozen=True)
class CheckpointManifest:
    format_version: int
    encoder_config: dict
    component: str
    step: int
    seed: int
    has_optimizer_state: bool
    extras: dict = field(default_factory=dict)


@dataclass
class LoadedCheckpoint:
    manifest: CheckpointManifest
    params: dict[str, Parameter]
    optimizer: AdamState | None


def _as_config_dict(config) -> dict:
    return config if isinstance(config, dict) else config.to_dict()


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, Parameter],
    *,
    encoder_config,
    component: str,
    step: int = 0,
    seed: int = 0,
    optimizer: AdamState | None = None,
    extras: dict | None = None,
) -> None:
    if component not in COMPONENTS:
        raise CheckpointError(f"component {component!r} not one of {COMPONENTS}")

    entries: list[tuple[str, np.ndarray, bool]] = [
        (name, p.data, p.no_decay) for name, p in sorted(params.items())
    ]
    if optimizer is not None:
        for name in sorted(params):
            entries.append((_M_PREFIX + name, optimizer.m[name], False))
            entries.append((_V_PREFIX + name, optimizer.v[name], False))

    index = []
    offset = 0
    blobs = []
    for name, arr, no_decay in entries:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "no_decay": no_decay}
        )
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format_version": FORMAT_VERSION,
        "encoder_config": _as_config_dict(encoder_config),
        "component": component,
        "step": int(step),
        "seed": int(seed),
        "has_optimizer_state": optimizer is not None,
        "optimizer_t": optimizer.t if optimizer is not None else None,
        "extras": extras or {},
        "tensors": index,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def _read_container(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        if raw[:8] != MAGIC and len(raw) >= 8:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        raise TruncatedCheckpointError(f"{path}: file too short for header")
    head_len = int.from_bytes(raw[8:16], "little")
    if len(raw) < 16 + head_len:
        raise TruncatedCheckpointError(f"{path}: header truncated")
    try:
        header = json.loads(raw[16 : 16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version!r}, this build reads {FORMAT_VERSION}"
        )
    payload = raw[16 + head_len :]
    if len(payload) < header["payload_bytes"]:
        raise TruncatedCheckpointError(
            f"{path}: payload holds {len(payload)} bytes, manifest says "
            f"{header['payload_bytes']}"
        )
    return header, payload


def _manifest_of(header: dict) -> CheckpointManifest:
    return CheckpointManifest(
        format_version=header["format_version"],
        encoder_config=header["encoder_config"],
        component=header["component"],
        step=header["step"],
        seed=header["seed"],
        has_optimizer_state=header["has_optimizer_state"],
        extras=header.get("extras", {}),
    )


def _tensor_from(payload: bytes, entry: dict, path) -> np.ndarray:
    shape = tuple(entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    start = entry["offset"]
    end = start + count * 4
    if end > len(payload):
        raise TruncatedCheckpointError(
            f"{path}: tensor {entry['name']!r} spans past end of file"
        )
    arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
    return arr.reshape(shape).copy()


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    """Reconstruct parameters (and optimizer moments, if saved) bitwise."""
    header, payload = _read_container(path)
    params: dict[str, Parameter] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name = entry["name"]
        arr = _tensor_from(payload, entry, path)
        if name.startswith(_M_PREFIX):
            m[name[len(_M_PREFIX):]] = arr
        elif name.startswith(_V_PREFIX):
            v[name[len(_V_PREFIX):]] = arr
        else:
            params[name] = Parameter(arr, name=name, no_decay=entry["no_decay"])
    optimizer = None
    if header["has_optimizer_state"]:
        optimizer = AdamState(m=m, v=v, t=header["optimizer_t"])
    return LoadedCheckpoint(manifest=_manifest_of(header), params=params, optimizer=optimizer)


def load_into(path: str | Path, params: Mapping[str, Parameter]) -> CheckpointManifest:
    """Load stored tensors into an existing parameter dict, strictly.

    Every stored tensor must match a parameter by name and shape, and every
    parameter must be present in the file.
    """
    header, payload = _read_container(path)
    stored = {e["name"]: e for e in header["tensors"] if not e["name"].startswith("adam.")}
    unknown = sorted(set(stored) - set(params))
    if unknown:
        raise UnknownTensorError(f"{path}: stored tensors not in model: {unknown[:5]}")
    missing = sorted(set(params) - set(stored))
    if missing:
        raise UnknownTensorError(f"{path}: model parameters missing from file: {missing[:5]}")
    for name, entry in stored.items():
        target = params[name]
        if tuple(entry["shape"]) != target.data.shape:
            raise TensorShapeError(
                f"{path}: tensor {name!r} has shape {tuple(entry['shape'])}, "
                f"model expects {target.data.shape}"
            )
    for name, entry in stored.items():
        params[name].data = _tensor_from(payload, entry, path)
    return _manifest_of(header)
