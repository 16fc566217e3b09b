"""Single-file parameter checkpoints.

Layout::

    b"BAGCNCK1" | uint64 LE header length | JSON header | float64 LE payload

The header lists every tensor as ``{name, kind, shape, offset}`` (offset in
bytes from the start of the payload) and embeds the model config so a
checkpoint is self-describing.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .config import model_config_from_dict, model_config_to_dict
from .const import CHECKPOINT_FORMAT, CHECKPOINT_MAGIC
from .errors import ConfigError, DatasetError
from .network import BAGCNModel, build_model

_LOGGER = logging.getLogger(__name__)

KIND_PARAM = "param"
KIND_BUFFER = "buffer"
_LENGTH = struct.Struct("<Q")

TENSOR_ENTRY_SCHEMA = vol.Schema(
    {
        vol.Required("name"): str,
        vol.Required("kind"): vol.In([KIND_PARAM, KIND_BUFFER]),
        vol.Required("shape"): [vol.All(int, vol.Range(min=0))],
        vol.Required("offset"): vol.All(int, vol.Range(min=0)),
    }
)

HEADER_SCHEMA = vol.Schema(
    {
        vol.Required("format"): int,
        vol.Required("tensors"): [TENSOR_ENTRY_SCHEMA],
        vol.Optional("config", default={}): dict,
        vol.Optional("metadata", default={}): dict,
    }
)


class CheckpointError(DatasetError):
    """The checkpoint file is unreadable or does not match the model."""


@dataclass
class CheckpointContents:
    """Decoded checkpoint: tensors by kind plus free-form header fields."""

    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    config: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)


def write_tensors(
    path: Path,
    params: dict[str, np.ndarray],
    buffers: dict[str, np.ndarray] | None = None,
    config: dict[str, Any] | None = None,
    metadata: dict[str, Any] | None = None,
) -> Path:
    """Write tensors atomically (temp file, then rename)."""
    path = Path(path)
    entries: list[dict[str, Any]] = []
    chunks: list[bytes] = []
    offset = 0
    for kind, group in ((KIND_PARAM, params), (KIND_BUFFER, buffers or {})):
        for name, value in group.items():
            payload = np.ascontiguousarray(value, dtype="<f8").tobytes()
            entries.append(
                {"name": name, "kind": kind, "shape": list(np.shape(value)), "offset": offset}
            )
            chunks.append(payload)
            offset += len(payload)
    header = {
        "format": CHECKPOINT_FORMAT,
        "tensors": entries,
        "config": config or {},
        "metadata": metadata or {},
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_LENGTH.pack(len(encoded)))
        fh.write(encoded)
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)
    _LOGGER.debug("wrote %d tensors (%d bytes) to %s", len(entries), offset, path)
    return path


def read_tensors(path: Path) -> CheckpointContents:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    prefix = len(CHECKPOINT_MAGIC)
    if raw[:prefix] != CHECKPOINT_MAGIC or len(raw) < prefix + _LENGTH.size:
        raise CheckpointError(f"{path} is not a bagcn checkpoint")
    (length,) = _LENGTH.unpack_from(raw, prefix)
    start = prefix + _LENGTH.size
    try:
        header = json.loads(raw[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header") from err
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        found = header.get("format") if isinstance(header, dict) else None
        raise CheckpointError(f"{path}: unsupported checkpoint format {found!r}")
    try:
        header = HEADER_SCHEMA(header)
    except vol.Invalid as err:
        raise CheckpointError(f"{path}: invalid header: {err}") from err
    payload = memoryview(raw)[start + length :]
    contents = CheckpointContents({}, {}, header["config"], header["metadata"])
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        begin = entry["offset"]
        end = begin + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} is truncated")
        value = np.frombuffer(payload[begin:end], dtype="<f8").astype(np.float64).reshape(shape)
        target = contents.params if entry["kind"] == KIND_PARAM else contents.buffers
        target[entry["name"]] = value
    return contents


def save_checkpoint(path: Path, model: BAGCNModel, metadata: dict[str, Any] | None = None) -> Path:
    params = {name: p.data for name, p in model.named_parameters().items()}
    return write_tensors(
        path,
        params,
        model.buffers(),
        config=model_config_to_dict(model.config),
        metadata=metadata,
    )


def load_into(model: BAGCNModel, contents: CheckpointContents) -> None:
    """Copy stored values into an already built model of the same shape."""
    named = model.named_parameters()
    missing = sorted(set(named) - set(contents.params))
    unexpected = sorted(set(contents.params) - set(named))
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint does not match model: missing {missing[:3]}, unexpected {unexpected[:3]}"
        )
    for name, param in named.items():
        param.assign(contents.params[name])
    try:
        model.load_buffers(contents.buffers)
    except KeyError as err:
        raise CheckpointError(f"checkpoint lacks buffer {err}") from err


def load_checkpoint(path: Path) -> tuple[BAGCNModel, dict[str, Any]]:
    """Rebuild the model described in the header and load its values."""
    contents = read_tensors(path)
    if not contents.config:
        raise CheckpointError(f"{path}: no model config embedded")
    try:
        config = model_config_from_dict(contents.config)
    except ConfigError as err:
        raise CheckpointError(f"{path}: embedded model config is invalid: {err}") from err
    model = build_model(config, seed=0)
    load_into(model, contents)
    _LOGGER.info("loaded checkpoint %s (%d parameters)", path, model.num_parameters())
    return model, contents.metadata
