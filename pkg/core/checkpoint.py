#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Versioned binary checkpoints for parameter sets.

Layout (all integers little-endian)::

    8 bytes   magic  b"OMCRLCKP"
    u32       format version
    u32       header length N
    N bytes   UTF-8 JSON header (sorted keys): component, config_hash, step,
              rng_state, meta, app_version, params = [{name, shape, offset, count}, ...]
    payload   float32 values of every parameter, in header order
    32 bytes  SHA-256 of everything above

Parameters are trained in float64 and stored as float32.
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from packaging import version

from config import VERSION, app_logger, debug_logger
from core.errors import ConfigError, IntegrityError, VersionError

MAGIC = b"OMCRLCKP"
FORMAT_VERSION = 1
COMPONENTS = ("encoder", "projection", "transformer", "oracle", "student")
_PREFIX = struct.Struct("<8sII")
_DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    """One serialized parameter set with its provenance."""
    component: str
    params: Dict[str, np.ndarray]
    config_hash: str
    step: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)
    app_version: str = VERSION

    def state(self, prefix: Optional[str] = None) -> Dict[str, np.ndarray]:
        """float64 parameter dictionary, optionally restricted to ``prefix.`` names with the prefix stripped."""
        if prefix is None:
            return {name: values.astype(np.float64) for name, values in self.params.items()}
        head = prefix + "."
        return {name[len(head):]: values.astype(np.float64)
                for name, values in self.params.items() if name.startswith(head)}


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    if checkpoint.component not in COMPONENTS:
        raise ConfigError(f"unknown checkpoint component: {checkpoint.component}")
    entries = []
    chunks = []
    offset = 0
    for name in checkpoint.params:
        values = np.array(checkpoint.params[name], dtype="<f4", order="C")
        entries.append({"name": name, "shape": list(values.shape), "offset": offset, "count": int(values.size)})
        chunks.append(values.tobytes())
        offset += values.size
    header = {
        "component": checkpoint.component,
        "config_hash": checkpoint.config_hash,
        "step": int(checkpoint.step),
        "rng_state": checkpoint.rng_state,
        "meta": checkpoint.meta,
        "app_version": checkpoint.app_version,
        "params": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        IntegrityError: Truncated data, bad magic, bad digest or inconsistent header.
        VersionError: The file was written by another format version.
    """
    if len(blob) < _PREFIX.size + _DIGEST_SIZE:
        raise IntegrityError(f"checkpoint truncated: {len(blob)} bytes")
    magic, format_version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic)")
    if format_version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {format_version} is not supported (expected {FORMAT_VERSION})")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint digest mismatch (truncated or corrupted file)")
    header_end = _PREFIX.size + header_len
    if header_end > len(body):
        raise IntegrityError("checkpoint header extends past end of file")
    try:
        header = json.loads(body[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"checkpoint header unreadable: {e}") from e

    payload = np.frombuffer(body, dtype="<f4", offset=header_end)
    params = {}
    for entry in header["params"]:
        start, count = entry["offset"], entry["count"]
        if start + count > payload.size or int(np.prod(entry["shape"], dtype=np.int64)) != count:
            raise IntegrityError(f"checkpoint entry {entry['name']} is inconsistent with the payload")
        params[entry["name"]] = payload[start:start + count].reshape(entry["shape"]).copy()
    if sum(e["count"] for e in header["params"]) != payload.size:
        raise IntegrityError("checkpoint payload size does not match its header")
    return Checkpoint(
        component=header["component"],
        params=params,
        config_hash=header["config_hash"],
        step=header["step"],
        rng_state=header["rng_state"],
        meta=header["meta"],
        app_version=header.get("app_version", VERSION),
    )


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    """Write ``checkpoint`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(checkpoint)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    debug_logger.debug(f"Saved {checkpoint.component} checkpoint ({len(blob)} bytes) to {path}")
    return path


def load_checkpoint(path, expected_hash: Optional[str] = None, force: bool = False,
                    component: Optional[str] = None) -> Checkpoint:
    """Read and verify a checkpoint.

    Args:
        path: Checkpoint file.
        expected_hash: Model-config hash the caller will build parameters for.
        force: Downgrade a config-hash mismatch to a warning.
        component: Expected component tag.

    Returns:
        The decoded checkpoint.
    """
    path = Path(path)
    with open(path, "rb") as handle:
        checkpoint = decode_checkpoint(handle.read())
    if version.parse(checkpoint.app_version.lstrip("v")) > version.parse(VERSION.lstrip("v")):
        app_logger.warning(f"{path} was written by a newer release ({checkpoint.app_version}) than {VERSION}")
    if component is not None and checkpoint.component != component:
        raise ConfigError(f"{path} holds a {checkpoint.component} checkpoint, expected {component}")
    if expected_hash is not None and checkpoint.config_hash != expected_hash:
        message = f"{path} was written for a different model configuration (hash {checkpoint.config_hash[:12]})"
        if not force:
            raise ConfigError(message + "; pass --force to load anyway")
        app_logger.warning(message + "; loading anyway (--force)")
    debug_logger.debug(f"Loaded {checkpoint.component} checkpoint from {path} at step {checkpoint.step}")
    return checkpoint
