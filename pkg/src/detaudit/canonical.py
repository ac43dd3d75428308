"""Canonical JSON serialization and hashing.

Every byte that gets hashed or compared for reproducibility goes through
here: sorted keys, no insignificant whitespace, shortest round-trip
decimals, UTF-8. Equal values always serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

__all__ = ["CanonicalError", "canonical_serialize", "sha256_hex", "payload_digest"]


class CanonicalError(ValueError):
    """Value cannot be represented canonically (NaN/Inf, bad key, bad type)."""


def _check(value: Any, path: str) -> None:
    if value is None or isinstance(value, (bool, str, int)):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalError(f"non-finite number at {path}: {value!r}")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise CanonicalError(f"non-string map key at {path}: {key!r}")
            _check(item, f"{path}.{key}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    raise CanonicalError(f"unsupported type at {path}: {type(value).__name__}")


def canonical_serialize(value: Any) -> bytes:
    """Serialize a JSON tree to canonical UTF-8 bytes.

    Maps are emitted with lexicographically sorted keys, lists in order,
    numbers as their shortest round-trip decimal (Python repr), and no
    whitespace. Repeated calls on equal values are byte-identical across
    platforms. NaN or Inf anywhere raises CanonicalError.
    """
    _check(value, "$")
    text = json.dumps(
        value,
        sort_keys=True,
        ensure_ascii=False,
        allow_nan=False,
        separators=(",", ":"),
    )
    return text.encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def payload_digest(value: Any) -> str:
    """SHA-256 of the canonical serialization, as 64 lowercase hex chars."""
    return sha256_hex(canonical_serialize(value))
