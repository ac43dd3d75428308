"""Hash-chained, append-only storage for determinism reports.

The ledger file is JSONL: one entry per line, each committing to its
predecessor via SHA-256, so any later tampering breaks the first link at
or right after the edit. Payloads live beside the ledger as
content-addressed files (objects/<first2hex>/<fullhash>.json), keeping the
chain compact and payloads deduplicated.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

from .canonical import canonical_serialize, payload_digest, sha256_hex

__all__ = [
    "LedgerEntry",
    "VerifyResult",
    "LedgerError",
    "LockHeldError",
    "GENESIS_HASH",
    "append",
    "verify",
    "read_entries",
    "object_path",
]

GENESIS_HASH = "0" * 64

_ENTRY_FIELDS = ("index", "timestamp_ms", "prev_hash", "payload_hash", "entry_hash", "payload_ref")


class LedgerError(RuntimeError):
    pass


class LockHeldError(LedgerError):
    """Another writer holds the ledger lock."""


@dataclass
class LedgerEntry:
    index: int
    timestamp_ms: int
    prev_hash: str
    payload_hash: str
    entry_hash: str
    payload_ref: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "timestamp_ms": self.timestamp_ms,
            "prev_hash": self.prev_hash,
            "payload_hash": self.payload_hash,
            "entry_hash": self.entry_hash,
            "payload_ref": self.payload_ref,
        }


def _entry_hash(index: int, timestamp_ms: int, prev_hash: str, payload_hash: str) -> str:
    # canonical serialization of the four hashed fields, built directly on
    # the hot path; test_ledger pins byte-equivalence to canonical_serialize
    body = (
        f'{{"index":{index},"payload_hash":"{payload_hash}",'
        f'"prev_hash":"{prev_hash}","timestamp_ms":{timestamp_ms}}}'
    )
    return sha256_hex(body.encode("utf-8"))


def object_path(ledger_path: Union[str, Path], payload_hash: str) -> Path:
    return Path(ledger_path).parent / "objects" / payload_hash[:2] / f"{payload_hash}.json"


def _object_ref(payload_hash: str) -> str:
    return f"objects/{payload_hash[:2]}/{payload_hash}.json"


@dataclass
class VerifyResult:
    ok: bool
    first_broken_index: Optional[int] = None
    detail: str = ""
    n_entries: int = 0


def read_entries(path: Union[str, Path]) -> list[LedgerEntry]:
    """Parse a ledger file without verifying it."""
    entries = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            entries.append(LedgerEntry(**{k: obj[k] for k in _ENTRY_FIELDS}))
    return entries


def _scan(path: Path, check_payloads: bool) -> tuple[VerifyResult, list[str], str]:
    """Single verification pass; returns (result, raw verified lines, last hash)."""
    if not path.exists():
        return VerifyResult(ok=True, n_entries=0), [], GENESIS_HASH
    lines: list[str] = []
    prev = GENESIS_HASH
    index = 0
    with path.open("r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue

            def broken(detail: str) -> tuple[VerifyResult, list[str], str]:
                return (
                    VerifyResult(ok=False, first_broken_index=index, detail=detail, n_entries=len(lines)),
                    lines,
                    prev,
                )

            try:
                obj = json.loads(line)
                entry_hash = obj["entry_hash"]
                recomputed = _entry_hash(obj["index"], obj["timestamp_ms"], obj["prev_hash"], obj["payload_hash"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                return broken(f"unparseable entry: {exc}")
            if obj["index"] != index:
                return broken(f"index gap: stored {obj['index']}, expected {index}")
            if obj["prev_hash"] != prev:
                return broken("broken prev link")
            if recomputed != entry_hash:
                return broken("entry hash mismatch")
            if obj.get("payload_ref") not in (_object_ref(obj["payload_hash"]), "inline"):
                return broken("payload_ref mismatch")
            if check_payloads and obj["payload_ref"] != "inline":
                obj_path = object_path(path, obj["payload_hash"])
                try:
                    stored = json.loads(obj_path.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError) as exc:
                    return broken(f"payload object unreadable: {exc}")
                if payload_digest(stored) != obj["payload_hash"]:
                    return broken("payload object mismatch")
            prev = entry_hash
            lines.append(line)
            index += 1
    return VerifyResult(ok=True, n_entries=len(lines)), lines, prev


def verify(path: Union[str, Path], check_payloads: bool = False) -> VerifyResult:
    """Recompute every entry hash and link; report the first broken index.

    A line that fails to parse, a non-contiguous index, a mismatched
    recomputed hash, a broken prev link, or a payload_ref that is not the
    canonical derivation of payload_hash all break the chain at that entry.
    With check_payloads=True, stored payload objects are re-hashed too.
    """
    result, _, _ = _scan(Path(path), check_payloads)
    return result


class _Lock:
    """Advisory single-writer lock (O_CREAT|O_EXCL sidecar file)."""

    def __init__(self, path: Path):
        self.path = path.with_name(path.name + ".lock")
        self.fd: Optional[int] = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeldError(f"ledger lock held: {self.path}") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def append(
    path: Union[str, Path],
    payload: Any,
    timestamp_ms: Optional[int] = None,
    store_payload: bool = True,
) -> LedgerEntry:
    """Append a payload to the ledger, refusing if the existing chain is broken.

    The payload is canonically serialized, hashed, and written as a
    content-addressed object (unless store_payload=False, which records the
    hash with payload_ref="inline"). The updated ledger is written to a
    temp file and renamed, so readers never observe a torn file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _Lock(path):
        state, entries = _verify_and_read(path, check_payloads=False)
        if not state.ok:
            raise LedgerError(
                f"refusing to append: chain broken at index {state.first_broken_index} ({state.detail})"
            )
        prev = entries[-1].entry_hash if entries else GENESIS_HASH
        index = len(entries)
        ts = int(time.time() * 1000) if timestamp_ms is None else int(timestamp_ms)
        digest = payload_digest(payload)
        ref = _object_ref(digest) if store_payload else "inline"
        entry = LedgerEntry(
            index=index,
            timestamp_ms=ts,
            prev_hash=prev,
            payload_hash=digest,
            entry_hash=_entry_hash(index, ts, prev, digest),
            payload_ref=ref,
        )
        if store_payload:
            obj_path = object_path(path, digest)
            obj_path.parent.mkdir(parents=True, exist_ok=True)
            if not obj_path.exists():
                tmp_obj = obj_path.with_suffix(".tmp")
                tmp_obj.write_bytes(canonical_serialize(payload))
                os.replace(tmp_obj, obj_path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for existing in entries:
                fh.write(canonical_serialize(existing.to_dict()).decode("utf-8"))
                fh.write("\n")
            fh.write(canonical_serialize(entry.to_dict()).decode("utf-8"))
            fh.write("\n")
        os.replace(tmp, path)
    return entry
