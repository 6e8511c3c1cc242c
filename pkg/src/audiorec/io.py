"""Shared file plumbing: canonical JSON, JSON lines, packed array containers, hashing."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

PACK_MAGIC = b"ARPK1\n"


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, compact separators, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    return sha256_bytes(canonical_json(obj).encode("utf-8"))


def write_json(obj, path) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec))
            fh.write("\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_pack(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Versioned binary container: JSON header plus raw C-order array payloads.

    Arrays are written in sorted-name order so the container round-trips
    byte-exactly.
    """
    names = sorted(arrays)
    header = {
        "version": 1,
        "meta": meta,
        "arrays": [
            {"name": n, "shape": list(arrays[n].shape), "dtype": str(arrays[n].dtype)}
            for n in names
        ],
    }
    blob = canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PACK_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n]).tobytes())


def read_pack(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(PACK_MAGIC))
        if magic != PACK_MAGIC:
            raise ValueError(f"{path}: not a packed array container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            data = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = (
                np.frombuffer(data, dtype=dtype).reshape(entry["shape"]).copy()
            )
    return header["meta"], arrays
