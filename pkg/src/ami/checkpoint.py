"""Self-describing binary container for parameters and cached datasets.

Layout: 8-byte magic, little-endian u64 header length, a canonical JSON
header (format version, metadata, block table), then the raw little-endian
array blocks in table order. Writing the same content twice yields the same
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AMICKPT\x00"
FORMAT_VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8"), "u1": np.dtype("u1"), "b1": np.dtype("?")}


class CheckpointError(ValueError):
    pass


def _dtype_code(a: np.ndarray) -> str:
    if a.dtype == np.bool_:
        return "b1"
    if np.issubdtype(a.dtype, np.floating):
        return "f8"
    if np.issubdtype(a.dtype, np.integer):
        return "i8"
    raise CheckpointError(f"unsupported dtype {a.dtype}")


def dumps(blocks: dict[str, np.ndarray], meta: dict, kind: str = "model") -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in blocks.items():
        code = _dtype_code(np.asarray(arr))
        raw = np.ascontiguousarray(np.asarray(arr), dtype=_DTYPES[code]).tobytes()
        table.append({"name": name, "dtype": code, "shape": list(np.shape(arr)),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "blocks": table}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)


def loads(buf: bytes, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    if len(buf) < 16 + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format version mismatch: file has {version}, expected {FORMAT_VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"expected a '{kind}' container, found '{header.get('kind')}'")
    base = 16 + hlen
    blocks = {}
    for b in header["blocks"]:
        start = base + b["offset"]
        end = start + b["nbytes"]
        if end > len(buf):
            raise CheckpointError(f"truncated checkpoint: block '{b['name']}' incomplete")
        arr = np.frombuffer(buf[start:end], dtype=_DTYPES[b["dtype"]]).reshape(b["shape"]).copy()
        blocks[b["name"]] = arr
    return blocks, header["meta"]


def save(path, blocks: dict[str, np.ndarray], meta: dict, kind: str = "model") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(blocks, meta, kind))


def load(path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes(), kind)
