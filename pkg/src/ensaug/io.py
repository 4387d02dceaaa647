"""Line-delimited JSON, digests, and the binary container shared by model files."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from .errors import DataError


def dumps(record: Any) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"), sort_keys=False)


def canonical_bytes(obj: Any) -> bytes:
    """Stable byte encoding used for digests (sorted keys, no whitespace)."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True).encode("utf-8")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_obj(obj: Any) -> str:
    return sha256_bytes(canonical_bytes(obj))


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; blank lines are skipped."""
    path = Path(path)
    try:
        f = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    with f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                rec = json.loads(s)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: record is not an object")
            yield lineno, rec


def read_jsonl(path: str | Path) -> list[dict]:
    return [rec for _, rec in iter_jsonl(path)]


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(dumps(rec))
            f.write("\n")
            n += 1
    return n


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# Binary container: magic(8) | u32 header length | JSON header | raw little-endian arrays.
# The header lists each array's name, dtype and shape in payload order.

def write_container(path: str | Path, magic: bytes, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    assert len(magic) == 8
    layout = []
    for name, arr in arrays:
        layout.append({"name": name, "dtype": arr.dtype.newbyteorder("<").str, "shape": list(arr.shape)})
    full = dict(header)
    full["arrays"] = layout
    hbytes = canonical_bytes(full)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes(order="C"))


def read_container(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    if data[:8] != magic:
        raise DataError(f"{path}: not a {magic.decode('ascii', 'replace').strip()} file (bad magic)")
    if len(data) < 12:
        raise DataError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header") from exc
    if not isinstance(header, dict) or not isinstance(header.get("arrays"), list):
        raise DataError(f"{path}: corrupt header")
    offset = 12 + hlen
    arrays: dict[str, np.ndarray] = {}
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(data):
            raise DataError(f"{path}: truncated payload for array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays
