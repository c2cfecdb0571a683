"""Manifest + raw-array persistence.

Two layouts share the same array descriptor schema (name, dtype, shape,
byte offset, crc32):

* a single-file blob: magic, 8-byte big-endian manifest length, the
  UTF-8 JSON manifest, then the raw little-endian row-major array
  payload (model files, checkpoints, attribution maps);
* a directory: ``manifest.json`` plus one ``.bin`` per named array
  (datasets).

Checksums are CRC-32 over each array's raw bytes and are verified on
every read.
"""

import json
import os
import zlib
from pathlib import Path

import numpy as np

from .errors import ContainerError

MAGIC = b"NNCONT01"
SCHEMA_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<u2": np.dtype("<u2"), "<i8": np.dtype("<i8")}


def _descriptor(name, arr, offset):
    dtype = arr.dtype.newbyteorder("<").str
    if dtype not in _DTYPES:
        raise ContainerError(f"unsupported array dtype {arr.dtype} for {name!r}")
    raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype], copy=False).tobytes()
    return {
        "name": name,
        "dtype": dtype,
        "shape": list(arr.shape),
        "byte_offset": offset,
        "crc32": zlib.crc32(raw),
    }, raw


def _decode(desc, payload):
    start = desc["byte_offset"]
    dtype = _DTYPES.get(desc["dtype"])
    if dtype is None:
        raise ContainerError(f"unknown dtype {desc['dtype']!r} in manifest")
    nbytes = int(np.prod(desc["shape"], dtype=np.int64)) * dtype.itemsize
    raw = payload[start : start + nbytes]
    if len(raw) != nbytes:
        raise ContainerError(f"array {desc['name']!r} truncated")
    if zlib.crc32(raw) != desc["crc32"]:
        raise ContainerError(f"checksum mismatch for array {desc['name']!r}")
    return np.frombuffer(raw, dtype=dtype).reshape(desc["shape"]).copy()


def _manifest_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack_blob(meta: dict, arrays: dict) -> bytes:
    """Serialize metadata and named arrays into a single byte string."""
    descriptors = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        desc, raw = _descriptor(name, arrays[name], offset)
        descriptors.append(desc)
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(meta)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["arrays"] = descriptors
    mbytes = _manifest_bytes(manifest)
    return MAGIC + len(mbytes).to_bytes(8, "big") + mbytes + b"".join(chunks)


def unpack_blob(data: bytes):
    """Inverse of pack_blob; returns (meta, arrays). Raises ContainerError
    on bad magic, unsupported schema version, truncation, or checksum."""
    if data[: len(MAGIC)] != MAGIC:
        raise ContainerError("bad container magic")
    mlen = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 8], "big")
    mstart = len(MAGIC) + 8
    try:
        manifest = json.loads(data[mstart : mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable container manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ContainerError(f"unsupported schema version {manifest.get('schema_version')}")
    payload = data[mstart + mlen :]
    arrays = {d["name"]: _decode(d, payload) for d in manifest["arrays"]}
    meta = {k: v for k, v in manifest.items() if k not in ("arrays", "schema_version")}
    return meta, arrays


def write_blob_file(path, meta: dict, arrays: dict) -> None:
    atomic_write_bytes(path, pack_blob(meta, arrays))


def read_blob_file(path):
    return unpack_blob(Path(path).read_bytes())


def write_dir(path, meta: dict, arrays: dict) -> None:
    """Directory layout: manifest.json plus one <name>.bin per array."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    descriptors = []
    for name in sorted(arrays):
        desc, raw = _descriptor(name, arrays[name], 0)
        desc["file"] = f"{name}.bin"
        descriptors.append(desc)
        atomic_write_bytes(path / desc["file"], raw)
    manifest = dict(meta)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["arrays"] = descriptors
    atomic_write_bytes(path / "manifest.json", _manifest_bytes(manifest) + b"\n")


def read_dir(path, names=None):
    """Load a container directory; ``names`` restricts which arrays are
    read (and which .bin files are touched at all)."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ContainerError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ContainerError(f"unsupported schema version {manifest.get('schema_version')}")
    arrays = {}
    for desc in manifest["arrays"]:
        if names is not None and desc["name"] not in names:
            continue
        payload = (path / desc["file"]).read_bytes()
        arrays[desc["name"]] = _decode(desc, payload)
    meta = {k: v for k, v in manifest.items() if k not in ("arrays", "schema_version")}
    return meta, arrays


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file + rename so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
