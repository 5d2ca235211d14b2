"""Binary container and fingerprint helpers for the draw store.

The draw store is a sectioned binary file: a fixed header (magic,
version, section count) followed by tagged sections, each an 8-byte
ASCII tag, an 8-byte little-endian length, and the payload.  Sections
hold JSON metadata or packed float64 arrays; array payloads carry their
own JSON header with shapes and SHA-256 checksums.

Everything written here is byte-reproducible for a fixed config and
seed except the ``created_at`` metadata field, which callers must
exclude when comparing stores.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import ChecksumMismatchError, DataError

MAGIC = b"SCOSDRW1"
FORMAT_VERSION = 1


def _canonical(obj):
    """Make an object JSON-serializable with deterministic content."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


def canonical_json(obj):
    """Deterministic JSON bytes (sorted keys, no whitespace drift)."""
    return json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":")).encode()


def fingerprint(obj):
    """SHA-256 hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj)).hexdigest()


def pack_arrays(header, arrays):
    """Pack a JSON header plus named float64 arrays into one payload.

    Arrays are stored row-major little-endian in sorted name order; the
    header gains an ``arrays`` entry with each array's shape and SHA-256.
    """
    header = dict(_canonical(header))
    header["arrays"] = {}
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        buf = arr.tobytes()
        header["arrays"][name] = {
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(buf).hexdigest(),
        }
        chunks.append(buf)
    head = canonical_json(header)
    return b"".join([len(head).to_bytes(8, "little"), head, *chunks])


def unpack_arrays(blob):
    """Inverse of ``pack_arrays``; verifies every array checksum."""
    hlen = int.from_bytes(blob[:8], "little")
    header = json.loads(blob[8:8 + hlen].decode())
    offset = 8 + hlen
    arrays = {}
    for name in sorted(header.get("arrays", {})):
        meta = header["arrays"][name]
        shape = tuple(meta["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        raw = blob[offset:offset + nbytes]
        if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
            raise DataError(f"array {name!r} failed its checksum; file corrupt")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    return header, arrays


def write_container(path, sections):
    """Write tagged sections to a container file.

    ``sections`` is an ordered list of (tag, payload) with tags up to 8
    ASCII characters.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(sections).to_bytes(4, "little"))
        for tag, payload in sections:
            raw_tag = tag.encode("ascii")
            if len(raw_tag) > 8:
                raise DataError(f"section tag {tag!r} longer than 8 bytes")
            fh.write(raw_tag.ljust(8, b"\x00"))
            fh.write(len(payload).to_bytes(8, "little"))
            fh.write(hashlib.sha256(payload).digest())
            fh.write(payload)


def read_container(path):
    """Read a container file into an ordered {tag: payload} dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a draw store (bad magic)")
    version = int.from_bytes(blob[8:12], "little")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported draw-store version {version}")
    n_sections = int.from_bytes(blob[12:16], "little")
    offset = 16
    sections = {}
    for _ in range(n_sections):
        tag = blob[offset:offset + 8].rstrip(b"\x00").decode("ascii")
        length = int.from_bytes(blob[offset + 8:offset + 16], "little")
        digest = blob[offset + 16:offset + 48]
        payload = blob[offset + 48:offset + 48 + length]
        if len(payload) != length:
            raise DataError(f"{path}: truncated section {tag!r}")
        if hashlib.sha256(payload).digest() != digest:
            raise ChecksumMismatchError(f"{path}: section {tag!r} fails its checksum")
        sections[tag] = payload
        offset += 48 + length
    return sections
