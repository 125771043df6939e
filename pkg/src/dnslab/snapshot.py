"""Self-describing binary snapshots: magic, version, JSON header, little-endian float64 payload.

Layout::

    b"DNSLABSN" | uint32 version | uint64 header length | header (UTF-8 JSON) | payload

The header lists every field with its shape and byte offset into the payload,
the grid, the parameters, the time and a SHA-256 checksum of the payload. JSON
is written with sorted keys so that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import SnapshotError
from .grid import Grid
from .params import Params
from .state import PrimitiveState, ReformState

MAGIC = b"DNSLABSN"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

_LAYOUT = {"primitive": ("rho", "u"), "reform": ("phi", "u", "psi", "h", "varphi", "f")}


def _kind(state) -> str:
    if isinstance(state, PrimitiveState):
        return "primitive"
    if isinstance(state, ReformState):
        return "reform"
    raise TypeError("state must be a PrimitiveState or ReformState")


def encode_snapshot(state, params: Params) -> bytes:
    kind = _kind(state)
    chunks = []
    entries = []
    offset = 0
    for name in _LAYOUT[kind]:
        arr = np.ascontiguousarray(getattr(state, name), dtype="<f8")
        data = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "version": VERSION,
        "kind": kind,
        "endianness": "little",
        "t": float(state.t),
        "grid": state.grid.to_dict(),
        "params": asdict(params),
        "fields": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload


def save_snapshot(state, params: Params, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_snapshot(state, params))
    return path


def _read_header(fh) -> tuple[dict, int]:
    prefix = fh.read(_PREFIX.size)
    if len(prefix) != _PREFIX.size:
        raise SnapshotError("file too short for a snapshot header")
    magic, version, hlen = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise SnapshotError("not a dnslab snapshot (bad magic bytes)")
    if version != VERSION:
        raise SnapshotError(f"snapshot version {version} is not supported (expected {VERSION})")
    raw = fh.read(hlen)
    if len(raw) != hlen:
        raise SnapshotError("truncated snapshot header")
    header = json.loads(raw.decode())
    if header.get("version") != VERSION:
        raise SnapshotError(f"header version {header.get('version')} does not match {VERSION}")
    return header, _PREFIX.size + hlen


def inspect_snapshot(path) -> dict:
    """Header only; the payload is not read."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
    return header


def load_snapshot(path, grid: Grid | None = None):
    """Return (state, params, header). ``grid`` (if given) must match the stored layout."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise SnapshotError("snapshot checksum mismatch")
    stored = Grid.from_dict(header["grid"])
    if grid is not None and not grid.same_layout(stored):
        raise SnapshotError(f"snapshot grid {stored!r} does not match configured grid {grid!r}")
    g = grid if grid is not None else stored
    arrays = {}
    for e in header["fields"]:
        buf = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise SnapshotError(f"payload truncated in field {e['name']}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"])
    params = Params(**header["params"])
    cls = PrimitiveState if header["kind"] == "primitive" else ReformState
    return cls(g, t=header["t"], **arrays), params, header
