"""Versioned binary checkpoints.

Layout (all little-endian):

    bytes 0..7   magic "CLSPOOL1" (the trailing digit is the version)
    bytes 8..11  uint32 header length H
    bytes 12..   H bytes of JSON (sorted keys): run config, metadata,
                 and the array manifest [{"name", "shape"}, ...]
    then         the arrays from the manifest, in order, as row-major
                 float64

Metadata carries the pooling mode, class count, optimizer step
counters, and the generator states needed to resume: everything is
JSON, so a checkpoint written twice from the same state is
byte-identical.
"""

import json
import struct

import numpy as np

MAGIC = b"CLSPOOL1"


class CheckpointError(Exception):
    """Malformed checkpoint file."""


class BadCheckpointMagic(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


def save_checkpoint(path, config_dict, meta, arrays):
    """Write config, metadata, and named float64 arrays.

    `arrays` is an ordered list of (name, array); order is preserved
    and is the payload order.
    """
    manifest = [{"name": name, "shape": list(np.asarray(a).shape)} for name, a in arrays]
    header = {"format": 1, "config": config_dict, "meta": meta, "arrays": manifest}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedCheckpoint(f"file ends inside {what} ({len(buf)} of {n} bytes)")
    return buf


def load_checkpoint(path):
    """Read back (config_dict, meta, {name: array})."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadCheckpointMagic(f"expected {MAGIC!r}, found {magic!r}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"unreadable header: {exc}") from exc
        if header.get("format") != 1:
            raise CheckpointError(f"unsupported format {header.get('format')!r}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = _read_exact(fh, 8 * count, f"array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["config"], header["meta"], arrays
