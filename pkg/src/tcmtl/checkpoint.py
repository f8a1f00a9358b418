"""Versioned binary checkpoint container.

Layout (all little-endian): magic b"TCMT", u32 format version, then a
sequence of length-prefixed sections. Each section is

    u32 name length | name (ascii) | u64 payload length | payload

Text sections (net config, task layout, meta) hold canonical key=value
lines. Array sections hold u32 ndim, ndim x u64 dims, then raw float64
data, so a load/save round trip is bit-identical.
"""
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

MAGIC = b"TCMT"
VERSION = 1


def write_atomic(path, data):
    """Write bytes to path via a temp file and atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack_section(name, payload):
    raw = name.encode("ascii")
    return struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload


def pack_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = struct.pack("<I", arr.ndim) + b"".join(struct.pack("<Q", d) for d in arr.shape)
    return header + arr.tobytes()


def unpack_array(payload):
    (ndim,) = struct.unpack_from("<I", payload, 0)
    dims = struct.unpack_from("<" + "Q" * ndim, payload, 4)
    data = np.frombuffer(payload, dtype="<f8", offset=4 + 8 * ndim)
    expected = int(np.prod(dims)) if ndim else 1
    if data.size != expected:
        raise FormatError(f"array section payload size mismatch: {data.size} vs {expected}")
    return data.reshape(dims).astype(np.float64)


def pack_sections(sections):
    """sections: ordered list of (name, bytes). Returns the container bytes."""
    body = b"".join(_pack_section(name, payload) for name, payload in sections)
    return MAGIC + struct.pack("<I", VERSION) + body


def unpack_sections(data):
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    sections = []
    pos = 8
    while pos < len(data):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + name_len].decode("ascii")
        pos += name_len
        (payload_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        payload = data[pos:pos + payload_len]
        if len(payload) != payload_len:
            raise FormatError(f"truncated checkpoint section {name!r}")
        pos += payload_len
        sections.append((name, payload))
    return sections


def text_payload(mapping):
    return "".join(f"{k}={v}\n" for k, v in sorted(mapping.items())).encode("utf-8")


def parse_text_payload(payload):
    out = {}
    for line in payload.decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"bad text section line: {line!r}")
        key, value = line.split("=", 1)
        out[key] = value
    return out
