"""Little-endian binary file framing shared by the persistence formats.

Every file is laid out as::

    magic (4 bytes) | version (u32) | payload | crc32 of payload (u32)

Payload readers/writers use the ``Packer``/``Unpacker`` helpers below; all
multi-byte values are little-endian, arrays are raw C-order bytes prefixed
with their shape.
"""

import struct
import zlib

import numpy as np

from .errors import FormatError

_DTYPE_TAGS = {
    np.dtype("<f4"): b"f4",
    np.dtype("<f8"): b"f8",
    np.dtype("<i8"): b"i8",
    np.dtype("<u1"): b"u1",
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class Packer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def i64(self, v: int) -> None:
        self._parts.append(struct.pack("<q", v))

    def f64(self, v: float) -> None:
        self._parts.append(struct.pack("<d", v))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self._parts.append(raw)

    def array(self, a: np.ndarray) -> None:
        a = np.ascontiguousarray(a)
        dt = a.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise ValueError(f"unsupported array dtype {a.dtype}")
        self._parts.append(_DTYPE_TAGS[dt])
        self.u8(a.ndim)
        for s in a.shape:
            self.i64(s)
        self._parts.append(a.astype(dt, copy=False).tobytes())

    def payload(self) -> bytes:
        return b"".join(self._parts)


class Unpacker:
    def __init__(self, payload: bytes, label: str):
        self._buf = payload
        self._pos = 0
        self._label = label

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._buf):
            raise FormatError(f"{self._label}: truncated payload")
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        tag = self._take(2)
        if tag not in _TAG_DTYPES:
            raise FormatError(f"{self._label}: unknown array dtype tag {tag!r}")
        dt = _TAG_DTYPES[tag]
        ndim = self.u8()
        shape = tuple(self.i64() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = self._take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    def done(self) -> None:
        if self._pos != len(self._buf):
            raise FormatError(f"{self._label}: {len(self._buf) - self._pos} trailing bytes")


def write_framed(path, magic: bytes, version: int, payload: bytes) -> None:
    assert len(magic) == 4
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", version))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_framed(path, magic: bytes, version: int) -> bytes:
    """Read and verify a framed file, returning its payload."""
    with open(path, "rb") as fh:
        data = fh.read()
    label = str(path)
    if len(data) < 12:
        raise FormatError(f"{label}: file too short ({len(data)} bytes)")
    if data[:4] != magic:
        raise FormatError(
            f"{label}: bad magic {data[:4]!r}, expected {magic!r}"
        )
    (ver,) = struct.unpack("<I", data[4:8])
    if ver != version:
        raise FormatError(f"{label}: unsupported version {ver}, expected {version}")
    payload, (crc,) = data[8:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{label}: checksum mismatch, file is corrupt")
    return payload
