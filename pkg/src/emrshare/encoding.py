"""Length-prefixed binary framing used by every record encoding.

All integers are big-endian. Variable-length fields carry a 4-byte length
prefix. Readers are strict: truncation, overlong prefixes and trailing
bytes all raise :class:`DecodeError`.
"""

import hashlib
import struct

from .errors import DecodeError


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Writer:
    def __init__(self):
        self._parts = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">I", value))
        return self

    def i64(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">q", value))
        return self

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(bytes(data))
        return self

    def blob(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def bigint(self, value: int) -> "Writer":
        if value < 0:
            raise ValueError("bigint fields are non-negative")
        n = max(1, (value.bit_length() + 7) // 8)
        return self.blob(value.to_bytes(n, "big"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0

    def _advance(self, n: int) -> int:
        pos = self._pos
        if n < 0 or pos + n > len(self._data):
            raise DecodeError("truncated record")
        self._pos = pos + n
        return pos

    def _take(self, n: int) -> bytes:
        pos = self._advance(n)
        return self._data[pos:pos + n]

    def u8(self) -> int:
        return self._data[self._advance(1)]

    def u32(self) -> int:
        return struct.unpack_from(">I", self._data, self._advance(4))[0]

    def i64(self) -> int:
        return struct.unpack_from(">q", self._data, self._advance(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc

    def bigint(self) -> int:
        data = self.blob()
        if not data:
            raise DecodeError("empty integer")
        # canonical form only: no superfluous leading zero byte
        if len(data) > 1 and data[0] == 0:
            raise DecodeError("non-canonical integer")
        return int.from_bytes(data, "big")

    def done(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError("trailing bytes")
