"""Little-endian binary helpers with offset-aware error reporting."""

import struct

import numpy as np

from .errors import CorruptStreamError


class Writer:
    def __init__(self):
        self.parts = []

    def pack(self, fmt, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def array(self, arr, dtype):
        self.parts.append(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())

    def blob(self, data: bytes):
        self.pack("Q", len(data))
        self.parts.append(data)

    def getvalue(self):
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes, what="stream"):
        self.data = memoryview(data)
        self.offset = 0
        self.what = what

    def _need(self, n):
        if self.offset + n > len(self.data):
            raise CorruptStreamError(
                f"truncated {self.what}: need {n} bytes, {len(self.data) - self.offset} left", self.offset
            )

    def unpack(self, fmt):
        fmt = "<" + fmt
        n = struct.calcsize(fmt)
        self._need(n)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += n
        return values if len(values) > 1 else values[0]

    def array(self, dtype, count, shape=None):
        dtype = np.dtype(dtype).newbyteorder("<")
        n = dtype.itemsize * int(count)
        self._need(n)
        arr = np.frombuffer(self.data, dtype=dtype, count=int(count), offset=self.offset).astype(dtype.newbyteorder("="))
        self.offset += n
        return arr.reshape(shape) if shape is not None else arr

    def blob(self):
        n = self.unpack("Q")
        self._need(n)
        out = bytes(self.data[self.offset:self.offset + n])
        self.offset += n
        return out

    def expect_end(self):
        if self.offset != len(self.data):
            raise CorruptStreamError(f"{len(self.data) - self.offset} trailing bytes in {self.what}", self.offset)
