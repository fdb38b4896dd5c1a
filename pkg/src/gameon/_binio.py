"""Shared low-level reader for the binary container formats."""
from __future__ import annotations

import struct

from .errors import FormatError


class Cursor:
    """Sequential reader over a byte buffer that reports the offset of any
    truncation."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.what}: truncated at offset {self.pos} (needed {n} more bytes)"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.what}: {len(self.data) - self.pos} trailing bytes at offset {self.pos}"
            )
