"""MSB-first bit streams with vectorized fixed-width blocks and Elias-gamma codes."""
from __future__ import annotations

import numpy as np


class BitWriter:
    """Append-only MSB-first bit buffer. Fixed-width array writes are vectorized;
    scalar writes are for headers, flags and the (few) gamma codes."""

    def __init__(self):
        self._chunks: list[np.ndarray] = []  # uint8 arrays of 0/1
        self.bit_length = 0

    def write_uint(self, value: int, width: int):
        if width == 0:
            return
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        bits = np.empty(width, dtype=np.uint8)
        for i in range(width):
            bits[i] = (value >> (width - 1 - i)) & 1
        self._chunks.append(bits)
        self.bit_length += width

    def write_bit(self, bit: int):
        self._chunks.append(np.array([bit & 1], dtype=np.uint8))
        self.bit_length += 1

    def write_uint_array(self, values: np.ndarray, width: int):
        """Write len(values) unsigned integers of the same width (vectorized)."""
        if width == 0 or len(values) == 0:
            return
        values = np.asarray(values, dtype=np.int64)
        if values.min() < 0 or (width < 63 and values.max() >> width):
            raise ValueError(f"values do not fit in {width} bits")
        shifted = (values.astype(np.uint64) << np.uint64(64 - width)).astype(">u8")
        bits = np.unpackbits(shifted.view(np.uint8).reshape(-1, 8), axis=1, count=width)
        self._chunks.append(bits.ravel())
        self.bit_length += width * len(values)

    def write_gamma(self, value: int):
        """Elias-gamma code of value >= 1: floor(log2 v) zeros then v in binary."""
        if value < 1:
            raise ValueError("gamma codes require value >= 1")
        nbits = value.bit_length()  # floor(log2 v) + 1
        self.write_uint(0, nbits - 1)
        self.write_uint(value, nbits)

    def getvalue(self) -> bytes:
        if not self._chunks:
            return b""
        allbits = np.concatenate(self._chunks)
        return np.packbits(allbits).tobytes()


class BitReader:
    """MSB-first reader over a byte payload with a known bit length."""

    def __init__(self, payload: bytes, bit_length: int):
        arr = np.frombuffer(payload, dtype=np.uint8)
        self._bits = np.unpackbits(arr)[:bit_length]
        self.bit_length = bit_length
        self.pos = 0

    def _take(self, count: int) -> np.ndarray:
        if self.pos + count > self.bit_length:
            raise EOFError("truncated bit stream")
        out = self._bits[self.pos : self.pos + count]
        self.pos += count
        return out

    def read_uint(self, width: int) -> int:
        if width == 0:
            return 0
        bits = self._take(width)
        value = 0
        for b in bits:
            value = (value << 1) | int(b)
        return value

    def read_bit(self) -> int:
        return int(self._take(1)[0])

    def read_uint_array(self, count: int, width: int) -> np.ndarray:
        if count == 0:
            return np.zeros(0, dtype=np.int64)
        if width == 0:
            return np.zeros(count, dtype=np.int64)
        if width > 63:
            raise EOFError(f"unreasonable field width {width} (corrupt stream)")
        bits = self._take(count * width).reshape(count, width)
        by = np.packbits(bits, axis=1)  # MSB-aligned, zero-padded on the right
        val = np.zeros(count, dtype=np.uint64)
        for k in range(by.shape[1]):
            val = (val << np.uint64(8)) | by[:, k]
        val >>= np.uint64(8 * by.shape[1] - width)
        return val.astype(np.int64)

    def read_gamma(self) -> int:
        zeros = 0
        while True:
            if self.pos >= self.bit_length:
                raise EOFError("truncated gamma code")
            if self._bits[self.pos]:
                break
            zeros += 1
            self.pos += 1
        return self.read_uint(zeros + 1)


def width_for_bound(bound: int) -> int:
    """Bits needed for offset-binary storage of integers in [-bound, bound]."""
    if bound < 0:
        raise ValueError("bound must be >= 0")
    return max(1, int(2 * bound).bit_length())


def width_for_count(count: int) -> int:
    """ceil(log2 count) bits to index `count` values (0 when count <= 1)."""
    if count <= 1:
        return 0
    return int(count - 1).bit_length()
