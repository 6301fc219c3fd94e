"""Canonical Huffman coding of non-negative integer streams.

Codes are assigned in (length, symbol) order, so a table is fully described
by its symbol list and code lengths. The payload is MSB-first. Bit offsets
of every ``block_size``-th symbol are stored alongside the payload so the
decoder can walk all blocks in lockstep with numpy instead of one symbol
at a time.
"""

import heapq
from dataclasses import dataclass

import numpy as np

from ..binio import Reader, Writer
from ..errors import CorruptStreamError, InvalidInputError

MAX_CODE_LENGTH = 56   # a window of 8 bytes always holds a whole code
BLOCK_SIZE = 1024


def code_lengths(counts):
    """Huffman code length per symbol from a ``{symbol: count}`` mapping.

    Ties are broken by symbol so the result is deterministic. A single
    symbol gets a 1-bit code.
    """
    items = sorted((int(s), int(c)) for s, c in counts.items() if c > 0)
    if not items:
        raise InvalidInputError("cannot build a Huffman code for an empty stream")
    if len(items) == 1:
        return {items[0][0]: 1}
    lengths = {s: 0 for s, _ in items}
    # heap entries: (count, tiebreak, symbols under this node)
    heap = [(c, i, [s]) for i, (s, c) in enumerate(items)]
    heapq.heapify(heap)
    tiebreak = len(heap)
    while len(heap) > 1:
        c1, _, s1 = heapq.heappop(heap)
        c2, _, s2 = heapq.heappop(heap)
        for s in s1 + s2:
            lengths[s] += 1
        heapq.heappush(heap, (c1 + c2, tiebreak, s1 + s2))
        tiebreak += 1
    return lengths


@dataclass(frozen=True)
class HuffmanTable:
    """Canonical code: ``symbols`` sorted by (length, symbol) with their lengths."""

    symbols: np.ndarray   # int64, canonical order
    lengths: np.ndarray   # int64, non-decreasing

    def __post_init__(self):
        if len(self.symbols) == 0 or len(self.symbols) != len(self.lengths):
            raise InvalidInputError("Huffman table needs one length per symbol")
        if self.lengths.min() < 1 or self.lengths.max() > MAX_CODE_LENGTH:
            raise InvalidInputError(f"code lengths must lie in [1, {MAX_CODE_LENGTH}]")
        if np.any(np.diff(self.lengths) < 0):
            raise InvalidInputError("table is not in canonical order")
        if self.kraft_sum() > 1.0:
            raise InvalidInputError("code lengths violate the Kraft inequality")

    @classmethod
    def from_lengths(cls, lengths: dict):
        order = sorted(lengths, key=lambda s: (lengths[s], s))
        return cls(np.array(order, dtype=np.int64), np.array([lengths[s] for s in order], dtype=np.int64))

    @classmethod
    def from_counts(cls, counts: dict):
        return cls.from_lengths(code_lengths(counts))

    def kraft_sum(self):
        return float(np.sum(2.0 ** -self.lengths.astype(np.float64)))

    def codes(self):
        """Canonical code values aligned with ``symbols``."""
        codes = np.zeros(len(self.symbols), dtype=np.uint64)
        code = 0
        for i in range(1, len(self.symbols)):
            code = (code + 1) << int(self.lengths[i] - self.lengths[i - 1])
            codes[i] = code
        return codes

    def as_dict(self):
        """``{symbol: bit string}``, handy for inspection."""
        return {int(s): format(int(c), f"0{int(n)}b")
                for s, c, n in zip(self.symbols, self.codes(), self.lengths)}

    def length_of(self):
        return {int(s): int(n) for s, n in zip(self.symbols, self.lengths)}


@dataclass(frozen=True)
class HuffmanStream:
    table: HuffmanTable
    n_symbols: int
    n_bits: int
    block_offsets: np.ndarray   # bit offset of symbol k * block_size
    payload: bytes
    block_size: int = BLOCK_SIZE


def _as_symbols(symbols):
    if isinstance(symbols, (bytes, bytearray)):
        return np.frombuffer(symbols, dtype=np.uint8).astype(np.int64)
    if isinstance(symbols, str):
        return np.frombuffer(symbols.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    arr = np.asarray(symbols)
    if arr.ndim != 1 or (arr.size and not np.issubdtype(arr.dtype, np.integer)):
        raise InvalidInputError("Huffman input must be a 1D stream of integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise InvalidInputError("Huffman symbols must be non-negative")
    return arr


def huffman_encode(symbols, block_size=BLOCK_SIZE) -> HuffmanStream:
    sym = _as_symbols(symbols)
    if sym.size == 0:
        raise InvalidInputError("cannot Huffman-encode an empty stream")
    values, counts = np.unique(sym, return_counts=True)
    table = HuffmanTable.from_counts(dict(zip(values.tolist(), counts.tolist())))

    # per-symbol code and length via the sorted alphabet
    order = np.argsort(table.symbols)
    pos = np.searchsorted(table.symbols[order], sym)
    slot = order[pos]
    codes = table.codes()[slot]
    lens = table.lengths[slot]
    ends = np.cumsum(lens)
    n_bits = int(ends[-1])
    starts = ends - lens
    block_offsets = starts[::block_size].astype(np.uint64)

    bits = np.zeros(n_bits, dtype=np.uint8)
    chunk = 1 << 18
    for lo in range(0, sym.size, chunk):
        c, n, s = codes[lo:lo + chunk], lens[lo:lo + chunk], starts[lo:lo + chunk]
        rep = np.repeat(np.arange(len(c)), n)
        j = np.arange(rep.size) - np.repeat(s - s[0], n)     # bit index within each code
        shift = (n[rep] - 1 - j).astype(np.uint64)
        bits[s[0]:s[0] + rep.size] = ((c[rep] >> shift) & np.uint64(1)).astype(np.uint8)
    return HuffmanStream(table, int(sym.size), n_bits, block_offsets, np.packbits(bits).tobytes(), block_size)


def huffman_decode(stream: HuffmanStream) -> np.ndarray:
    table = stream.table
    n = stream.n_symbols
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    n_blocks = -(-n // stream.block_size)
    if len(stream.block_offsets) != n_blocks:
        raise CorruptStreamError("block offset count does not match the symbol count", 0)
    if len(stream.payload) * 8 < stream.n_bits:
        raise CorruptStreamError("payload shorter than its declared bit count", 0)
    max_len = int(table.lengths.max())
    # left-justified first code of every canonical entry; entries cover contiguous ranges
    left = table.codes() << (np.uint64(max_len) - table.lengths.astype(np.uint64))

    data = np.frombuffer(stream.payload, dtype=np.uint8)
    data = np.concatenate([data, np.zeros(8, dtype=np.uint8)])
    pos = stream.block_offsets.astype(np.int64).copy()
    if np.any(pos > stream.n_bits) or np.any(np.diff(pos) < 0):
        raise CorruptStreamError("block offsets are out of order or past the payload", 0)
    out = np.empty(n_blocks * stream.block_size, dtype=np.int64)
    block_len = np.full(n_blocks, stream.block_size)
    block_len[-1] = n - (n_blocks - 1) * stream.block_size
    weights = (np.uint64(1) << (np.uint64(8) * np.arange(7, -1, -1, dtype=np.uint64)))
    active = np.arange(n_blocks)
    for k in range(stream.block_size):
        active = active[block_len[active] > k]
        if active.size == 0:
            break
        p = pos[active]
        byte = p >> 3
        window = (data[byte[:, None] + np.arange(8)].astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
        window = (window << (p & 7).astype(np.uint64)) >> np.uint64(64 - max_len)
        entry = np.searchsorted(left, window, side="right") - 1
        out[active * stream.block_size + k] = table.symbols[entry]
        pos[active] = p + table.lengths[entry]
        if pos[active].max() > stream.n_bits:
            raise CorruptStreamError("Huffman payload ends mid-symbol", len(stream.payload))
    if np.any(pos[:-1] != stream.block_offsets[1:].astype(np.int64)) or pos[-1] != stream.n_bits:
        raise CorruptStreamError("Huffman blocks do not end where the next one starts", 0)
    return out[:n]


def write_stream(w: Writer, s: HuffmanStream):
    w.pack("QQII", s.n_symbols, s.n_bits, s.block_size, len(s.table.symbols))
    w.array(s.table.symbols, np.uint32)
    w.array(s.table.lengths, np.uint8)
    w.array(s.block_offsets, np.uint64)
    w.blob(s.payload)


def read_stream(r: Reader) -> HuffmanStream:
    at = r.offset
    n_symbols, n_bits, block_size, n_alpha = r.unpack("QQII")
    if block_size == 0 or n_alpha == 0:
        raise CorruptStreamError("Huffman header has a zero block size or alphabet", at)
    symbols = r.array(np.uint32, n_alpha).astype(np.int64)
    lengths = r.array(np.uint8, n_alpha).astype(np.int64)
    n_blocks = -(-n_symbols // block_size)
    offsets = r.array(np.uint64, n_blocks)
    payload_at = r.offset
    payload = r.blob()
    try:
        table = HuffmanTable(symbols, lengths)
    except InvalidInputError as exc:
        raise CorruptStreamError(f"bad Huffman table: {exc}", at) from None
    if len(payload) != -(-n_bits // 8):
        raise CorruptStreamError("Huffman payload length disagrees with its bit count", payload_at)
    return HuffmanStream(table, n_symbols, n_bits, offsets, payload, block_size)
