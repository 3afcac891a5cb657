"""Byte-exact latent bitstream format and the codec built on the range coder.

Layout (little-endian):

    offset  size  field
    0       4     magic b"LYB1"
    4       1     format version (1)
    5       4     u32 symbol count (latent length, possibly several latents)
    9       1     table-id scheme: 0 = identity (symbol j uses table j mod D)
    10      2     u16 D = number of per-dimension tables
    --      2*n   (scheme 1 only) explicit u16 table id per symbol
    +0      8     f64 tail-mass bound of the codec's tables
    +8      4     u32 escape count E
    +12     8*E   i64 escaped raw values, in encounter order
    +..     4     u32 payload byte length
    +..     ...   range-coded payload

Out-of-support values are coded through each table's escape slot; their raw
values travel in the header side list and are re-inserted on decode, so any
integer latent round-trips exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ParseError
from .rangecoder import FrequencyTable, RangeDecoder, RangeEncoder, quantize_pmf

MAGIC = b"LYB1"
VERSION = 1


@dataclass
class Bitstream:
    """A coded latent plus the header fields needed to decode it."""

    payload: bytes
    n_symbols: int
    n_tables: int
    table_ids: np.ndarray  # one id per symbol
    identity_ids: bool
    tail_bound: float
    escapes: list = field(default_factory=list)

    def to_bytes(self):
        out = bytearray()
        out += MAGIC
        out.append(VERSION)
        out += struct.pack("<I", self.n_symbols)
        if self.identity_ids:
            out.append(0)
            out += struct.pack("<H", self.n_tables)
        else:
            out.append(1)
            out += struct.pack("<H", self.n_tables)
            out += struct.pack(f"<{self.n_symbols}H", *self.table_ids.tolist())
        out += struct.pack("<d", self.tail_bound)
        out += struct.pack("<I", len(self.escapes))
        for v in self.escapes:
            out += struct.pack("<q", int(v))
        out += struct.pack("<I", len(self.payload))
        out += self.payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw):
        if raw[:4] != MAGIC:
            raise ParseError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
        if raw[4] != VERSION:
            raise ParseError(f"unsupported bitstream version {raw[4]}")
        pos = 5
        (n_symbols,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        scheme = raw[pos]
        pos += 1
        (n_tables,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if scheme == 0:
            ids = np.arange(n_symbols, dtype=np.int64) % max(n_tables, 1)
            identity = True
        elif scheme == 1:
            ids = np.array(struct.unpack_from(f"<{n_symbols}H", raw, pos),
                           dtype=np.int64)
            pos += 2 * n_symbols
            identity = False
        else:
            raise ParseError(f"unknown table-id scheme {scheme}")
        (tail_bound,) = struct.unpack_from("<d", raw, pos)
        pos += 8
        (n_escapes,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        escapes = list(struct.unpack_from(f"<{n_escapes}q", raw, pos))
        pos += 8 * n_escapes
        (payload_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        payload = bytes(raw[pos: pos + payload_len])
        if len(payload) != payload_len:
            raise ParseError("truncated bitstream payload")
        return cls(payload=payload, n_symbols=n_symbols, n_tables=n_tables,
                   table_ids=ids, identity_ids=identity, tail_bound=tail_bound,
                   escapes=escapes)


class LatentCodec:
    """Entropy codec for integer latents under per-dimension PMF tables.

    Built from a FactorizedDensity and an integer support per dimension;
    each table's last slot is the escape symbol carrying the tail mass.
    """

    def __init__(self, density, support_lo, support_hi):
        lo = np.asarray(support_lo, dtype=np.int64)
        hi = np.asarray(support_hi, dtype=np.int64)
        if lo.shape != (density.dims,) or hi.shape != (density.dims,):
            raise ContractError("support bounds must be per-dimension vectors")
        if np.any(hi < lo):
            raise ContractError("empty support for some dimension")
        self.dims = density.dims
        self.lo = lo
        self.hi = hi
        glo, ghi = int(lo.min()), int(hi.max())
        edges = np.arange(glo, ghi + 2, dtype=np.float64) - 0.5
        grid = np.broadcast_to(edges, (density.dims, edges.size)).copy()
        cdf = density.cumulative_grid(grid).data
        self.tables = []
        tail_bounds = []
        for i in range(density.dims):
            a, b = int(lo[i]) - glo, int(hi[i]) - glo
            pmf = np.maximum(np.diff(cdf[i, a: b + 2]), 0.0)
            tail = max(float(cdf[i, a] + (1.0 - cdf[i, b + 1])), 0.0)
            self.tables.append(quantize_pmf(pmf, tail))
            tail_bounds.append(tail)
        self.tail_bound = float(max(tail_bounds))

    def escape_index(self, dim):
        return len(self.tables[dim]) - 1

    def estimated_bits(self, symbols):
        """Code length estimate under the quantized tables, in bits."""
        symbols = np.asarray(symbols, dtype=np.int64)
        flat = symbols.reshape(-1, order="F") if symbols.ndim == 2 else symbols
        total = 0.0
        for j, v in enumerate(flat):
            dim = j % self.dims
            table = self.tables[dim]
            if self.lo[dim] <= v <= self.hi[dim]:
                idx = int(v - self.lo[dim])
            else:
                idx = self.escape_index(dim)
            total += -np.log2(table.freqs[idx] / float(table.cum[-1]))
        return float(total)

    def compress(self, symbols):
        """Encode an integer latent (dims,) or batch (dims, n) to a Bitstream."""
        symbols = np.asarray(symbols)
        if not np.all(symbols == np.rint(symbols)):
            raise ContractError("compress expects integer-valued latents")
        symbols = symbols.astype(np.int64)
        if symbols.ndim == 1:
            flat = symbols
        elif symbols.ndim == 2:
            if symbols.shape[0] != self.dims:
                raise ContractError(
                    f"latent has {symbols.shape[0]} dims, codec expects {self.dims}")
            flat = symbols.reshape(-1, order="F")
        else:
            raise ContractError("compress expects a vector or (dims, n) batch")
        if flat.size and symbols.ndim == 1 and flat.size % self.dims != 0:
            raise ContractError(
                f"latent length {flat.size} is not a multiple of {self.dims}")

        enc = RangeEncoder()
        escapes = []
        for j, v in enumerate(flat):
            dim = j % self.dims
            if self.lo[dim] <= v <= self.hi[dim]:
                enc.encode_symbol(self.tables[dim], int(v - self.lo[dim]))
            else:
                enc.encode_symbol(self.tables[dim], self.escape_index(dim))
                escapes.append(int(v))
        payload = enc.finish()
        ids = np.arange(flat.size, dtype=np.int64) % self.dims
        return Bitstream(payload=payload, n_symbols=int(flat.size),
                         n_tables=self.dims, table_ids=ids, identity_ids=True,
                         tail_bound=self.tail_bound, escapes=escapes)

    def decompress(self, bitstream):
        """Exact inverse of compress; returns a flat int64 vector."""
        dec = RangeDecoder(bitstream.payload)
        out = np.empty(bitstream.n_symbols, dtype=np.int64)
        pending = list(bitstream.escapes)
        for j in range(bitstream.n_symbols):
            dim = int(bitstream.table_ids[j])
            idx = dec.decode_symbol(self.tables[dim])
            if idx == self.escape_index(dim):
                if not pending:
                    raise ParseError("escape symbol without a raw value")
                out[j] = pending.pop(0)
            else:
                out[j] = self.lo[dim] + idx
        return out
