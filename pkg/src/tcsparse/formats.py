"""Vector-window partitioning and the blocked storage formats.

A window is a band of ``vector_height`` consecutive rows. Every column of
the band that holds at least one stored entry is a nonzero vector, and
each run of up to ``k`` vectors forms one block of the MMA operand.

:class:`MeBcrsMatrix` keeps only the nonzero vectors, so the last block of
a window may be narrower than ``k``. :class:`SrBcrsMatrix` is the padded
baseline that widens every window to a multiple of ``k`` with zero vectors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError
from .matrix_io import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix, from_coo
from .tcu import MmaShape, Precision

# column index carried by padded zero vectors in SR-BCRS
SENTINEL = np.iinfo(np.uint32).max

MAGIC = b"MEBC"
VERSION = 1
_HEADER = struct.Struct("<4sIQQIIB")
_PRECISION_CODES = {Precision.FP16: 0, Precision.TF32: 1}


def ceil_div(a, b):
    return -(-a // b)


@dataclass(frozen=True, eq=False)
class WindowPartition:
    rows: int
    cols: int
    vector_height: int
    k: int
    windows: tuple  # one ascending int array of vector columns per window

    @property
    def num_windows(self) -> int:
        return len(self.windows)

    def counts(self) -> np.ndarray:
        return np.array([w.size for w in self.windows], dtype=INDEX_DTYPE)

    @property
    def total_vectors(self) -> int:
        return int(self.counts().sum())

    def block_counts(self) -> np.ndarray:
        return ceil_div(self.counts(), self.k)


def _check_partition_args(vector_height: int, k: int):
    if vector_height not in (8, 16):
        raise ArgumentError(f"vector height must be 8 or 16, got {vector_height}")
    if k not in (4, 8):
        raise ArgumentError(f"k must be 4 or 8, got {k}")


def _window_keys(m: CsrMatrix, vector_height: int):
    """Sorted unique (window, col) pairs touched by stored entries."""
    win = m.row_indices() // vector_height
    key = np.unique(win * m.cols + m.col_idx)
    return np.divmod(key, m.cols) if m.cols else (key, key)


def partition_windows(m: CsrMatrix, vector_height: int, k: int) -> WindowPartition:
    """Split ``m`` into row windows and list each window's nonzero vectors."""
    _check_partition_args(vector_height, k)
    num_windows = ceil_div(m.rows, vector_height)
    win, col = _window_keys(m, vector_height)
    bounds = np.searchsorted(win, np.arange(num_windows + 1))
    windows = tuple(col[bounds[w] : bounds[w + 1]] for w in range(num_windows))
    for arr in windows:
        arr.setflags(write=False)
    return WindowPartition(m.rows, m.cols, vector_height, k, windows)


# -- block table shared by both formats -----------------------------------------------


@dataclass(frozen=True)
class BlockTable:
    """One row per stored block, in storage order."""

    window: np.ndarray
    slot: np.ndarray  # block index within its window
    start: np.ndarray  # first vector (column-index position) of the block
    width: np.ndarray


class _Blocked:
    """Shared array handling for the two blocked formats."""

    rows: int
    cols: int
    vector_height: int
    k: int
    precision: Precision
    column_indices: np.ndarray
    values: np.ndarray

    @property
    def num_windows(self) -> int:
        return ceil_div(self.rows, self.vector_height)

    @property
    def num_vectors(self) -> int:
        return int(self.column_indices.size)

    def window_ranges(self) -> np.ndarray:
        """(num_windows, 2) array of [start, end) vector positions."""
        raise NotImplementedError

    def vector_counts(self) -> np.ndarray:
        r = self.window_ranges()
        return r[:, 1] - r[:, 0]

    def block_table(self) -> BlockTable:
        ranges = self.window_ranges()
        counts = ranges[:, 1] - ranges[:, 0]
        nblocks = ceil_div(counts, self.k)
        window = np.repeat(np.arange(self.num_windows, dtype=INDEX_DTYPE), nblocks)
        first = np.repeat(np.cumsum(nblocks) - nblocks, nblocks)
        slot = np.arange(window.size, dtype=INDEX_DTYPE) - first
        start = ranges[window, 0] + slot * self.k
        width = np.minimum(self.k, ranges[window, 1] - start)
        return BlockTable(window, slot, start, width)

    def block(self, start: int, width: int) -> np.ndarray:
        """The ``vector_height x width`` value block beginning at vector ``start``."""
        v = self.vector_height
        return self.values[v * start : v * (start + width)].reshape(v, width)

    def _validate_values(self):
        if self.values.size != self.vector_height * self.num_vectors:
            raise FormatError(
                f"values has {self.values.size} entries, expected "
                f"{self.vector_height} x {self.num_vectors}"
            )

    def _decode(self, skip_cols=None) -> CsrMatrix:
        v = self.vector_height
        tab = self.block_table()
        rs, cs, xs = [], [], []
        for w, start, width in zip(tab.window.tolist(), tab.start.tolist(), tab.width.tolist()):
            blk = self.block(start, width)
            i, j = np.nonzero(blk)
            cols = self.column_indices[start + j]
            if skip_cols is not None:
                keep = cols != skip_cols
                i, j, cols = i[keep], j[keep], cols[keep]
            rs.append(w * v + i)
            cs.append(cols)
            xs.append(blk[i, j])
        if not rs:
            return from_coo(self.rows, self.cols, [], [], [])
        r = np.concatenate(rs)
        if r.size and r.max() >= self.rows:
            raise FormatError("nonzero value stored below the last matrix row")
        c = np.concatenate(cs).astype(INDEX_DTYPE)
        if c.size and c.max() >= self.cols:
            raise FormatError("column index out of range")
        return from_coo(self.rows, self.cols, r, c, np.concatenate(xs))

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (
            (self.rows, self.cols, self.vector_height, self.k, self.precision)
            == (other.rows, other.cols, other.vector_height, other.k, other.precision)
            and np.array_equal(self.row_pointers, other.row_pointers)
            and np.array_equal(self.column_indices, other.column_indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "format": type(self).__name__,
            "rows": self.rows,
            "cols": self.cols,
            "vector_height": self.vector_height,
            "k": self.k,
            "precision": self.precision.value,
            "row_pointers": self.row_pointers.tolist(),
            "column_indices": self.column_indices.tolist(),
            "values": self.values.tolist(),
        }

    def to_json(self, indent: int | None = None) -> str:
        """Debug dump of all arrays."""
        return json.dumps(self.to_dict(), indent=indent)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class MeBcrsMatrix(_Blocked):
    """Unpadded blocked format: row pointers, vector columns, block values.

    ``row_pointers`` has ``num_windows + 1`` entries. Values are laid out
    block by block, each block row-major with ``vector_height`` rows and as
    many columns as vectors it actually holds.
    """

    rows: int
    cols: int
    vector_height: int
    k: int
    precision: Precision
    row_pointers: np.ndarray
    column_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        rp = np.ascontiguousarray(self.row_pointers, dtype=INDEX_DTYPE)
        ci = np.ascontiguousarray(self.column_indices, dtype=INDEX_DTYPE)
        vals = np.ascontiguousarray(self.values, dtype=VALUE_DTYPE)
        _freeze(rp, ci, vals)
        object.__setattr__(self, "row_pointers", rp)
        object.__setattr__(self, "column_indices", ci)
        object.__setattr__(self, "values", vals)
        if rp.shape != (self.num_windows + 1,):
            raise FormatError(
                f"row_pointers has {rp.size} entries, expected {self.num_windows + 1}"
            )
        if rp[0] != 0 or np.any(np.diff(rp) < 0) or rp[-1] != ci.size:
            raise FormatError("row_pointers must run nondecreasing from 0 to the vector count")
        if ci.size and (ci.min() < 0 or ci.max() >= self.cols):
            raise FormatError("column index out of range")
        self._validate_values()

    def window_ranges(self) -> np.ndarray:
        return np.stack([self.row_pointers[:-1], self.row_pointers[1:]], axis=1)

    def values_at(self, rows, cols) -> np.ndarray:
        """Stored value at each (row, col); zero where no vector covers it."""
        rows = np.asarray(rows, dtype=INDEX_DTYPE)
        cols = np.asarray(cols, dtype=INDEX_DTYPE)
        v = self.vector_height
        w = rows // v
        lo, hi = self.row_pointers[w], self.row_pointers[w + 1]
        # columns are ascending within a window: search each window's slice
        key = w * self.cols + cols
        flat = np.repeat(np.arange(self.num_windows), self.vector_counts()) * self.cols + self.column_indices
        pos = np.searchsorted(flat, key)
        pos_c = np.minimum(pos, max(flat.size - 1, 0))
        found = (pos < hi) & (pos >= lo) & (flat[pos_c] == key if flat.size else False)
        block_start = lo + ((pos - lo) // self.k) * self.k
        width = np.minimum(self.k, hi - block_start)
        idx = v * block_start + (rows - w * v) * width + (pos - block_start)
        out = np.zeros(rows.shape)
        out[found] = self.values[idx[found]]
        return out

    def residues(self) -> np.ndarray:
        """Width of each window's last block (0 for empty windows)."""
        counts = self.vector_counts()
        return np.where(counts > 0, (counts - 1) % self.k + 1, 0)


@dataclass(frozen=True, eq=False)
class SrBcrsMatrix(_Blocked):
    """Padded blocked format; every block is exactly ``k`` vectors wide.

    ``row_pointers`` stores a (start, end) pair per window. Padding vectors
    are all-zero and carry the ``SENTINEL`` column index.
    """

    rows: int
    cols: int
    vector_height: int
    k: int
    precision: Precision
    row_pointers: np.ndarray
    column_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        rp = np.ascontiguousarray(self.row_pointers, dtype=INDEX_DTYPE)
        ci = np.ascontiguousarray(self.column_indices, dtype=INDEX_DTYPE)
        vals = np.ascontiguousarray(self.values, dtype=VALUE_DTYPE)
        _freeze(rp, ci, vals)
        object.__setattr__(self, "row_pointers", rp)
        object.__setattr__(self, "column_indices", ci)
        object.__setattr__(self, "values", vals)
        if rp.shape != (2 * self.num_windows,):
            raise FormatError(
                f"row_pointers has {rp.size} entries, expected {2 * self.num_windows}"
            )
        ranges = rp.reshape(-1, 2)
        if ranges.size:
            if ranges[0, 0] != 0 or ranges[-1, 1] != ci.size:
                raise FormatError("window ranges must cover the column indices")
            if np.any(ranges[1:, 0] != ranges[:-1, 1]) or np.any(ranges[:, 1] < ranges[:, 0]):
                raise FormatError("window ranges must be contiguous and ordered")
            if np.any((ranges[:, 1] - ranges[:, 0]) % self.k):
                raise FormatError("padded window width is not a multiple of k")
        elif ci.size:
            raise FormatError("column indices without windows")
        real = ci[ci != SENTINEL]
        if real.size and (real.min() < 0 or real.max() >= self.cols):
            raise FormatError("column index out of range")
        self._validate_values()

    def window_ranges(self) -> np.ndarray:
        return self.row_pointers.reshape(-1, 2)

    @property
    def num_padded(self) -> int:
        return int(np.count_nonzero(self.column_indices == SENTINEL))


# -- encode / decode ----------------------------------------------------------------------


def _resolve(shape_or_precision) -> tuple[MmaShape, Precision]:
    if isinstance(shape_or_precision, MmaShape):
        return shape_or_precision, Precision.from_shape(shape_or_precision)
    p = Precision.parse(shape_or_precision)
    return p.shape, p


def _window_blocks(m: CsrMatrix, v: int, k: int, pad: bool):
    """Per-window vector columns and dense (v x width) value panels."""
    part = partition_windows(m, v, k)
    rows = m.row_indices()
    win = rows // v
    bounds = np.searchsorted(win, np.arange(part.num_windows + 1))
    out = []
    for w, cols in enumerate(part.windows):
        width = ceil_div(cols.size, k) * k if pad else cols.size
        panel = np.zeros((v, width), dtype=VALUE_DTYPE)
        lo, hi = bounds[w], bounds[w + 1]
        pos = np.searchsorted(cols, m.col_idx[lo:hi])
        panel[rows[lo:hi] - w * v, pos] = m.values[lo:hi]
        out.append((cols, panel))
    return part, out


def _panel_to_blocks(panel: np.ndarray, k: int) -> np.ndarray:
    """Concatenate the row-major k-wide blocks of a window panel."""
    return np.concatenate(
        [panel[:, s : s + k].ravel() for s in range(0, panel.shape[1], k)]
        or [np.empty(0, dtype=VALUE_DTYPE)]
    )


def encode_mebcrs(m: CsrMatrix, shape, vector_height: int | None = None) -> MeBcrsMatrix:
    """Encode ``m`` with 8x1 vectors (the MMA n dimension) and no padding.

    ``shape`` may be an :class:`MmaShape` or a :class:`Precision`.
    ``vector_height`` overrides the vector height (16 is used for the
    structural comparisons against the 16x1 partition).
    """
    shape, p = _resolve(shape)
    v = shape.n if vector_height is None else vector_height
    _, windows = _window_blocks(m, v, shape.k, pad=False)
    counts = [cols.size for cols, _ in windows]
    rp = np.zeros(len(windows) + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=rp[1:])
    ci = np.concatenate([cols for cols, _ in windows] or [np.empty(0, INDEX_DTYPE)])
    vals = np.concatenate(
        [_panel_to_blocks(panel, shape.k) for _, panel in windows] or [np.empty(0)]
    )
    return MeBcrsMatrix(m.rows, m.cols, v, shape.k, p, rp, ci, vals)


def encode_srbcrs(m: CsrMatrix, shape, vector_height: int | None = None) -> SrBcrsMatrix:
    """Encode with every window padded by zero vectors to a multiple of k."""
    shape, p = _resolve(shape)
    v = shape.n if vector_height is None else vector_height
    _, windows = _window_blocks(m, v, shape.k, pad=True)
    rp = np.zeros(2 * len(windows), dtype=INDEX_DTYPE)
    cis, vals = [], []
    pos = 0
    for w, (cols, panel) in enumerate(windows):
        padded = np.full(panel.shape[1], SENTINEL, dtype=INDEX_DTYPE)
        padded[: cols.size] = cols
        rp[2 * w], rp[2 * w + 1] = pos, pos + padded.size
        pos += padded.size
        cis.append(padded)
        vals.append(_panel_to_blocks(panel, shape.k))
    ci = np.concatenate(cis or [np.empty(0, INDEX_DTYPE)])
    values = np.concatenate(vals or [np.empty(0)])
    return SrBcrsMatrix(m.rows, m.cols, v, shape.k, p, rp, ci, values)


def decode_mebcrs(m: MeBcrsMatrix) -> CsrMatrix:
    """Back to CSR. Zeros stored inside blocks are not entries and are dropped."""
    if not isinstance(m, MeBcrsMatrix):
        raise FormatError(f"expected MeBcrsMatrix, got {type(m).__name__}")
    return m._decode()


def decode_srbcrs(m: SrBcrsMatrix) -> CsrMatrix:
    return m._decode(skip_cols=SENTINEL)


def footprint_bytes(fmt, index_width: int = 4, value_width: int | None = None) -> int:
    """Storage bytes of a blocked matrix.

    ME-BCRS pays ``num_windows + 1`` pointers, SR-BCRS two per window; both
    pay one index and ``vector_height`` values per stored (or padded) vector.
    Value width defaults to 2 bytes for FP16 and 4 for TF32.
    """
    if value_width is None:
        value_width = fmt.precision.value_width
    if index_width <= 0 or value_width <= 0:
        raise ArgumentError("byte widths must be positive")
    if isinstance(fmt, MeBcrsMatrix):
        pointers = fmt.num_windows + 1
    elif isinstance(fmt, SrBcrsMatrix):
        pointers = 2 * fmt.num_windows
    else:
        raise ArgumentError(f"not a blocked format: {type(fmt).__name__}")
    nv = fmt.num_vectors
    return pointers * index_width + nv * index_width + nv * fmt.vector_height * value_width


# -- binary container ------------------------------------------------------------------------


def _pack_array(arr: np.ndarray, dtype: str) -> bytes:
    return struct.pack("<I", arr.size) + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def to_bytes(m: MeBcrsMatrix) -> bytes:
    """Little-endian container: fixed header then the three arrays.

    Pointers and column indices are u32, values f64; each array is prefixed
    by its u32 length.
    """
    header = _HEADER.pack(
        MAGIC, VERSION, m.rows, m.cols, m.vector_height, m.k, _PRECISION_CODES[m.precision]
    )
    return (
        header
        + _pack_array(m.row_pointers, "<u4")
        + _pack_array(m.column_indices, "<u4")
        + _pack_array(m.values, "<f8")
    )


def from_bytes(data: bytes) -> MeBcrsMatrix:
    if len(data) < _HEADER.size:
        raise FormatError("container truncated in header")
    magic, version, rows, cols, v, k, pcode = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    codes = {c: p for p, c in _PRECISION_CODES.items()}
    if pcode not in codes:
        raise FormatError(f"unknown precision code {pcode}")
    offset = _HEADER.size
    arrays = []
    for dtype, size in (("<u4", 4), ("<u4", 4), ("<f8", 8)):
        if offset + 4 > len(data):
            raise FormatError("container truncated")
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        end = offset + n * size
        if end > len(data):
            raise FormatError("container truncated")
        arrays.append(np.frombuffer(data, dtype=dtype, count=n, offset=offset))
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after container")
    return MeBcrsMatrix(rows, cols, v, k, codes[pcode], *arrays)


def write_container(m: MeBcrsMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(m))


def read_container(path) -> MeBcrsMatrix:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
