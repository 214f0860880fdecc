"""SpMM and SDDMM executors over emulated MMA tiles.

Warps are modelled as deterministic loops. Row windows are independent, so
each executor advances all windows in lock-step over their k-th block and
batches those tiles into a single emulated MMA call; the accumulation
order inside every window is unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, ShapeError
from .formats import (
    SENTINEL,
    MeBcrsMatrix,
    SrBcrsMatrix,
    _window_blocks,
    ceil_div,
)
from .matrix_io import CsrMatrix
from .tcu import (
    WARP_SIZE,
    Mapping,
    Operand,
    Precision,
    coalesced_column_order,
    fragment_layout,
    mma,
    swap_transpose_mma,
)

SDDMM_BLOCK_VECTORS = 16


@dataclass(frozen=True)
class KernelConfig:
    precision: Precision = Precision.FP16
    vector_height: int = 8
    mapping: Mapping = Mapping.COALESCED
    n_cols: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        object.__setattr__(self, "mapping", Mapping.parse(self.mapping))
        if self.vector_height not in (8, 16):
            raise ArgumentError(f"vector height must be 8 or 16, got {self.vector_height}")


@dataclass
class KernelStats:
    """Counters filled in by the executors."""

    mma_count: int = 0
    blocks: int = 0
    windows: int = 0
    extra: dict = field(default_factory=dict)


def _as_dense(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


# -- residue handling --------------------------------------------------------------------


class Residue(enum.Enum):
    IN_WINDOW = "in"
    OUT_OF_WINDOW = "out"


def handle_residue(count: int, k: int, column_offset: int) -> Residue:
    """Whether ``column_offset`` of a window's last block is a real vector.

    With ``count`` vectors in the window the last block holds
    ``residue = (count - 1) % k + 1`` of them; offsets at or past the
    residue would read the next window's vectors and must load zeros.
    """
    if count < 0 or k <= 0:
        raise ArgumentError("count must be nonnegative and k positive")
    if not 0 <= column_offset < k:
        raise ArgumentError(f"column offset {column_offset} outside [0, {k})")
    if count == 0:
        return Residue.OUT_OF_WINDOW
    residue = (count - 1) % k + 1
    return Residue.IN_WINDOW if column_offset < residue else Residue.OUT_OF_WINDOW


# -- SpMM --------------------------------------------------------------------------------


def _gather_blocks(sparse, zero_index: int):
    """Column ids (nb, k) and value blocks (nb, v, k) as the warp would load them.

    Out-of-window offsets in a window's last block, and SR-BCRS padding
    vectors, are redirected to ``zero_index`` (a zero row of the dense
    operand) and given zero values.
    """
    k, v = sparse.k, sparse.vector_height
    tab = sparse.block_table()
    nb = tab.window.size
    counts = sparse.vector_counts()
    offsets = np.arange(k)
    in_window = np.ones((nb, k), dtype=bool)
    last = tab.slot == ceil_div(counts[tab.window], k) - 1
    for b in np.flatnonzero(last):
        c = int(counts[tab.window[b]])
        in_window[b] = [handle_residue(c, k, o) is Residue.IN_WINDOW for o in range(k)]

    pos = np.where(in_window, tab.start[:, None] + offsets, 0)
    ci = sparse.column_indices
    cols = np.where(in_window, ci[pos] if ci.size else 0, zero_index)
    cols = np.where(cols == SENTINEL, zero_index, cols)

    rows = np.arange(v)
    vidx = (
        v * tab.start[:, None, None]
        + rows[None, :, None] * tab.width[:, None, None]
        + offsets[None, None, :]
    )
    vidx = np.where(in_window[:, None, :], vidx, 0)
    vals = sparse.values[vidx] if sparse.values.size else np.zeros(vidx.shape)
    vals = np.where(in_window[:, None, :], vals, 0.0)
    return tab, cols, vals


def spmm(sparse, dense, cfg: KernelConfig, stats: KernelStats | None = None) -> np.ndarray:
    """Sparse (ME-BCRS or SR-BCRS, 8x1 vectors) times dense, swapped MMA path.

    For every block A (8 x width) the k dense rows named by its column
    indices are gathered into a k x 16 block per 16-column output tile and
    multiplied with :func:`swap_transpose_mma`. With the coalesced mapping
    the dense block's columns arrive shuffled; the accumulator carries the
    same shuffle and is un-permuted when written back through the
    accumulator fragment layout. Returns float32, trimmed to M x N.
    """
    if not isinstance(sparse, (MeBcrsMatrix, SrBcrsMatrix)):
        raise ArgumentError(f"spmm needs a blocked matrix, got {type(sparse).__name__}")
    p = cfg.precision
    shape = p.shape
    if cfg.vector_height != shape.n or sparse.vector_height != shape.n:
        raise ArgumentError("the swapped path partitions with 8x1 vectors")
    if sparse.k != shape.k:
        raise ArgumentError(f"matrix blocks are {sparse.k} wide, {p.name} needs {shape.k}")
    dense = _as_dense(dense, "dense")
    K, N = dense.shape
    if K != sparse.cols:
        raise ShapeError(f"sparse has {sparse.cols} columns, dense has {K} rows")
    if cfg.n_cols is not None and cfg.n_cols != N:
        raise ShapeError(f"config expects N={cfg.n_cols}, dense has {N} columns")

    tiles = ceil_div(N, shape.m)
    n_pad = tiles * shape.m
    b_pad = np.zeros((K + 1, n_pad), dtype=np.float32)
    b_pad[:K, :N] = dense
    order = coalesced_column_order(p) if cfg.mapping is Mapping.COALESCED else np.arange(shape.m)

    W = sparse.num_windows
    acc = np.zeros((W, tiles, shape.n, shape.m), dtype=np.float32)
    tab, cols, vals = _gather_blocks(sparse, zero_index=K)
    for s in range(int(tab.slot.max()) + 1 if tab.slot.size else 0):
        sel = np.flatnonzero(tab.slot == s)
        ws = tab.window[sel]
        block_a = vals[sel][:, None]  # (n, 1, 8, k)
        block_b = b_pad[cols[sel]].reshape(sel.size, shape.k, tiles, shape.m)
        block_b = block_b[..., order].transpose(0, 2, 1, 3)  # (n, tiles, k, 16)
        acc[ws] = swap_transpose_mma(block_a, block_b, acc[ws], shape, p)
        if stats is not None:
            stats.mma_count += sel.size * tiles

    # write-back: lane registers hold C^T (16 x 8) under the accumulator layout
    layout = fragment_layout(shape, Operand.ACCUM_C, p)
    frags = layout.gather(np.swapaxes(acc, -1, -2))  # (W, tiles, 32, 4)
    out = np.zeros_like(acc)
    out[..., layout.coords[..., 1], order[layout.coords[..., 0]]] = frags
    if stats is not None:
        stats.blocks += tab.window.size
        stats.windows += W
    out = out.transpose(0, 2, 1, 3).reshape(W * shape.n, n_pad)
    return out[: sparse.rows, :N]


def spmm_baseline16(
    sparse: CsrMatrix, dense, cfg: KernelConfig, stats: KernelStats | None = None
) -> np.ndarray:
    """16x1-vector SpMM with the sparse block as the left MMA operand.

    Each window of 16 rows is cut into 16 x k blocks (zero-filled to k
    vectors); the matching k dense rows form a k x 8 right operand per
    8-column output tile.
    """
    if not isinstance(sparse, CsrMatrix):
        raise ArgumentError("the 16x1 baseline consumes a CsrMatrix")
    p = cfg.precision
    shape = p.shape
    v = shape.m
    if cfg.vector_height != v:
        raise ArgumentError("the baseline path partitions with 16x1 vectors")
    dense = _as_dense(dense, "dense")
    K, N = dense.shape
    if K != sparse.cols:
        raise ShapeError(f"sparse has {sparse.cols} columns, dense has {K} rows")
    if cfg.n_cols is not None and cfg.n_cols != N:
        raise ShapeError(f"config expects N={cfg.n_cols}, dense has {N} columns")

    k = shape.k
    tiles = ceil_div(N, shape.n)
    n_pad = tiles * shape.n
    b_pad = np.zeros((K + 1, n_pad), dtype=np.float32)
    b_pad[:K, :N] = dense

    part, windows = _window_blocks(sparse, v, k, pad=True)
    W = part.num_windows
    win_ids, slots, cols, vals = [], [], [], []
    for w, (wcols, panel) in enumerate(windows):
        padded = np.full(panel.shape[1], K, dtype=np.int64)
        padded[: wcols.size] = wcols
        for s in range(panel.shape[1] // k):
            win_ids.append(w)
            slots.append(s)
            cols.append(padded[s * k : (s + 1) * k])
            vals.append(panel[:, s * k : (s + 1) * k])
    win_ids = np.array(win_ids, dtype=np.int64)
    slots = np.array(slots, dtype=np.int64)

    acc = np.zeros((W, tiles, shape.m, shape.n), dtype=np.float32)
    if slots.size:
        cols = np.stack(cols)
        vals = np.stack(vals)
        for s in range(int(slots.max()) + 1):
            sel = np.flatnonzero(slots == s)
            ws = win_ids[sel]
            block_b = b_pad[cols[sel]].reshape(sel.size, k, tiles, shape.n).transpose(0, 2, 1, 3)
            acc[ws] = mma(vals[sel][:, None], block_b, acc[ws], shape, p)
            if stats is not None:
                stats.mma_count += sel.size * tiles
    if stats is not None:
        stats.blocks += int(slots.size)
        stats.windows += W
    out = acc.transpose(0, 2, 1, 3).reshape(W * v, n_pad)
    return out[: sparse.rows, :N]


# -- SDDMM output splitting -------------------------------------------------------------


class SubBlockKind(enum.Enum):
    B8X8 = "8x8"
    B8X4 = "8x4"

    @classmethod
    def for_precision(cls, p: Precision) -> SubBlockKind:
        return cls.B8X8 if Precision.parse(p) is Precision.FP16 else cls.B8X4

    @property
    def width(self) -> int:
        return 8 if self is SubBlockKind.B8X8 else 4

    @property
    def slot_strides(self) -> tuple[int, ...]:
        """Offset of c0..c3 relative to the lane's c0 position."""
        w = self.width
        return (0, w, 64, 64 + w)


def sddmm_output_offsets(lane: int, kind) -> int:
    """Element offset of a lane's c0 inside the stored 8 x 16 output block.

    The block is stored as sub-blocks of width 8 (FP16) or 4 (TF32), each
    row-major, matching the sparse operand layout SpMM reads.
    """
    kind = SubBlockKind(kind)
    if not 0 <= lane < WARP_SIZE:
        raise ArgumentError(f"lane {lane} outside the warp")
    if kind is SubBlockKind.B8X8:
        return (lane % 4) * 2 * 8 + lane // 4
    g = 1 if lane > 15 else 0
    return (lane % 4) * 2 * 4 + lane // 4 + g * 32 - g * 4


def output_offset_table(p: Precision) -> np.ndarray:
    """(32, 4) storage offsets of every accumulator register."""
    kind = SubBlockKind.for_precision(p)
    base = np.array([sddmm_output_offsets(t, kind) for t in range(WARP_SIZE)])
    return base[:, None] + np.array(kind.slot_strides)[None, :]


def offset_to_position(offset, p: Precision):
    """(row, column) in the logical 8 x 16 block for a storage offset."""
    w = SubBlockKind.for_precision(p).width
    offset = np.asarray(offset)
    sub, within = np.divmod(offset, 8 * w)
    return within // w, sub * w + within % w


class SubBlockWrite(NamedTuple):
    lane: int
    slot: int
    sub_block: int
    offset: int
    value: float


def split_output(ct_frags, p: Precision) -> list[SubBlockWrite]:
    """Writes that store the C^T accumulator fragments as C sub-blocks.

    ``ct_frags`` is (32, 4): register ``c_slot`` of each lane. FP16 targets
    two 8x8 sub-blocks, TF32 four 8x4 sub-blocks. Ordered by lane, then
    register.
    """
    frags = np.asarray(ct_frags)
    if frags.shape != (WARP_SIZE, 4):
        raise ShapeError(f"accumulator fragments must be (32, 4), got {frags.shape}")
    kind = SubBlockKind.for_precision(p)
    table = output_offset_table(p)
    span = 8 * kind.width
    return [
        SubBlockWrite(lane, slot, int(table[lane, slot]) // span, int(table[lane, slot]), frags[lane, slot].item())
        for lane in range(WARP_SIZE)
        for slot in range(4)
    ]


def reassemble_block(writes, p: Precision) -> np.ndarray:
    """Logical 8 x 16 block C from a list of sub-block writes."""
    out = np.zeros((8, 16))
    for wr in writes:
        i, j = offset_to_position(wr.offset, p)
        out[i, j] = wr.value
    return out


# -- SDDMM ---------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SddmmOperands:
    """Mask positions (nonzero stored values) plus A (M x K, row-major) and B (K x N, column-major)."""

    mask: MeBcrsMatrix
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(_as_dense(self.a, "A"))
        b = np.asfortranarray(_as_dense(self.b, "B"))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not isinstance(self.mask, MeBcrsMatrix):
            raise ArgumentError("the SDDMM mask must be ME-BCRS encoded")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"inner dimensions differ: A is {a.shape}, B is {b.shape}")
        if (a.shape[0], b.shape[1]) != (self.mask.rows, self.mask.cols):
            raise ShapeError(
                f"mask is {self.mask.rows}x{self.mask.cols}, A @ B is {a.shape[0]}x{b.shape[1]}"
            )


def sddmm(ops: SddmmOperands, cfg: KernelConfig, stats: KernelStats | None = None) -> MeBcrsMatrix:
    """Sample A @ B at the mask's positions; returns the mask structure with new values.

    Each 8-row window is processed in groups of 16 consecutive vectors.
    The MMA left operand is the 16 sampled columns of B transposed, the
    right operand the window's 8 rows of A transposed, giving C^T (16 x 8)
    after K / k steps. The fragments are then split into sub-blocks and
    written at the offsets from :func:`output_offset_table`, skipping
    positions outside the window or outside the mask.
    """
    p = cfg.precision
    shape = p.shape
    mask = ops.mask
    if mask.vector_height != shape.n or mask.k != shape.k:
        raise ArgumentError(f"mask must use 8x1 vectors and k={shape.k} for {p.name}")
    M, K = ops.a.shape
    N = ops.b.shape[1]
    k = shape.k
    k_pad = ceil_div(K, k) * k
    W = mask.num_windows
    a_pad = np.zeros((W * shape.n, k_pad), dtype=np.float32)
    a_pad[:M, :K] = ops.a
    b_pad = np.zeros((k_pad, N + 1), dtype=np.float32)
    b_pad[:K, :N] = ops.b

    layout = fragment_layout(shape, Operand.ACCUM_C, p)
    offsets = output_offset_table(p)
    row_in_block, vec_in_group = offset_to_position(offsets, p)

    rp = mask.row_pointers
    counts = mask.vector_counts()
    groups = ceil_div(counts, SDDMM_BLOCK_VECTORS)
    out = np.zeros_like(mask.values)
    written = 0
    for g in range(int(groups.max()) if W else 0):
        ws = np.flatnonzero(groups > g)
        local = g * SDDMM_BLOCK_VECTORS + np.arange(SDDMM_BLOCK_VECTORS)
        pos = rp[ws, None] + local[None, :]
        valid = pos < rp[ws + 1, None]
        cols = np.where(valid, mask.column_indices[np.where(valid, pos, 0)], N)

        left = np.swapaxes(b_pad[:, cols], 0, 1).transpose(0, 2, 1)  # (n, 16, k_pad)
        row_ids = ws[:, None] * shape.n + np.arange(shape.n)
        right = a_pad[row_ids].transpose(0, 2, 1)  # (n, k_pad, 8)
        ct = np.zeros((ws.size, shape.m, shape.n), dtype=np.float32)
        for kk in range(0, k_pad, k):
            ct = mma(left[..., kk : kk + k], right[:, kk : kk + k, :], ct, shape, p)
        if stats is not None:
            stats.mma_count += ws.size * (k_pad // k)

        frags = layout.gather(ct)  # (n, 32, 4)
        # storage position of every register inside the ME-BCRS values
        lv = g * SDDMM_BLOCK_VECTORS + vec_in_group  # vector index within window, (32, 4)
        cnt = counts[ws][:, None, None]
        in_window = lv[None] < cnt
        block_start = (lv // k) * k
        width = np.minimum(k, cnt - block_start[None])
        vidx = (
            shape.n * (rp[ws][:, None, None] + block_start[None])
            + row_in_block[None] * width
            + (lv % k)[None]
        )
        vidx = np.where(in_window, vidx, 0)
        keep = in_window & (mask.values[vidx] != 0) if mask.values.size else in_window
        out[vidx[keep]] = frags[keep]
        written += int(keep.sum())
    if stats is not None:
        stats.blocks += int(groups.sum())
        stats.windows += W
        stats.extra["written"] = stats.extra.get("written", 0) + written
    return MeBcrsMatrix(
        mask.rows, mask.cols, mask.vector_height, mask.k, mask.precision,
        mask.row_pointers, mask.column_indices, out,
    )
