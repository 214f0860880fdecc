"""Software model of warp-level MMA tiles.

Covers operand rounding (binary16 / tf32), the m16n8k8 and m16n8k4 MMA
tiles with binary32 accumulation, per-lane fragment layouts, and a
32-byte-segment memory transaction model for loading the dense operand.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, ShapeError

WARP_SIZE = 32
SEGMENT_BYTES = 32
# transaction sizes, in 32-byte segments
_TRANSACTION_SEGMENTS = (4, 2, 1)


@dataclass(frozen=True)
class MmaShape:
    m: int
    n: int
    k: int

    def __post_init__(self):
        if (self.m, self.n, self.k) not in {(16, 8, 8), (16, 8, 4)}:
            raise ArgumentError(f"unsupported MMA shape m{self.m}n{self.n}k{self.k}")

    def __str__(self):
        return f"m{self.m}n{self.n}k{self.k}"


M16N8K8 = MmaShape(16, 8, 8)
M16N8K4 = MmaShape(16, 8, 4)


class Precision(enum.Enum):
    FP16 = "fp16"
    TF32 = "tf32"

    @property
    def shape(self) -> MmaShape:
        return M16N8K8 if self is Precision.FP16 else M16N8K4

    @property
    def k(self) -> int:
        return self.shape.k

    @property
    def value_width(self) -> int:
        """Bytes per stored operand element."""
        return 2 if self is Precision.FP16 else 4

    @classmethod
    def from_shape(cls, shape: MmaShape) -> Precision:
        return cls.FP16 if shape == M16N8K8 else cls.TF32

    @classmethod
    def parse(cls, value) -> Precision:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ArgumentError(f"unknown precision {value!r}") from None


class Operand(enum.Enum):
    LEFT_A = "a"
    RIGHT_B = "b"
    ACCUM_C = "c"


class Mapping(enum.Enum):
    DIRECT = "direct"
    COALESCED = "coalesced"

    @classmethod
    def parse(cls, value) -> Mapping:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ArgumentError(f"unknown mapping {value!r}") from None


def _check_pair(shape: MmaShape, p: Precision):
    if p.shape != shape:
        raise ArgumentError(f"{p.name} runs on {p.shape}, not {shape}")


# -- rounding -------------------------------------------------------------------


def round_to_precision(x, p: Precision):
    """Round binary32 values to the operand precision, returned as float32.

    FP16 is round-to-nearest-even to IEEE binary16 (overflow goes to
    infinity). TF32 keeps the binary32 exponent and rounds the significand
    to 10 explicit fraction bits, ties to even. NaN passes through.
    Inputs are first taken to binary32.
    """
    p = Precision.parse(p)
    x32 = np.asarray(x, dtype=np.float32)
    if p is Precision.FP16:
        with np.errstate(over="ignore"):
            out = x32.astype(np.float16).astype(np.float32)
    else:
        bits = x32.view(np.uint32).astype(np.uint64)
        lsb = (bits >> 13) & 1
        rounded = ((bits + 0xFFF + lsb) & ~np.uint64(0x1FFF)).astype(np.uint32)
        special = (bits & 0x7F800000) == 0x7F800000
        out = np.where(special, x32, rounded.view(np.float32))
    if np.ndim(x) == 0:
        return np.float32(out)
    return out


# -- MMA ----------------------------------------------------------------------------


def _tile_dims(t: np.ndarray) -> tuple[int, int]:
    if t.ndim < 2:
        raise ShapeError(f"tile must be at least 2-D, got shape {t.shape}")
    return t.shape[-2], t.shape[-1]


def mma(a, b, c, shape: MmaShape, p: Precision) -> np.ndarray:
    """D = C + round(A) @ round(B), accumulated in binary32.

    ``a`` is m x k, ``b`` k x n, ``c`` m x n. Leading batch dimensions
    broadcast, so a stack of independent tiles is one call. Products of
    rounded operands are exact in binary32; the k partial products are
    added to the accumulator in ascending k order, each add rounded to
    binary32.
    """
    p = Precision.parse(p)
    _check_pair(shape, p)
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c)
    if _tile_dims(a) != (shape.m, shape.k):
        raise ShapeError(f"A tile {a.shape[-2:]} does not match {shape} ({shape.m}x{shape.k})")
    if _tile_dims(b) != (shape.k, shape.n):
        raise ShapeError(f"B tile {b.shape[-2:]} does not match {shape} ({shape.k}x{shape.n})")
    if _tile_dims(c) != (shape.m, shape.n):
        raise ShapeError(f"C tile {c.shape[-2:]} does not match {shape} ({shape.m}x{shape.n})")
    ra = round_to_precision(a, p)
    rb = round_to_precision(b, p)
    acc = c.astype(np.float32)
    for l in range(shape.k):
        acc = acc + ra[..., :, l, None] * rb[..., l, None, :]
    return acc


def swap_transpose_mma(block_a, block_b, acc, shape: MmaShape, p: Precision) -> np.ndarray:
    """acc + block_a @ block_b, issued as the transposed product on the MMA unit.

    ``block_a`` is the sparse n x k block (8 rows: the vector height),
    ``block_b`` the gathered dense k x m block (16 columns) and ``acc`` is
    n x m. The hardware tile only sees the operands swapped and transposed:
    (B^T @ A^T + acc^T)^T.
    """
    block_a = np.asarray(block_a)
    block_b = np.asarray(block_b)
    acc = np.asarray(acc)
    if _tile_dims(block_a) != (shape.n, shape.k):
        raise ShapeError(f"sparse block {block_a.shape[-2:]} must be {shape.n}x{shape.k}")
    if _tile_dims(block_b) != (shape.k, shape.m):
        raise ShapeError(f"dense block {block_b.shape[-2:]} must be {shape.k}x{shape.m}")
    if _tile_dims(acc) != (shape.n, shape.m):
        raise ShapeError(f"accumulator {acc.shape[-2:]} must be {shape.n}x{shape.m}")
    ct = mma(
        np.swapaxes(block_b, -1, -2),
        np.swapaxes(block_a, -1, -2),
        np.swapaxes(acc, -1, -2),
        shape,
        p,
    )
    return np.swapaxes(ct, -1, -2)


# -- fragment layouts -----------------------------------------------------------------


@dataclass(frozen=True)
class WarpTileLayout:
    """Tile coordinates held by each lane's register slots.

    ``coords[lane, slot]`` is the (row, col) of that register's element.
    """

    shape: MmaShape
    operand: Operand
    coords: np.ndarray  # (32, slots, 2)

    @property
    def rows(self) -> int:
        return {Operand.LEFT_A: self.shape.m, Operand.RIGHT_B: self.shape.k}.get(
            self.operand, self.shape.m
        )

    @property
    def cols(self) -> int:
        return {Operand.LEFT_A: self.shape.k, Operand.RIGHT_B: self.shape.n}.get(
            self.operand, self.shape.n
        )

    @property
    def slots(self) -> int:
        return self.coords.shape[1]

    def lane(self, lane: int) -> list[tuple[int, int]]:
        return [tuple(map(int, rc)) for rc in self.coords[lane]]

    def gather(self, tile) -> np.ndarray:
        """Registers (32 x slots) holding ``tile`` under this layout."""
        tile = np.asarray(tile)
        return tile[..., self.coords[..., 0], self.coords[..., 1]]

    def scatter(self, regs) -> np.ndarray:
        regs = np.asarray(regs)
        out = np.zeros(regs.shape[:-2] + (self.rows, self.cols), dtype=regs.dtype)
        out[..., self.coords[..., 0], self.coords[..., 1]] = regs
        return out


def fragment_layout(shape: MmaShape, operand: Operand, p: Precision) -> WarpTileLayout:
    """Per-lane fragment coordinates for m16n8k8 (FP16) and m16n8k4 (TF32).

    Lanes split as group = lane // 4 and quad = lane % 4.
    """
    p = Precision.parse(p)
    operand = Operand(operand)
    _check_pair(shape, p)
    lanes = np.arange(WARP_SIZE)
    g, q = lanes // 4, lanes % 4
    if operand is Operand.ACCUM_C:
        slots = [(g, 2 * q), (g, 2 * q + 1), (g + 8, 2 * q), (g + 8, 2 * q + 1)]
    elif p is Precision.FP16 and operand is Operand.LEFT_A:
        slots = [(g, 2 * q), (g, 2 * q + 1), (g + 8, 2 * q), (g + 8, 2 * q + 1)]
    elif p is Precision.FP16:
        slots = [(2 * q, g), (2 * q + 1, g)]
    elif operand is Operand.LEFT_A:
        slots = [(g, q), (g + 8, q)]
    else:
        slots = [(q, g)]
    coords = np.stack([np.stack(rc, axis=-1) for rc in slots], axis=1)
    coords.setflags(write=False)
    return WarpTileLayout(shape, operand, coords)


def coalesced_column_order(p: Precision = Precision.FP16) -> np.ndarray:
    """Dense-block column feeding each left-operand row under the shuffled mapping.

    Lane group g normally owns columns g and g + 8 of the k x 16 block;
    the shuffle hands it columns 2g and 2g + 1 instead. Because the
    accumulator rows line up with the same lanes, the output block is
    permuted identically and un-permuted on write-back.
    """
    layout = fragment_layout(Precision.parse(p).shape, Operand.LEFT_A, p)
    order = np.empty(16, dtype=np.int64)
    for lane in range(0, WARP_SIZE, 4):
        g = lane // 4
        rows = sorted({int(r) for r, _ in layout.coords[lane]})
        order[rows[0]], order[rows[1]] = 2 * g, 2 * g + 1
    return order


# -- memory transactions ---------------------------------------------------------------


class Access(NamedTuple):
    lane: int
    address: int
    width: int


@dataclass(frozen=True)
class AccessPattern:
    """Ordered load steps; each step's accesses are issued together."""

    steps: tuple[tuple[Access, ...], ...]

    def __post_init__(self):
        for step in self.steps:
            for acc in step:
                if acc.width not in (1, 2, 4, 8, 16):
                    raise ArgumentError(f"unsupported access width {acc.width}")
                if acc.address % acc.width:
                    raise ArgumentError(f"address {acc.address} not {acc.width}-byte aligned")

    @property
    def useful_bytes(self) -> int:
        return sum(a.width for step in self.steps for a in step)

    def to_json(self) -> str:
        return json.dumps([[list(a) for a in step] for step in self.steps])

    @classmethod
    def from_json(cls, text: str) -> AccessPattern:
        return cls(tuple(tuple(Access(*a) for a in step) for step in json.loads(text)))


class TransactionCount(NamedTuple):
    transactions: int
    bytes: int


def _step_transactions(step) -> tuple[int, int]:
    touched = set()
    for acc in step:
        first = acc.address // SEGMENT_BYTES
        last = (acc.address + acc.width - 1) // SEGMENT_BYTES
        touched.update(range(first, last + 1))
    count = moved = 0
    segs = sorted(touched)
    i = 0
    while i < len(segs):
        s = segs[i]
        for size in _TRANSACTION_SEGMENTS:
            # naturally aligned runs only
            if s % size == 0 and all(s + j in touched for j in range(size)):
                break
        count += 1
        moved += size * SEGMENT_BYTES
        i += size
    return count, moved


def count_transactions(ap: AccessPattern) -> TransactionCount:
    """Memory transactions needed to serve ``ap``.

    Each step touches a set of 32-byte segments; touched segments forming an
    aligned 64- or 128-byte run are served by one larger transaction.
    Steps never merge with each other.
    """
    total = moved = 0
    for step in ap.steps:
        c, b = _step_transactions(step)
        total += c
        moved += b
    return TransactionCount(total, moved)


def _row_address(base: int, row_stride: int, row_ids, row: int) -> int:
    rid = row if row_ids is None else int(row_ids[row])
    return base + rid * row_stride


def map_threads(
    mode: Mapping,
    base_address: int,
    row_stride: int,
    p: Precision = Precision.FP16,
    row_ids=None,
    rows_present: int | None = None,
) -> AccessPattern:
    """Global loads of one gathered k x 16 dense block for the swapped MMA.

    The block feeds the left operand transposed, so lane ``t`` needs the
    block elements at (left-operand col, left-operand row). Row ``r`` of
    the block lives at ``base_address + row_ids[r] * row_stride``
    (``row_ids`` defaults to 0..k-1). Rows at or past ``rows_present`` are
    residue padding and are not loaded.

    Direct mode issues one access per register element. Coalesced mode
    loads the shuffled columns 2g, 2g+1 of each block row with a single
    access twice as wide. Lanes sharing ``lane % 4`` read the same block
    row at a time and form one load step.
    """
    p = Precision.parse(p)
    mode = Mapping.parse(mode)
    ew = p.value_width
    k = p.k
    rows_present = k if rows_present is None else rows_present
    layout = fragment_layout(p.shape, Operand.LEFT_A, p)

    steps = []
    if mode is Mapping.DIRECT:
        for q in range(4):
            for slot in range(layout.slots):
                step = []
                for lane in range(q, WARP_SIZE, 4):
                    col, row = (int(v) for v in layout.coords[lane, slot])
                    if row >= rows_present:
                        continue
                    addr = _row_address(base_address, row_stride, row_ids, row) + col * ew
                    step.append(Access(lane, addr, ew))
                if step:
                    steps.append(tuple(step))
    else:
        for q in range(4):
            lane_rows = sorted({int(c) for c in layout.coords[q, :, 1]})
            for row in lane_rows:
                if row >= rows_present:
                    continue
                step = []
                for lane in range(q, WARP_SIZE, 4):
                    g = lane // 4
                    addr = _row_address(base_address, row_stride, row_ids, row) + 2 * g * ew
                    step.append(Access(lane, addr, 2 * ew))
                steps.append(tuple(step))
    return AccessPattern(tuple(steps))


def map_threads_baseline(
    base_address: int,
    row_stride: int,
    p: Precision = Precision.FP16,
    row_ids=None,
    rows_present: int | None = None,
) -> AccessPattern:
    """Loads of a k x 8 dense block used directly as the right operand (16x1 path)."""
    p = Precision.parse(p)
    ew = p.value_width
    rows_present = p.k if rows_present is None else rows_present
    layout = fragment_layout(p.shape, Operand.RIGHT_B, p)
    steps = []
    for q in range(4):
        for slot in range(layout.slots):
            step = []
            for lane in range(q, WARP_SIZE, 4):
                row, col = (int(v) for v in layout.coords[lane, slot])
                if row >= rows_present:
                    continue
                addr = _row_address(base_address, row_stride, row_ids, row) + col * ew
                step.append(Access(lane, addr, ew))
            if step:
                steps.append(tuple(step))
    return AccessPattern(tuple(steps))
