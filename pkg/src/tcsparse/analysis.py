"""Structural cost metrics for the 8x1 and 16x1 vector partitions.

All counts are derived from the window partition alone; nothing here runs
the kernels. The 8x1 strategy pairs with 16-column output tiles (swapped
MMA), the 16x1 baseline with 8-column tiles.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ArgumentError
from .formats import WindowPartition, ceil_div, encode_mebcrs, encode_srbcrs, footprint_bytes, partition_windows
from .matrix_io import CsrMatrix
from .tcu import Mapping, Precision, count_transactions, map_threads, map_threads_baseline

CSV_COLUMNS = (
    "matrix_id",
    "rows",
    "cols",
    "nnz",
    "vector_height",
    "precision",
    "n_cols",
    "mma_count",
    "zero_fill",
    "access_bytes",
    "transactions",
    "footprint_me",
    "footprint_sr",
)


class Strategy(enum.Enum):
    SWAP8 = 8
    BASELINE16 = 16

    @property
    def vector_height(self) -> int:
        return self.value

    @property
    def tile_width(self) -> int:
        """Output columns covered by one MMA."""
        return 16 if self is Strategy.SWAP8 else 8

    @classmethod
    def for_vector_height(cls, v: int) -> Strategy:
        try:
            return cls(v)
        except ValueError:
            raise ArgumentError(f"no strategy for vector height {v}") from None


def _check(partition: WindowPartition, strategy: Strategy):
    if partition.vector_height != strategy.vector_height:
        raise ArgumentError(
            f"{strategy.name} needs a {strategy.vector_height}-row partition, "
            f"got {partition.vector_height}"
        )


def count_mma(partition: WindowPartition, n_cols: int, strategy: Strategy) -> int:
    """MMA invocations for one SpMM with ``n_cols`` dense columns."""
    _check(partition, strategy)
    return int(partition.block_counts().sum()) * ceil_div(n_cols, strategy.tile_width)


def count_zero_fill(partition: WindowPartition, m: CsrMatrix) -> int:
    """Zeros carried inside nonzero vectors: height x vectors - nnz."""
    return partition.vector_height * partition.total_vectors - m.nnz


def data_access_cost(
    partition: WindowPartition, n_cols: int, strategy: Strategy, precision: Precision
) -> int:
    """Bytes loaded and stored by one SpMM, regardless of where they come from.

    Every MMA loads a full sparse block (vector_height x k) and a gathered
    dense block (k x tile width). Output tiles are written once per window
    that has at least one block.
    """
    _check(partition, strategy)
    p = Precision.parse(precision)
    if partition.k != p.k:
        raise ArgumentError(f"partition uses k={partition.k}, {p.name} needs k={p.k}")
    vw = p.value_width
    v, k, tw = partition.vector_height, partition.k, strategy.tile_width
    tiles = ceil_div(n_cols, tw)
    blocks = partition.block_counts()
    per_mma = (v * k + k * tw) * vw
    c_bytes = v * tw * vw
    return int(blocks.sum() * tiles * per_mma + np.count_nonzero(blocks) * tiles * c_bytes)


@lru_cache(maxsize=None)
def _block_transactions(strategy: Strategy, p: Precision, mapping: Mapping, rows: int, base: int, stride: int) -> int:
    if strategy is Strategy.SWAP8:
        ap = map_threads(mapping, base, stride, p, rows_present=rows)
    else:
        ap = map_threads_baseline(base, stride, p, rows_present=rows)
    return count_transactions(ap).transactions


def dense_transactions(
    partition: WindowPartition,
    n_cols: int,
    strategy: Strategy,
    precision: Precision,
    mapping: Mapping = Mapping.COALESCED,
) -> int:
    """Memory transactions for gathering the dense operand of every MMA.

    The dense matrix is row-major at address 0 with its row length padded
    to whole tiles. Only the rows of real vectors are loaded. Every load
    step of both mappings reads a single dense row, so a block's count only
    depends on how many rows it has and where its tile starts within a
    128-byte line, not on which rows were gathered.
    """
    _check(partition, strategy)
    p = Precision.parse(precision)
    mapping = Mapping.parse(mapping)
    vw = p.value_width
    tw = strategy.tile_width
    tiles = ceil_div(n_cols, tw)
    stride = tiles * tw * vw
    k = partition.k
    total = 0
    counts = partition.counts()
    full = int((counts // k).sum())
    rest = counts[counts % k > 0] % k
    for t in range(tiles):
        base = (t * tw * vw) % 128
        total += full * _block_transactions(strategy, p, mapping, k, base, stride % 128)
        for r in rest.tolist():
            total += _block_transactions(strategy, p, mapping, r, base, stride % 128)
    return total


# -- reports -----------------------------------------------------------------------------


@dataclass
class CostRecord:
    mma_count: int
    zero_fill: int
    nonzero_count: int
    access_bytes: int
    transactions: int
    footprint_me: int
    footprint_sr: int


@dataclass
class CostReport:
    matrix_id: str
    rows: int
    cols: int
    nnz: int
    # (vector_height, precision, n_cols) -> record
    records: dict = field(default_factory=dict)

    def rows_out(self):
        for (v, p, n), rec in sorted(self.records.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
            yield {
                "matrix_id": self.matrix_id,
                "rows": self.rows,
                "cols": self.cols,
                "nnz": self.nnz,
                "vector_height": v,
                "precision": p.value,
                "n_cols": n,
                "mma_count": rec.mma_count,
                "zero_fill": rec.zero_fill,
                "access_bytes": rec.access_bytes,
                "transactions": rec.transactions,
                "footprint_me": rec.footprint_me,
                "footprint_sr": rec.footprint_sr,
                "nonzero_count": rec.nonzero_count,
            }


def analyze_matrix(
    m: CsrMatrix,
    matrix_id: str,
    n_values=(16, 128),
    precisions=(Precision.FP16, Precision.TF32),
    vector_heights=(8, 16),
) -> CostReport:
    report = CostReport(matrix_id, m.rows, m.cols, m.nnz)
    for p in map(Precision.parse, precisions):
        for v in vector_heights:
            strategy = Strategy.for_vector_height(v)
            part = partition_windows(m, v, p.k)
            mapping = Mapping.COALESCED if strategy is Strategy.SWAP8 else Mapping.DIRECT
            me = footprint_bytes(encode_mebcrs(m, p, vector_height=v))
            sr = footprint_bytes(encode_srbcrs(m, p, vector_height=v))
            zf = count_zero_fill(part, m)
            for n in n_values:
                report.records[(v, p, int(n))] = CostRecord(
                    mma_count=count_mma(part, n, strategy),
                    zero_fill=zf,
                    nonzero_count=m.nnz,
                    access_bytes=data_access_cost(part, n, strategy, p),
                    transactions=dense_transactions(part, n, strategy, p, mapping),
                    footprint_me=me,
                    footprint_sr=sr,
                )
    return report


def emit_report(reports, fmt: str = "csv") -> bytes:
    """Serialize reports as CSV (fixed column order) or JSON."""
    fmt = str(fmt).lower()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for rep in reports:
            writer.writerows(rep.rows_out())
        return buf.getvalue().encode()
    if fmt == "json":
        doc = [
            {
                "matrix_id": rep.matrix_id,
                "rows": rep.rows,
                "cols": rep.cols,
                "nnz": rep.nnz,
                "records": [
                    {"vector_height": v, "precision": p.value, "n_cols": n, **asdict(rec)}
                    for (v, p, n), rec in sorted(
                        rep.records.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])
                    )
                ],
            }
            for rep in reports
        ]
        return (json.dumps(doc, indent=2) + "\n").encode()
    raise ArgumentError(f"unsupported report format {fmt!r}")


def load_reports_json(data) -> list[CostReport]:
    out = []
    for item in json.loads(data):
        rep = CostReport(item["matrix_id"], item["rows"], item["cols"], item["nnz"])
        for rec in item["records"]:
            rec = dict(rec)
            key = (rec.pop("vector_height"), Precision.parse(rec.pop("precision")), rec.pop("n_cols"))
            rep.records[key] = CostRecord(**rec)
        out.append(rep)
    return out
