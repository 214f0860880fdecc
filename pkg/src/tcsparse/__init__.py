"""Host-side emulation of sparse SpMM/SDDMM on tensor-core MMA tiles.

Sparse matrices are cut into 8x1 column vectors and multiplied with the
operands of a 16x8 MMA swapped and transposed, so the sparse side sits in
the tile's 8-wide dimension. The package models the storage format, the
warp fragment layouts and memory transactions, and the cost metrics that
compare the 8x1 partition against the 16x1 one.
"""

from .errors import ArgumentError, FormatError, ParseError, ShapeError
from .formats import (
    MeBcrsMatrix,
    SrBcrsMatrix,
    WindowPartition,
    decode_mebcrs,
    decode_srbcrs,
    encode_mebcrs,
    encode_srbcrs,
    footprint_bytes,
    partition_windows,
)
from .kernels import (
    KernelConfig,
    KernelStats,
    SddmmOperands,
    handle_residue,
    sddmm,
    sddmm_output_offsets,
    split_output,
    spmm,
    spmm_baseline16,
)
from .matrix_io import (
    CsrMatrix,
    from_dense,
    generate_random_sparse,
    parse_matrix_market,
    random_dense,
    serialize_matrix_market,
    to_dense,
)
from .tcu import (
    M16N8K4,
    M16N8K8,
    Mapping,
    MmaShape,
    Operand,
    Precision,
    count_transactions,
    fragment_layout,
    map_threads,
    mma,
    round_to_precision,
    swap_transpose_mma,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "FormatError",
    "ParseError",
    "ShapeError",
    "MeBcrsMatrix",
    "SrBcrsMatrix",
    "WindowPartition",
    "decode_mebcrs",
    "decode_srbcrs",
    "encode_mebcrs",
    "encode_srbcrs",
    "footprint_bytes",
    "partition_windows",
    "KernelConfig",
    "KernelStats",
    "SddmmOperands",
    "handle_residue",
    "sddmm",
    "sddmm_output_offsets",
    "split_output",
    "spmm",
    "spmm_baseline16",
    "CsrMatrix",
    "from_dense",
    "generate_random_sparse",
    "random_dense",
    "parse_matrix_market",
    "serialize_matrix_market",
    "to_dense",
    "M16N8K4",
    "M16N8K8",
    "Mapping",
    "MmaShape",
    "Operand",
    "Precision",
    "count_transactions",
    "fragment_layout",
    "map_threads",
    "mma",
    "round_to_precision",
    "swap_transpose_mma",
]
