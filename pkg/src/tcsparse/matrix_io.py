"""Sparse matrix ingestion, generation and densification.

:class:`CsrMatrix` is the canonical form everything else is built from and
checked against. Dense matrices are plain 2-D numpy arrays.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .errors import ArgumentError, FormatError, ParseError

INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64

# Generator value set: exact in binary16 and tf32, and products stay exact.
SMALL_INTS = np.array([-4, -3, -2, -1, 1, 2, 3, 4], dtype=VALUE_DTYPE)


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed-sparse-row matrix.

    Explicit zeros are allowed and count as stored positions.
    """

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=INDEX_DTYPE)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=INDEX_DTYPE)
        values = np.ascontiguousarray(self.values, dtype=VALUE_DTYPE)
        for arr in (row_ptr, col_idx, values):
            arr.setflags(write=False)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        self._validate()

    def _validate(self):
        if self.rows < 0 or self.cols < 0:
            raise FormatError(f"negative dimensions {self.rows}x{self.cols}")
        if self.row_ptr.shape != (self.rows + 1,):
            raise FormatError(
                f"row_ptr has length {self.row_ptr.size}, expected {self.rows + 1}"
            )
        nnz = self.col_idx.size
        if self.values.size != nnz:
            raise FormatError("col_idx and values lengths differ")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != nnz:
            raise FormatError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise FormatError("row_ptr is not nondecreasing")
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.cols:
                raise FormatError("column index out of range")
            # strictly ascending inside each row; row starts may step down
            step = np.diff(self.col_idx)
            starts = np.zeros(nnz, dtype=bool)
            starts[self.row_ptr[1:-1][self.row_ptr[1:-1] < nnz]] = True
            if np.any((step <= 0) & ~starts[1:]):
                raise FormatError("column indices not strictly ascending within a row")

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry (COO expansion of ``row_ptr``)."""
        return np.repeat(np.arange(self.rows, dtype=INDEX_DTYPE), np.diff(self.row_ptr))

    def with_values(self, values) -> CsrMatrix:
        return CsrMatrix(self.rows, self.cols, self.row_ptr, self.col_idx, values)

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"CsrMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def from_coo(rows: int, cols: int, r, c, v) -> CsrMatrix:
    """Build a CsrMatrix from coordinates, summing duplicates."""
    r = np.asarray(r, dtype=INDEX_DTYPE)
    c = np.asarray(c, dtype=INDEX_DTYPE)
    v = np.asarray(v, dtype=VALUE_DTYPE)
    if r.size:
        if r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols:
            raise FormatError("coordinate out of range")
    key = r * cols + c
    uniq, inverse = np.unique(key, return_inverse=True)
    summed = np.zeros(uniq.size, dtype=VALUE_DTYPE)
    np.add.at(summed, inverse, v)
    ur, uc = np.divmod(uniq, cols) if cols else (uniq, uniq)
    row_ptr = np.zeros(rows + 1, dtype=INDEX_DTYPE)
    np.cumsum(np.bincount(ur, minlength=rows), out=row_ptr[1:])
    return CsrMatrix(rows, cols, row_ptr, uc, summed)


def from_dense(dense) -> CsrMatrix:
    """Positions of nonzero entries of a 2-D array."""
    dense = np.asarray(dense, dtype=VALUE_DTYPE)
    if dense.ndim != 2:
        raise ArgumentError("dense input must be 2-D")
    r, c = np.nonzero(dense)
    return from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c])


def to_dense(m: CsrMatrix) -> np.ndarray:
    out = np.zeros((m.rows, m.cols), dtype=VALUE_DTYPE)
    out[m.row_indices(), m.col_idx] = m.values
    return out


def identity(n: int) -> CsrMatrix:
    idx = np.arange(n)
    return CsrMatrix(n, n, np.arange(n + 1), idx, np.ones(n))


# -- generation --------------------------------------------------------------


def generate_random_sparse(rows: int, cols: int, density: float, seed: int) -> CsrMatrix:
    """Seeded uniform random sparsity pattern with small-integer values.

    Exactly ``round(rows * cols * density)`` distinct positions are sampled
    without replacement, so the nnz never drifts from its expectation.
    Values come from {-4..4} minus zero.
    """
    if not 0.0 < density <= 1.0:
        raise ArgumentError(f"density must lie in (0, 1], got {density}")
    if rows < 1 or cols < 1:
        raise ArgumentError(f"dimensions must be positive, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    total = rows * cols
    nnz = min(total, int(round(total * density)))
    flat = np.sort(rng.choice(total, size=nnz, replace=False))
    vals = rng.choice(SMALL_INTS, size=nnz)
    r, c = np.divmod(flat, cols)
    return from_coo(rows, cols, r, c, vals)


def random_dense(rows: int, cols: int, seed: int, mode: str = "int") -> np.ndarray:
    """Dense operand: small integers (``mode="int"``) or uniform reals in [-1, 1)."""
    rng = np.random.default_rng(seed)
    if mode == "int":
        return rng.integers(-4, 5, size=(rows, cols)).astype(VALUE_DTYPE)
    if mode == "real":
        return rng.uniform(-1.0, 1.0, size=(rows, cols))
    raise ArgumentError(f"unknown value mode {mode!r}")


# -- MatrixMarket --------------------------------------------------------------

_FIELDS = {"real", "integer", "pattern"}
_SYMMETRIES = {"general", "symmetric"}


def parse_matrix_market(text: str | TextIO) -> CsrMatrix:
    """Parse the MatrixMarket ``coordinate`` format.

    Symmetric inputs are expanded to full storage, pattern entries read as
    1.0 and duplicate coordinates are summed.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    lines = iter(enumerate(stream, start=1))

    try:
        lineno, banner = next(lines)
    except StopIteration:
        raise ParseError("empty input, MatrixMarket banner missing", 1) from None
    tokens = banner.split()
    if not tokens or tokens[0].lower() != "%%matrixmarket":
        raise ParseError("MatrixMarket banner missing", lineno)
    if len(tokens) != 5:
        raise ParseError(f"malformed header {banner.strip()!r}", lineno)
    obj, fmt, field, symmetry = (t.lower() for t in tokens[1:])
    if obj != "matrix":
        raise ParseError(f"unsupported object {obj!r}", lineno)
    if fmt != "coordinate":
        raise ParseError(f"unsupported format {fmt!r}, only coordinate", lineno)
    if field not in _FIELDS:
        raise ParseError(f"unsupported field {field!r}", lineno)
    if symmetry not in _SYMMETRIES:
        raise ParseError(f"unsupported symmetry {symmetry!r}", lineno)

    size = None
    for lineno, line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        parts = stripped.split()
        try:
            size = tuple(int(p) for p in parts)
        except ValueError:
            raise ParseError(f"malformed size line {stripped!r}", lineno) from None
        if len(size) != 3 or min(size) < 0:
            raise ParseError(f"malformed size line {stripped!r}", lineno)
        break
    if size is None:
        raise ParseError("size line missing", lineno)
    rows, cols, declared = size

    want = 2 if field == "pattern" else 3
    r = np.empty(declared, dtype=INDEX_DTYPE)
    c = np.empty(declared, dtype=INDEX_DTYPE)
    v = np.ones(declared, dtype=VALUE_DTYPE)
    count = 0
    for lineno, line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        if count == declared:
            raise ParseError(f"more than {declared} entries", lineno)
        parts = stripped.split()
        if len(parts) != want:
            raise ParseError(f"expected {want} fields, got {len(parts)}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
            if want == 3:
                v[count] = int(parts[2]) if field == "integer" else float(parts[2])
        except ValueError:
            raise ParseError(f"malformed entry {stripped!r}", lineno) from None
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise ParseError(f"coordinate ({i}, {j}) outside {rows}x{cols}", lineno)
        r[count], c[count] = i - 1, j - 1
        count += 1
    if count != declared:
        raise ParseError(f"expected {declared} entries, found {count}", lineno)

    if symmetry == "symmetric":
        off = r != c
        r, c, v = (
            np.concatenate([r, c[off]]),
            np.concatenate([c, r[off]]),
            np.concatenate([v, v[off]]),
        )
    return from_coo(rows, cols, r, c, v)


def read_matrix_market(path) -> CsrMatrix:
    with open(path, encoding="utf-8") as fh:
        return parse_matrix_market(fh)


def serialize_matrix_market(m: CsrMatrix) -> str:
    """General real coordinate text; round-trips through the parser."""
    out = [
        "%%MatrixMarket matrix coordinate real general",
        f"{m.rows} {m.cols} {m.nnz}",
    ]
    out.extend(
        f"{i + 1} {j + 1} {x!r}"
        for i, j, x in zip(m.row_indices().tolist(), m.col_idx.tolist(), m.values.tolist())
    )
    return "\n".join(out) + "\n"


def write_matrix_market(m: CsrMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_matrix_market(m))


# -- canonical CSV (golden files) ------------------------------------------------


def _csv_line(name: str, items: Iterable) -> str:
    return ",".join([name, *map(str, items)])


def to_csv(m: CsrMatrix) -> str:
    """Canonical text form: a shape line then one line per CSR array."""
    return "\n".join(
        [
            _csv_line("shape", (m.rows, m.cols)),
            _csv_line("row_ptr", m.row_ptr.tolist()),
            _csv_line("col_idx", m.col_idx.tolist()),
            _csv_line("values", (repr(x) for x in m.values.tolist())),
        ]
    ) + "\n"


def from_csv(text: str) -> CsrMatrix:
    fields = {}
    for line in text.strip().splitlines():
        name, *items = line.split(",")
        fields[name] = items
    try:
        rows, cols = (int(x) for x in fields["shape"])
        return CsrMatrix(
            rows,
            cols,
            [int(x) for x in fields["row_ptr"]],
            [int(x) for x in fields["col_idx"]],
            [float(x) for x in fields["values"]],
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad canonical CSV: {exc}") from None
