import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_of
from tcsparse.errors import ArgumentError, FormatError, ParseError
from tcsparse.matrix_io import (
    CsrMatrix,
    from_csv,
    from_dense,
    generate_random_sparse,
    identity,
    parse_matrix_market,
    serialize_matrix_market,
    to_csv,
    to_dense,
)

IDENTITY_2 = """%%MatrixMarket matrix coordinate real general
2 2 2
1 1 1.0
2 2 1.0
"""


def test_parse_identity():
    m = parse_matrix_market(IDENTITY_2)
    assert m.row_ptr.tolist() == [0, 1, 2]
    assert m.col_idx.tolist() == [0, 1]
    assert m.values.tolist() == [1.0, 1.0]


def test_parse_symmetric_expands():
    text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n2 1 2.0\n"
    d = to_dense(parse_matrix_market(text))
    assert d[1, 0] == 2.0 and d[0, 1] == 2.0


def test_symmetric_diagonal_not_doubled():
    text = "%%MatrixMarket matrix coordinate integer symmetric\n3 3 2\n1 1 5\n3 2 -1\n"
    d = to_dense(parse_matrix_market(text))
    assert d.tolist() == [[5, 0, 0], [0, 0, -1], [0, -1, 0]]


def test_pattern_entries_are_one():
    text = "%%MatrixMarket matrix coordinate pattern general\n% comment\n3 4 2\n1 4\n3 1\n"
    m = parse_matrix_market(text)
    assert m.values.tolist() == [1.0, 1.0]
    assert to_dense(m)[0, 3] == 1.0 and to_dense(m)[2, 0] == 1.0


def test_duplicates_summed_against_accumulation_oracle():
    rng = np.random.default_rng(0)
    entries = [(int(i), int(j), float(v)) for i, j, v in zip(
        rng.integers(1, 11, 30), rng.integers(1, 11, 30), rng.integers(-3, 4, 30))]
    entries += [(4, 5, 1.0), (4, 5, 2.0)]
    text = "%%MatrixMarket matrix coordinate real general\n10 10 {}\n".format(len(entries))
    text += "".join(f"{i} {j} {v}\n" for i, j, v in entries)

    oracle = {}
    for i, j, v in entries:
        oracle[(i - 1, j - 1)] = oracle.get((i - 1, j - 1), 0.0) + v
    m = parse_matrix_market(text)
    got = {(int(r), int(c)): v for r, c, v in zip(m.row_indices(), m.col_idx, m.values)}
    assert got == oracle
    assert got[(3, 4)] == oracle[(3, 4)]
    assert sum(1 for key in got if key == (3, 4)) == 1


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("1 1 1\n", 1),
        ("%%MatrixMarket matrix coordinate real\n1 1 0\n", 1),
        ("%%MatrixMarket matrix array real general\n1 1\n1.0\n", 1),
        ("%%MatrixMarket matrix coordinate complex general\n1 1 0\n", 1),
        ("%%MatrixMarket matrix coordinate real general\n2 2\n", 2),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 0 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1.0\n2 2 1.0\n", 4),
    ],
)
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_matrix_market(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_generate_full_density():
    m = generate_random_sparse(8, 8, 1.0, seed=3)
    assert m.nnz == 64
    assert np.all(to_dense(m) != 0)


def test_generate_deterministic():
    assert generate_random_sparse(100, 100, 0.05, 42) == generate_random_sparse(100, 100, 0.05, 42)
    assert generate_random_sparse(100, 100, 0.05, 42) != generate_random_sparse(100, 100, 0.05, 43)


def test_generate_nnz_close_to_expectation():
    m = generate_random_sparse(1000, 1000, 0.01, 7)
    assert abs(m.nnz - 10000) <= 500


def test_generate_values_are_small_nonzero_ints():
    m = generate_random_sparse(50, 40, 0.3, 1)
    assert set(m.values.tolist()) <= {-4, -3, -2, -1, 1, 2, 3, 4}


@pytest.mark.parametrize("density", [0.0, -0.1, 1.5])
def test_generate_rejects_bad_density(density):
    with pytest.raises(ArgumentError):
        generate_random_sparse(4, 4, density, 0)


def test_to_dense_examples():
    empty = CsrMatrix(3, 3, [0, 0, 0, 0], [], [])
    assert np.array_equal(to_dense(empty), np.zeros((3, 3)))
    assert to_dense(identity(2)).tolist() == [[1, 0], [0, 1]]


def test_dense_round_trip():
    m = generate_random_sparse(16, 16, 0.2, seed=1)
    assert np.array_equal(to_dense(m), dense_of(m))
    assert from_dense(to_dense(m)) == m


def test_invariants_enforced():
    with pytest.raises(FormatError):
        CsrMatrix(2, 2, [0, 1], [0], [1.0])
    with pytest.raises(FormatError):
        CsrMatrix(2, 2, [0, 2, 2], [1, 0], [1.0, 1.0])  # descending in a row
    with pytest.raises(FormatError):
        CsrMatrix(2, 2, [0, 1, 2], [0, 2], [1.0, 1.0])  # out of range
    # a new row may restart at a lower column
    CsrMatrix(2, 3, [0, 2, 3], [1, 2, 0], [1.0, 1.0, 1.0])


def test_explicit_zero_is_a_position():
    m = CsrMatrix(2, 2, [0, 1, 1], [1], [0.0])
    assert m.nnz == 1


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 30),
    cols=st.integers(1, 30),
    density=st.floats(0.01, 1.0),
    seed=st.integers(0, 2**16),
)
def test_serialize_parse_identity(rows, cols, density, seed):
    m = generate_random_sparse(rows, cols, density, seed)
    assert parse_matrix_market(serialize_matrix_market(m)) == m
    assert from_csv(to_csv(m)) == m
    assert np.count_nonzero(to_dense(m)) == m.nnz


def test_real_values_survive_serialization():
    m = generate_random_sparse(5, 5, 0.5, 2)
    m = m.with_values(np.random.default_rng(0).uniform(-1, 1, m.nnz))
    assert parse_matrix_market(serialize_matrix_market(m)) == m


def test_csv_golden():
    assert to_csv(identity(2)) == "shape,2,2\nrow_ptr,0,1,2\ncol_idx,0,1\nvalues,1.0,1.0\n"
