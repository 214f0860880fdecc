import numpy as np
import pytest

from conftest import kernel_suite, nonzero_vectors
from tcsparse.analysis import (
    CSV_COLUMNS,
    Strategy,
    analyze_matrix,
    count_mma,
    count_zero_fill,
    data_access_cost,
    dense_transactions,
    emit_report,
    load_reports_json,
)
from tcsparse.errors import ArgumentError
from tcsparse.formats import partition_windows
from tcsparse.matrix_io import CsrMatrix, from_dense, generate_random_sparse, identity, to_dense
from tcsparse.tcu import Mapping, Precision, count_transactions, map_threads, map_threads_baseline

SUITE = [m for m, _ in kernel_suite(30, seed=77)]


def recount(m, v, k):
    """Per-window vector counts by scanning the dense matrix."""
    return [len(c) for c in nonzero_vectors(to_dense(m), v)]


def mma_oracle(m, v, k, n):
    tw = 16 if v == 8 else 8
    tiles = -(-n // tw)
    return sum(-(-c // k) for c in recount(m, v, k)) * tiles


def access_oracle(m, v, p, n):
    tw = 16 if v == 8 else 8
    tiles = -(-n // tw)
    vw, k = p.value_width, p.k
    total = 0
    for c in recount(m, v, k):
        blocks = -(-c // k)
        for _ in range(tiles):
            total += blocks * (v * k * vw + k * tw * vw)
            if blocks:
                total += v * tw * vw
    return total


def transactions_oracle(m, v, p, n, mapping):
    """Build every block's load pattern from its real gathered rows and count it."""
    tw = 16 if v == 8 else 8
    tiles = -(-n // tw)
    stride = tiles * tw * p.value_width
    total = 0
    for cols in nonzero_vectors(to_dense(m), v):
        for s in range(0, len(cols), p.k):
            ids = cols[s : s + p.k]
            ids = ids + [0] * (p.k - len(ids))
            width = min(p.k, len(cols) - s)
            for t in range(tiles):
                base = t * tw * p.value_width
                if v == 8:
                    ap = map_threads(mapping, base, stride, p, row_ids=ids, rows_present=width)
                else:
                    ap = map_threads_baseline(base, stride, p, row_ids=ids, rows_present=width)
                total += count_transactions(ap).transactions
    return total


def empty(rows, cols):
    return CsrMatrix(rows, cols, [0] * (rows + 1), [], [])


# -- counts ----------------------------------------------------------------------------------


def test_empty_is_zero():
    m = empty(32, 32)
    for v, s in [(8, Strategy.SWAP8), (16, Strategy.BASELINE16)]:
        part = partition_windows(m, v, 8)
        assert count_mma(part, 16, s) == 0
        assert data_access_cost(part, 16, s, Precision.FP16) == 0
        assert dense_transactions(part, 16, s, Precision.FP16) == 0


def test_zero_fill_examples():
    assert count_zero_fill(partition_windows(from_dense(np.ones((16, 16))), 8, 8), from_dense(np.ones((16, 16)))) == 0
    assert count_zero_fill(partition_windows(identity(8), 8, 8), identity(8)) == 56


def test_single_full_block_bytes():
    m = from_dense(np.ones((8, 8)))
    part = partition_windows(m, 8, 8)
    # A 128 B + B 256 B + C 8 x 16 x 2 B
    assert data_access_cost(part, 16, Strategy.SWAP8, Precision.FP16) == 128 + 256 + 256


@pytest.mark.parametrize("idx", range(len(SUITE)))
@pytest.mark.parametrize("p", list(Precision))
def test_recounts(idx, p):
    m = SUITE[idx]
    for n in (16, 48, 128):
        for v, s in [(8, Strategy.SWAP8), (16, Strategy.BASELINE16)]:
            part = partition_windows(m, v, p.k)
            assert count_mma(part, n, s) == mma_oracle(m, v, p.k, n)
            assert data_access_cost(part, n, s, p) == access_oracle(m, v, p, n)
            zf = v * sum(recount(m, v, p.k)) - m.nnz
            assert count_zero_fill(part, m) == zf


@pytest.mark.parametrize("idx", range(0, len(SUITE), 3))
@pytest.mark.parametrize("p", list(Precision))
def test_transactions_recount(idx, p):
    m = SUITE[idx]
    for n in (16, 40):
        p8 = partition_windows(m, 8, p.k)
        p16 = partition_windows(m, 16, p.k)
        for mapping in Mapping:
            assert dense_transactions(p8, n, Strategy.SWAP8, p, mapping) == transactions_oracle(m, 8, p, n, mapping)
        assert dense_transactions(p16, n, Strategy.BASELINE16, p) == transactions_oracle(m, 16, p, n, Mapping.DIRECT)


@pytest.mark.parametrize("p", list(Precision))
def test_bounds_on_suite(p):
    for m in SUITE:
        p8, p16 = partition_windows(m, 8, p.k), partition_windows(m, 16, p.k)
        assert count_zero_fill(p8, m) <= count_zero_fill(p16, m)
        for n in (16, 128):
            a8 = data_access_cost(p8, n, Strategy.SWAP8, p)
            a16 = data_access_cost(p16, n, Strategy.BASELINE16, p)
            if a16:
                assert 0 <= 1 - a8 / a16 <= 0.5
            assert count_mma(p8, n, Strategy.SWAP8) <= count_mma(p16, n, Strategy.BASELINE16)


def test_coalesced_never_worse():
    for m in SUITE:
        part = partition_windows(m, 8, 8)
        direct = dense_transactions(part, 128, Strategy.SWAP8, Precision.FP16, Mapping.DIRECT)
        coal = dense_transactions(part, 128, Strategy.SWAP8, Precision.FP16, Mapping.COALESCED)
        assert coal <= direct


def test_strategy_mismatch():
    with pytest.raises(ArgumentError):
        count_mma(partition_windows(identity(8), 16, 8), 16, Strategy.SWAP8)
    with pytest.raises(ArgumentError):
        data_access_cost(partition_windows(identity(8), 8, 4), 16, Strategy.SWAP8, Precision.FP16)
    with pytest.raises(ArgumentError):
        Strategy.for_vector_height(4)


# -- reports ---------------------------------------------------------------------------------


def test_empty_report_is_header():
    assert emit_report([], "csv") == (",".join(CSV_COLUMNS) + "\n").encode()


def test_one_report_rows():
    rep = analyze_matrix(identity(8), "eye", n_values=(16,), precisions=(Precision.FP16,), vector_heights=(8,))
    lines = emit_report([rep], "csv").decode().splitlines()
    assert len(lines) == 2
    fields = lines[1].split(",")
    assert len(fields) == len(CSV_COLUMNS) and all(fields)
    row = dict(zip(CSV_COLUMNS, fields))
    assert row["mma_count"] == "1" and row["zero_fill"] == "56"


def test_full_report_row_count():
    rep = analyze_matrix(generate_random_sparse(40, 40, 0.1, 1), "r")
    assert len(emit_report([rep]).decode().splitlines()) == 1 + 2 * 2 * 2


def test_json_round_trip():
    reps = [analyze_matrix(m, f"m{i}") for i, m in enumerate(SUITE[:4])]
    back = load_reports_json(emit_report(reps, "json"))
    assert back == reps
    assert emit_report(back, "csv") == emit_report(reps, "csv")


def test_bad_format():
    with pytest.raises(ArgumentError):
        emit_report([], "xml")
