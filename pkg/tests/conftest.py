import math
from fractions import Fraction

import numpy as np
import pytest

from tcsparse.matrix_io import generate_random_sparse

# -- independent oracles -------------------------------------------------------------
# Written against the definitions (python ints / Fractions), never against
# the package internals they check.


def int_matmul(a, b):
    """Exact integer product by triple loop."""
    a = [[int(x) for x in row] for row in np.asarray(a)]
    b = [[int(x) for x in row] for row in np.asarray(b)]
    n, k, m = len(a), len(b), len(b[0]) if b else 0
    return np.array(
        [[sum(a[i][l] * b[l][j] for l in range(k)) for j in range(m)] for i in range(n)],
        dtype=np.float64,
    ).reshape(n, m)


def round_significand(x: float, frac_bits: int, min_exp: int, max_finite: float) -> float:
    """Round-to-nearest-even onto a binary format with ``frac_bits`` fraction bits."""
    if math.isnan(x) or math.isinf(x) or x == 0:
        return x
    _, e = math.frexp(abs(x))  # |x| = m * 2**e, 0.5 <= m < 1
    exp = max(e - 1, min_exp)
    quantum = Fraction(2) ** (exp - frac_bits)
    scaled = Fraction(abs(x)) / quantum
    n = math.floor(scaled)
    rem = scaled - n
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and n % 2 == 1):
        n += 1
    r = float(n * quantum)
    if r > max_finite:
        r = math.inf
    return math.copysign(r, x)


FP16_MAX = 65504.0
TF32_MAX = float((2 - Fraction(2) ** -10) * Fraction(2) ** 127)


def fp16_oracle(x: float) -> float:
    return round_significand(x, 10, -14, FP16_MAX)


def tf32_oracle(x: float) -> float:
    return round_significand(x, 10, -126, TF32_MAX)


def dense_of(m):
    """Dense matrix by walking the CSR arrays entry by entry."""
    out = np.zeros((m.rows, m.cols))
    for i in range(m.rows):
        for p in range(m.row_ptr[i], m.row_ptr[i + 1]):
            out[i, m.col_idx[p]] = m.values[p]
    return out


def nonzero_vectors(dense, v):
    """Per window: sorted columns with any nonzero in the window's rows."""
    rows = dense.shape[0]
    return [
        sorted({j for i in range(w, min(w + v, rows)) for j in np.flatnonzero(dense[i])})
        for w in range(0, rows, v)
    ]


# -- seeded suites --------------------------------------------------------------------


def kernel_suite(count: int, seed: int = 2024):
    """(matrix, dense columns) pairs with rows, cols <= 512 and density 0.005-0.3."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        rows = int(np.exp(rng.uniform(np.log(4), np.log(512))))
        cols = int(np.exp(rng.uniform(np.log(4), np.log(512))))
        density = float(np.exp(rng.uniform(np.log(0.005), np.log(0.3))))
        n = int(rng.choice([8, 16, 20, 32, 48]))
        out.append((generate_random_sparse(rows, cols, density, seed + i), n))
    return out


def structural_suite(count: int = 50, seed: int = 99):
    """Mid-sized matrices: rows and cols in 101-512, more than 1000 nonzeros."""
    rng = np.random.default_rng(seed)
    out = []
    i = 0
    while len(out) < count:
        rows = int(rng.integers(101, 513))
        cols = int(rng.integers(101, 513))
        density = float(np.exp(rng.uniform(np.log(0.005), np.log(0.3))))
        m = generate_random_sparse(rows, cols, density, seed + i)
        i += 1
        if m.nnz > 1000:
            out.append(m)
    return out


@pytest.fixture(scope="session")
def small_suite():
    return kernel_suite(30, seed=5)


# -- acceptance summary ------------------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
