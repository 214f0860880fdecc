"""Command-line entry point.

Exit codes: 0 success, 1 partial or empty input, 2 input error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ArgumentError, FormatError, ParseError, ShapeError
from .formats import (
    encode_mebcrs,
    encode_srbcrs,
    footprint_bytes,
    partition_windows,
    write_container,
)
from .kernels import KernelConfig, KernelStats, SddmmOperands, sddmm, spmm, spmm_baseline16
from .matrix_io import (
    SMALL_INTS,
    CsrMatrix,
    generate_random_sparse,
    random_dense,
    read_matrix_market,
    to_dense,
)
from .tcu import Precision

log = logging.getLogger("tcsparse")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INPUT = 2
EXIT_VERIFY = 3

# relative tolerance of uniform-real runs against a float64 oracle
REAL_TOLERANCE = {Precision.FP16: 1e-2, Precision.TF32: 1e-3}


class InputError(Exception):
    pass


def _load(path) -> CsrMatrix:
    try:
        return read_matrix_market(path)
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None


def _small_int_values(m: CsrMatrix, seed: int) -> CsrMatrix:
    """Keep integral values up to 16 in magnitude, otherwise redraw from {-4..4}\\{0}."""
    v = m.values
    if np.all(v == np.round(v)) and np.all(np.abs(v) <= 16):
        return m
    log.info("replacing non-small-integer values with seeded small integers")
    rng = np.random.default_rng(seed)
    return m.with_values(rng.choice(SMALL_INTS, size=m.nnz))


def _real_values(m: CsrMatrix, seed: int) -> CsrMatrix:
    rng = np.random.default_rng(seed)
    return m.with_values(rng.uniform(-1.0, 1.0, size=m.nnz))


def _compare(out, ref, bound, mode: str, p: Precision) -> tuple[bool, float]:
    diff = np.abs(np.asarray(out, dtype=np.float64) - ref)
    max_diff = float(diff.max()) if diff.size else 0.0
    if mode == "int":
        return max_diff == 0.0, max_diff
    ok = bool(np.all(diff <= REAL_TOLERANCE[p] * bound + 1e-30))
    return ok, max_diff


def _emit(rows: list[dict], fmt: str, output) -> None:
    if fmt == "json":
        data = json.dumps(rows if len(rows) != 1 else rows[0], indent=2) + "\n"
    else:
        buf = io.StringIO()
        fields = list(rows[0]) if rows else []
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        data = buf.getvalue()
    _write(data.encode(), output)


def _write(data: bytes, output) -> None:
    if output in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(output).write_bytes(data)


# -- commands -------------------------------------------------------------------------


def run_convert(args) -> int:
    m = _load(args.input)
    p = Precision.parse(args.precision)
    me = encode_mebcrs(m, p)
    sr = encode_srbcrs(m, p)
    write_container(me, args.output)
    if args.json:
        Path(args.json).write_text(me.to_json(indent=1))
    me_ptr = (me.num_windows + 1) * 4
    sr_ptr = 2 * sr.num_windows * 4
    me_total, sr_total = footprint_bytes(me), footprint_bytes(sr)
    reduction = 1 - me_total / sr_total if sr_total else 0.0
    print(f"windows={me.num_windows} vectors={me.num_vectors} padded_vectors={sr.num_vectors}")
    print(f"pointer_bytes me={me_ptr} sr={sr_ptr}")
    print(f"footprint_bytes me={me_total} sr={sr_total} reduction={reduction:.4f}")
    return EXIT_OK


def run_spmm(args) -> int:
    m = _load(args.input)
    p = Precision.parse(args.precision)
    m = _small_int_values(m, args.seed) if args.values == "int" else _real_values(m, args.seed)
    dense = random_dense(m.cols, args.n, args.seed + 1, args.values)
    stats = KernelStats()
    if args.vector == 8:
        cfg = KernelConfig(p, 8, args.mapping, args.n)
        out = spmm(encode_mebcrs(m, p), dense, cfg, stats)
    else:
        cfg = KernelConfig(p, 16, args.mapping, args.n)
        out = spmm_baseline16(m, dense, cfg, stats)

    part8 = partition_windows(m, 8, p.k)
    part16 = partition_windows(m, 16, p.k)
    row = {
        "rows": m.rows,
        "cols": m.cols,
        "nnz": m.nnz,
        "precision": p.value,
        "vector_height": args.vector,
        "mapping": cfg.mapping.value,
        "n_cols": args.n,
        "mma_count": stats.mma_count,
        "mma_swap8": analysis.count_mma(part8, args.n, analysis.Strategy.SWAP8),
        "mma_baseline16": analysis.count_mma(part16, args.n, analysis.Strategy.BASELINE16),
        "transactions": (
            analysis.dense_transactions(part8, args.n, analysis.Strategy.SWAP8, p, cfg.mapping)
            if args.vector == 8
            else analysis.dense_transactions(part16, args.n, analysis.Strategy.BASELINE16, p)
        ),
    }
    status = EXIT_OK
    if args.verify:
        dm = to_dense(m)
        ref = dm @ dense
        ok, max_diff = _compare(out, ref, np.abs(dm) @ np.abs(dense), args.values, p)
        row["verified"] = "exact" if ok and max_diff == 0 else ("ok" if ok else "MISMATCH")
        row["max_abs_diff"] = max_diff
        if not ok:
            status = EXIT_VERIFY
    _emit([row], args.format, args.output)
    return status


def run_sddmm(args) -> int:
    m = _load(args.input)
    p = Precision.parse(args.precision)
    mask = encode_mebcrs(m.with_values(np.ones(m.nnz)), p)
    a = random_dense(m.rows, args.n, args.seed, args.values)
    b = random_dense(args.n, m.cols, args.seed + 1, args.values)
    stats = KernelStats()
    out = sddmm(SddmmOperands(mask, a, b), KernelConfig(p, 8), stats)
    row = {
        "rows": m.rows,
        "cols": m.cols,
        "nnz": m.nnz,
        "precision": p.value,
        "k_dim": args.n,
        "mma_count": stats.mma_count,
        "written": stats.extra.get("written", 0),
    }
    status = EXIT_OK
    if args.verify:
        r = m.row_indices()
        c = m.col_idx
        ref = np.einsum("ij,ji->i", a[r], b[:, c])
        bound = np.einsum("ij,ji->i", np.abs(a[r]), np.abs(b[:, c]))
        got = out.values_at(r, c)
        ok, max_diff = _compare(got, ref, bound, args.values, p)
        row["verified"] = "exact" if ok and max_diff == 0 else ("ok" if ok else "MISMATCH")
        row["max_abs_diff"] = max_diff
        if not ok:
            status = EXIT_VERIFY
    _emit([row], args.format, args.output)
    return status


def _collect_inputs(args) -> list[Path]:
    paths = [Path(p) for p in (args.input or [])]
    if args.dir:
        d = Path(args.dir)
        if not d.is_dir():
            raise InputError(f"{d}: not a directory")
        paths.extend(sorted(p for p in d.iterdir() if p.suffix == ".mtx"))
    return paths


def _batch(args, analyze):
    """Analyze every input in order; unreadable files are logged and skipped."""
    precisions = [Precision.parse(args.precision)] if args.precision else list(Precision)
    vectors = [args.vector] if args.vector else [8, 16]
    sources = [(p.stem, p) for p in _collect_inputs(args)]
    if args.generate:
        sources.extend((f"gen{i:03d}", i) for i in range(args.generate))
    reports, failures = [], 0
    for name, src in sources:
        try:
            if isinstance(src, Path):
                m = _load(src)
            else:
                m = _generated(src, args.seed)
            reports.append(analyze(m, name, precisions, vectors))
        except (InputError, FormatError, ShapeError) as exc:
            failures += 1
            log.warning("skipping %s: %s", name, exc)
    return reports, failures, len(sources)


def _generated(i: int, seed: int) -> CsrMatrix:
    rng = np.random.default_rng(seed + i)
    rows = int(rng.integers(16, 257))
    cols = int(rng.integers(16, 257))
    density = float(rng.uniform(0.01, 0.2))
    return generate_random_sparse(rows, cols, density, seed + i)


def _exit_for(reports, failures, total) -> int:
    if total == 0 or not reports:
        return EXIT_PARTIAL
    return EXIT_PARTIAL if failures else EXIT_OK


def run_stats(args) -> int:
    def analyze(m, name, precisions, vectors):
        return analysis.analyze_matrix(m, name, args.n, precisions, vectors)

    reports, failures, total = _batch(args, analyze)
    _write(analysis.emit_report(reports, args.format), args.output)
    return _exit_for(reports, failures, total)


def run_bench(args) -> int:
    """Structural metrics plus executed, verified kernels for every configuration."""
    verified_rows = []
    status = {"mismatch": False}

    def analyze(m, name, precisions, vectors):
        rep = analysis.analyze_matrix(m, name, args.n, precisions, vectors)
        m_int = _small_int_values(m, args.seed)
        dm = to_dense(m_int)
        for p in precisions:
            me = encode_mebcrs(m_int, p)
            for n in args.n:
                dense = random_dense(m.cols, n, args.seed + 1)
                ref = dm @ dense
                for v in vectors:
                    stats = KernelStats()
                    if v == 8:
                        out = spmm(me, dense, KernelConfig(p, 8, args.mapping), stats)
                    else:
                        out = spmm_baseline16(m_int, dense, KernelConfig(p, 16), stats)
                    ok = bool(np.array_equal(out, ref))
                    status["mismatch"] |= not ok
                    verified_rows.append((name, v, p.value, n, stats.mma_count, ok))
        return rep

    reports, failures, total = _batch(args, analyze)
    rows = []
    extra = {(r[0], r[1], r[2], r[3]): r[4:] for r in verified_rows}
    for rep in reports:
        for row in rep.rows_out():
            measured, ok = extra[(row["matrix_id"], row["vector_height"], row["precision"], row["n_cols"])]
            row = {c: row[c] for c in analysis.CSV_COLUMNS}
            row["measured_mma"] = measured
            row["verified"] = "exact" if ok else "MISMATCH"
            rows.append(row)
    if rows:
        _emit(rows, args.format, args.output)
    elif args.format == "csv":
        header = ",".join(analysis.CSV_COLUMNS + ("measured_mma", "verified"))
        _write((header + "\n").encode(), args.output)
    else:
        _write(b"[]\n", args.output)
    if status["mismatch"]:
        return EXIT_VERIFY
    return _exit_for(reports, failures, total)


# -- argument parsing ---------------------------------------------------------------------


def _n_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad N list {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("N values must be positive")
    return values


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcsparse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, precision_default="fp16"):
        sp.add_argument("--precision", choices=["fp16", "tf32"], default=precision_default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--format", choices=["csv", "json"], default="csv")

    sp = sub.add_parser("convert", help="MatrixMarket -> ME-BCRS container")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--precision", choices=["fp16", "tf32"], default="fp16")
    sp.add_argument("--json", help="also write a JSON debug dump here")
    sp.set_defaults(func=run_convert)

    sp = sub.add_parser("spmm", help="run SpMM on one matrix")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--n", type=_positive, default=16, help="dense matrix columns")
    sp.add_argument("--vector", type=int, choices=[8, 16], default=8)
    sp.add_argument("--mapping", choices=["direct", "coalesced"], default="coalesced")
    sp.add_argument("--values", choices=["int", "real"], default="int")
    sp.add_argument("--verify", action="store_true")
    sp.add_argument("--output")
    sp.set_defaults(func=run_spmm)

    sp = sub.add_parser("sddmm", help="run SDDMM sampled by one matrix's pattern")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--n", type=_positive, default=32, help="inner (K) dimension")
    sp.add_argument("--values", choices=["int", "real"], default="int")
    sp.add_argument("--verify", action="store_true")
    sp.add_argument("--output")
    sp.set_defaults(func=run_sddmm)

    for name, func, help_ in (
        ("stats", run_stats, "structural metrics for a set of matrices"),
        ("bench", run_bench, "metrics plus executed and verified kernels"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--precision", choices=["fp16", "tf32"], default=None,
                        help="restrict to one precision (default: both)")
        sp.add_argument("--vector", type=int, choices=[8, 16], default=None,
                        help="restrict to one vector height (default: both)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--format", choices=["csv", "json"], default="csv")
        sp.add_argument("--dir")
        sp.add_argument("--input", action="append")
        sp.add_argument("--generate", type=int, default=0, metavar="COUNT",
                        help="add COUNT seeded random matrices")
        sp.add_argument("--n", type=_n_list, default=[16, 128], help="comma-separated N values")
        sp.add_argument("--output")
        if name == "bench":
            sp.add_argument("--mapping", choices=["direct", "coalesced"], default="coalesced")
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArgumentError, ShapeError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
