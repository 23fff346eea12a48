"""Wall-clock micro-benchmarks for the down-samplers and k-NN."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import cpl
from .nn.knn import knn_build

OPS = ("cpl", "wcpl", "fps", "knn")
CSV_COLUMNS = ("op", "n", "d", "k", "repeats", "median_seconds")


@dataclass
class BenchRow:
    op: str
    n: int
    d: int
    k: int
    repeats: int
    median_seconds: float


def _workload(op: str, n: int, d: int, k: int, rng: np.random.Generator) -> Callable[[], object]:
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {OPS}")
    data = rng.standard_normal((n, d))
    if op in ("cpl", "wcpl"):
        return lambda: cpl.cpl_select(data, k, op)
    if op == "fps":
        return lambda: cpl.downsample_fps(data, k)
    return lambda: knn_build(data, k)


def time_op(op: str, n: int, d: int, k: int | None = None, repeats: int = 5, seed: int = 0) -> BenchRow:
    """Median wall time of ``repeats`` calls after one warm-up, pinned to one thread.

    ``k`` defaults to ``n // 4`` for the samplers and 10 neighbours for k-NN.
    """
    if k is None:
        k = min(10, n - 1) if op == "knn" else max(1, n // 4)
    fn = _workload(op, n, d, k, np.random.default_rng(seed))
    times = []
    with threadpool_limits(limits=1):
        fn()
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
    return BenchRow(op, n, d, k, repeats, float(np.median(times)))


def run_bench(ops: Sequence[str], ns: Sequence[int], ds: Sequence[int], repeats: int = 5,
              k: int | None = None, seed: int = 0) -> list[BenchRow]:
    """One row per (op, n, d) in grid order."""
    return [time_op(op, n, d, k, repeats, seed) for op in ops for n in ns for d in ds]


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.op, r.n, r.d, r.k, r.repeats, f"{r.median_seconds:.9f}"])


def doubling_ratios(rows: Sequence[BenchRow]) -> list[float]:
    """Successive time ratios for rows sorted by n (same op and d)."""
    rows = sorted(rows, key=lambda r: r.n)
    return [b.median_seconds / a.median_seconds for a, b in zip(rows, rows[1:])]
