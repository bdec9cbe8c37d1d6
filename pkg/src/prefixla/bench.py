"""Desk-scale latency harness for the attention implementations.

Measures prefill wall time on CPU, single-threaded by default so scaling
exponents come out clean: the recurrent and chunked implementations grow
~linearly in sequence length while the naive softmax oracle grows
~quadratically.  Absolute GPU-kernel numbers are out of reach here; the
asymptotic shape is the claim under test.

Timing covers only the attention computation: input generation and feature
map construction happen outside the clocked region, warm-up iterations are
discarded, and the reported latency is the median over trials on a
monotonic clock.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from statistics import median
from typing import Callable, Sequence

import numpy as np

from prefixla.featmaps import Taylor2Map
from prefixla.linatt import la_parallel, la_recurrent
from prefixla.pla import PLAInputs, two_pass_prefill

IMPL_NAMES = ("la_parallel", "la_recurrent", "pla_two_pass", "naive_softmax_oracle")


@dataclass(frozen=True)
class BenchRecord:
    impl: str
    N: int
    M: int
    B: int
    d: int
    D: int
    latency_ms: float
    trials: int


def naive_softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Quadratic causal softmax attention; the O(N^2) scaling baseline."""
    scores = (q @ k.T) / math.sqrt(q.shape[1])
    n = scores.shape[0]
    scores = np.where(np.tril(np.ones((n, n), dtype=bool)), scores, -np.inf)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ v


def _make_inputs(n: int, batch: int, d: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d)
    q = rng.standard_normal((batch, n, d)) * scale
    k = rng.standard_normal((batch, n, d)) * scale
    v = rng.standard_normal((batch, n, d))
    return q, k, v


def _runner(impl: str, fmap, m: int) -> Callable:
    if impl == "la_parallel":
        return lambda q, k, v: la_parallel(q, k, v, fmap, causal=True)
    if impl == "la_recurrent":
        return lambda q, k, v: la_recurrent(q, k, v, fmap)
    if impl == "pla_two_pass":
        def run(q, k, v):
            inputs = PLAInputs(q, k, v, k[:m], v[:m])
            return two_pass_prefill(inputs, fmap)[0]
        return run
    if impl == "naive_softmax_oracle":
        return naive_softmax_attention
    raise ValueError(f"unknown implementation {impl!r}")


def check_determinism(n: int, d: int, seed: int = 7, tol: float = 1e-10) -> None:
    """All equivalent linear implementations must agree before timing starts.

    la_parallel, la_recurrent, and pla_two_pass at M=0 compute the same
    function; the softmax oracle computes a different one and is only checked
    for run-to-run determinism.
    """
    fmap = Taylor2Map(d)
    q, k, v = _make_inputs(n, 1, d, seed)
    ref = la_parallel(q[0], k[0], v[0], fmap, causal=True)
    scale = np.abs(ref).max()
    for impl in ("la_recurrent", "pla_two_pass"):
        out = _runner(impl, fmap, 0)(q[0], k[0], v[0])
        err = np.abs(out - ref).max() / scale
        if err > tol:
            raise AssertionError(f"{impl} diverges from la_parallel: rel err {err:.3g}")
    s1 = naive_softmax_attention(q[0], k[0], v[0])
    s2 = naive_softmax_attention(q[0], k[0], v[0])
    if not np.array_equal(s1, s2):
        raise AssertionError("softmax oracle is not deterministic")


def bench_prefill(impls: Sequence[str], n_list: Sequence[int], batch: int,
                  d: int, trials: int = 5, warmup: int = 1,
                  m_fraction: float = 0.5, seed: int = 7,
                  single_thread: bool = True) -> list[BenchRecord]:
    """Median prefill wall time per (impl, N); empty inputs yield no records."""
    if trials < 5:
        raise ValueError("need at least 5 trials for a stable median")
    for impl in impls:
        if impl not in IMPL_NAMES:
            raise ValueError(f"unknown implementation {impl!r}")
    if batch <= 0 or not n_list:
        return []
    records = []
    limiter = None
    if single_thread:
        try:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(limits=1)
        except Exception:
            pass
    try:
        if any(i != "naive_softmax_oracle" for i in impls):
            check_determinism(min(min(n_list), 256), d, seed)
        fmap = Taylor2Map(d)
        for n in n_list:
            q, k, v = _make_inputs(n, batch, d, seed)
            for impl in impls:
                m = int(n * m_fraction) if impl == "pla_two_pass" else 0
                run = _runner(impl, fmap, m)
                times = []
                for t in range(warmup + trials):
                    t0 = time.perf_counter()
                    for b in range(batch):
                        run(q[b], k[b], v[b])
                    elapsed = (time.perf_counter() - t0) * 1e3
                    if t >= warmup:
                        times.append(elapsed)
                records.append(BenchRecord(impl, n, m, batch, d,
                                           fmap.feature_dim, median(times), trials))
    finally:
        if limiter is not None:
            limiter.unregister()
    return records


def scaling_exponent(records: Sequence[BenchRecord], impl: str) -> float:
    """Least-squares slope of log latency vs log N for one implementation."""
    pts = sorted((r.N, r.latency_ms) for r in records if r.impl == impl)
    if len(pts) < 2:
        raise ValueError(f"need at least two sizes for {impl!r}")
    logn = np.log([p[0] for p in pts])
    logt = np.log([p[1] for p in pts])
    return float(np.polyfit(logn, logt, 1)[0])


BENCH_COLUMNS = ["impl", "N", "M", "B", "d", "D", "latency_ms", "trials"]


def write_bench_csv(records: Sequence[BenchRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for r in records:
            writer.writerow([r.impl, r.N, r.M, r.B, r.d, r.D,
                             repr(r.latency_ms), r.trials])


def read_bench_csv(path: str) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != BENCH_COLUMNS:
            raise ValueError(f"malformed bench CSV header: {reader.fieldnames}")
        return [BenchRecord(row["impl"], int(row["N"]), int(row["M"]),
                            int(row["B"]), int(row["d"]), int(row["D"]),
                            float(row["latency_ms"]), int(row["trials"]))
                for row in reader]


# --- plot-data files for the data-order figure ---

def report_data_order(runs_csv: str, out_dir: str) -> dict:
    """Split a sweep CSV into three plot-data files keyed by state size.

    panel_a_longer: accuracy on the |A|>|B| slice; panel_b_longer: accuracy
    on the |B|>|A| slice; panel_gap: their difference (a_longer - b_longer)
    per point.
    """
    import os

    from prefixla.toy import read_sweep_csv

    rows = read_sweep_csv(runs_csv)
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, f"panel_{name}.csv")
             for name in ("a_longer", "b_longer", "gap")}
    values = {
        # slice |A|>|B| is where B is the smaller set
        "a_longer": lambda r: r["acc_b_smaller"],
        "b_longer": lambda r: r["acc_a_smaller"],
        "gap": lambda r: r["acc_b_smaller"] - r["acc_a_smaller"],
    }
    for name, path in paths.items():
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state_bytes", "causal", "value"])
            for r in rows:
                writer.writerow([r["state_bytes"], r["causal"],
                                 repr(values[name](r))])
    return paths
