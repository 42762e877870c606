"""Analytic capacity models for a disaggregated serving fleet.

Two questions are answered without hardware: how to split a fixed budget
of accelerators between inference and retrieval (the system generates
tokens at the slower of the two pipelines), and how single-node query
latency extrapolates to an N-node fan-out (max of N sampled latencies plus
a tree-shaped broadcast/reduce network overhead at a fixed per-hop cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigurationError

# Latency per batch in milliseconds: either a constant or a {batch: ms} table.
LatencyTable = float | int | Mapping[int, float]

DEFAULT_HOP_LATENCY_US = 10.0


def _latency_ms(table: LatencyTable, batch: int) -> float:
    if isinstance(table, (int, float)):
        value = float(table)
    else:
        if batch not in table:
            raise ConfigurationError(f"latency table has no entry for batch size {batch}")
        value = float(table[batch])
    if value <= 0 or not math.isfinite(value):
        raise ConfigurationError(f"latency must be positive and finite, got {value}")
    return value


@dataclass(frozen=True)
class ThroughputInputs:
    interval: int  # tokens generated per retrieval
    batch: int
    n_inference: int
    n_retrieval: int
    inference_latency: LatencyTable  # ms per batch step
    retrieval_latency: LatencyTable  # ms per retrieval batch

    def __post_init__(self):
        if self.interval < 1 or self.batch < 1:
            raise ConfigurationError("interval and batch must be >= 1")
        if self.n_inference < 1 or self.n_retrieval < 1:
            raise ConfigurationError("both accelerator counts must be >= 1")


def inference_throughput(inputs: ThroughputInputs) -> float:
    """Tokens/sec the inference side sustains: each accelerator produces
    interval * batch tokens per (interval inference steps + one retrieval
    it must wait out)."""
    li = _latency_ms(inputs.inference_latency, inputs.batch)
    lr = _latency_ms(inputs.retrieval_latency, inputs.batch)
    period_s = (inputs.interval * li + lr) / 1000.0
    return inputs.interval * inputs.batch * inputs.n_inference / period_s


def retrieval_throughput(inputs: ThroughputInputs) -> float:
    """Tokens/sec the retrieval side can back: each retrieval of one batch
    unlocks interval * batch tokens."""
    lr = _latency_ms(inputs.retrieval_latency, inputs.batch)
    return inputs.interval * inputs.batch * inputs.n_retrieval / (lr / 1000.0)


def system_throughput(inputs: ThroughputInputs) -> float:
    """The system generates at the slower of the two pipelines."""
    return min(inference_throughput(inputs), retrieval_throughput(inputs))


def optimal_ratio(
    total: int,
    interval: int,
    batch: int,
    inference_latency: LatencyTable,
    retrieval_latency: LatencyTable,
) -> tuple[int, float]:
    """Exhaustively sweep the accelerator split; returns (best n_inference,
    best tokens/sec). Ties prefer the smaller inference count."""
    if total < 2:
        raise ConfigurationError("need at least two accelerators to split")
    best_n, best_th = 1, -1.0
    for n_inf in range(1, total):
        th = system_throughput(
            ThroughputInputs(
                interval=interval,
                batch=batch,
                n_inference=n_inf,
                n_retrieval=total - n_inf,
                inference_latency=inference_latency,
                retrieval_latency=retrieval_latency,
            )
        )
        if th > best_th:
            best_n, best_th = n_inf, th
    return best_n, best_th


@dataclass(frozen=True)
class ScalingInputs:
    pool_ms: np.ndarray  # measured single-node query latencies
    num_nodes: int
    hop_latency_us: float = DEFAULT_HOP_LATENCY_US
    trials: int = 10000
    seed: int = 0

    def __post_init__(self):
        pool = np.asarray(self.pool_ms, dtype=np.float64)
        if pool.size == 0:
            raise ConfigurationError("latency pool must be non-empty")
        if self.num_nodes < 1:
            raise ConfigurationError("num_nodes must be >= 1")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        object.__setattr__(self, "pool_ms", pool)


@dataclass(frozen=True)
class LatencyScaleResult:
    median_ms: float
    p99_ms: float
    overhead_ms: float


def network_overhead_ms(num_nodes: int, hop_latency_us: float = DEFAULT_HOP_LATENCY_US) -> float:
    """Deterministic broadcast+reduce cost: a binomial tree over N nodes is
    ceil(log2(N+1)) hops deep, paid once out and once back."""
    hops = math.ceil(math.log2(num_nodes + 1))
    return 2.0 * hops * hop_latency_us / 1000.0


def scale_latency(inputs: ScalingInputs) -> LatencyScaleResult:
    """Extrapolate the query latency distribution to an N-node fan-out.

    Every trial draws N latencies from the single-node pool with
    replacement and takes their maximum (the query completes when the
    slowest shard answers), plus the fixed tree overhead. Returns the
    empirical median and 99th percentile; deterministic for a fixed seed.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(inputs.seed)))
    picks = rng.integers(inputs.pool_ms.size, size=(inputs.trials, inputs.num_nodes))
    maxima = inputs.pool_ms[picks].max(axis=1)
    overhead = network_overhead_ms(inputs.num_nodes, inputs.hop_latency_us)
    total = maxima + overhead
    return LatencyScaleResult(
        median_ms=float(np.percentile(total, 50)),
        p99_ms=float(np.percentile(total, 99)),
        overhead_ms=overhead,
    )


def ratio_sweep(
    total: int,
    intervals: list[int],
    batches: list[int],
    inference_latency: LatencyTable,
    retrieval_latency: LatencyTable,
) -> list[dict]:
    """Rows for every (interval, batch, split): the CSV behind ratio plots."""
    rows = []
    for interval in intervals:
        for batch in batches:
            best_n, _ = optimal_ratio(total, interval, batch, inference_latency, retrieval_latency)
            for n_inf in range(1, total):
                inputs = ThroughputInputs(
                    interval=interval,
                    batch=batch,
                    n_inference=n_inf,
                    n_retrieval=total - n_inf,
                    inference_latency=inference_latency,
                    retrieval_latency=retrieval_latency,
                )
                rows.append(
                    {
                        "interval": interval,
                        "batch": batch,
                        "n_inference": n_inf,
                        "n_retrieval": total - n_inf,
                        "th_inference": inference_throughput(inputs),
                        "th_retrieval": retrieval_throughput(inputs),
                        "th_system": system_throughput(inputs),
                        "optimal": int(n_inf == best_n),
                    }
                )
    return rows
