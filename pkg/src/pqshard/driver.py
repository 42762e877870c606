"""Mock token-generation client: a deterministic stub model that emits
query vectors, retrieves every `interval` tokens through the coordinator,
and records per-step latency.

There is no real language model here. Inference is a stub latency (the
driver sleeps for it and records the configured value), retrieval is the
real scan-probe-search round trip, and the two phases are strictly
serialized: generation waits for retrieval results before continuing.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .client import CoordinatorClient
from .dataset import read_vectors
from .errors import ConfigurationError
from .ivf import CoarseQuantizer, scan_index

TRACE_HEADER = ["step", "phase", "latency_ms", "ids"]


@dataclass(frozen=True)
class GenerationConfig:
    interval: int  # tokens between retrievals
    seq_len: int = 512
    batch: int = 1  # sequences generated concurrently
    k: int = 10
    nprobe: int = 32
    inference_ms: float = 0.0  # constant stub latency per step
    inference_jitter_ms: float = 0.0  # uniform +/- jitter, seeded
    payload_requested: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.interval < 1 or self.seq_len < 1 or self.batch < 1:
            raise ConfigurationError("interval, seq_len, and batch must be >= 1")
        if self.inference_ms < 0 or self.inference_jitter_ms < 0:
            raise ConfigurationError("stub latencies must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    step: int
    inference_ms: float
    retrieval_ms: float  # exactly 0.0 on non-retrieval steps
    retrieved_ids: tuple[int, ...]


@dataclass
class StepTrace:
    sequence_id: int
    steps: list[StepRecord] = field(default_factory=list)
    error: str | None = None
    started_at: float = 0.0
    finished_at: float = 0.0


class RandomVectorSource:
    """Seeded query vectors derived purely from (sequence_id, step)."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def vector(self, sequence_id: int, step: int) -> np.ndarray:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(sequence_id, step))
        rng = np.random.Generator(np.random.PCG64(ss))
        return rng.standard_normal(self.dim, dtype=np.float32)


class TraceVectorSource:
    """Replays queries from a vector file, cycling in (sequence, step) order."""

    def __init__(self, path):
        self.vectors = read_vectors(path)
        if len(self.vectors) == 0:
            raise ConfigurationError(f"{path}: empty vector trace")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, sequence_id: int, step: int) -> np.ndarray:
        return self.vectors[(sequence_id * 131071 + step) % len(self.vectors)]


def _stub_inference_ms(config: GenerationConfig, sequence_id: int, step: int) -> float:
    if config.inference_jitter_ms == 0.0:
        return config.inference_ms
    ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(7, sequence_id, step))
    rng = np.random.Generator(np.random.PCG64(ss))
    jitter = (2.0 * rng.random() - 1.0) * config.inference_jitter_ms
    return max(0.0, config.inference_ms + jitter)


def _run_sequence(
    config: GenerationConfig,
    client: CoordinatorClient,
    source,
    quantizer: CoarseQuantizer,
    sequence_id: int,
) -> StepTrace:
    trace = StepTrace(sequence_id=sequence_id, started_at=time.monotonic())
    for step in range(config.seq_len):
        inference_ms = _stub_inference_ms(config, sequence_id, step)
        if inference_ms > 0:
            time.sleep(inference_ms / 1000.0)
        retrieval_ms = 0.0
        ids: tuple[int, ...] = ()
        if step % config.interval == 0:
            try:
                vec = source.vector(sequence_id, step)
                t0 = time.monotonic()
                probe = scan_index(quantizer, vec, config.nprobe)
                result_ids, _, _ = client.search(
                    (sequence_id << 32) | step,
                    vec,
                    probe,
                    config.k,
                    payload_requested=config.payload_requested,
                )
                retrieval_ms = (time.monotonic() - t0) * 1000.0
                ids = tuple(int(v) for v in result_ids)
            except Exception as exc:  # noqa: BLE001 - sequence aborts with error trace
                trace.error = f"step {step}: {exc}"
                trace.finished_at = time.monotonic()
                return trace
        trace.steps.append(
            StepRecord(step=step, inference_ms=inference_ms, retrieval_ms=retrieval_ms, retrieved_ids=ids)
        )
    trace.finished_at = time.monotonic()
    return trace


def generate(
    config: GenerationConfig,
    coordinator_address: str,
    vector_source,
    quantizer: CoarseQuantizer,
    timeout_ms: float = 5000.0,
) -> list[StepTrace]:
    """Run `config.batch` sequences concurrently against one coordinator.

    Retrieval happens on steps where step % interval == 0, so each sequence
    performs ceil(seq_len / interval) retrievals. The index probe runs
    client-side (the driver owns the coarse quantizer), mirroring the
    deployment where index scanning lives with the model.
    """
    client = CoordinatorClient(coordinator_address, timeout_ms=timeout_ms)
    try:
        if config.batch == 1:
            return [_run_sequence(config, client, vector_source, quantizer, 0)]
        with ThreadPoolExecutor(max_workers=config.batch) as pool:
            futures = [
                pool.submit(_run_sequence, config, client, vector_source, quantizer, s)
                for s in range(config.batch)
            ]
            return [f.result() for f in futures]
    finally:
        client.close()


@dataclass(frozen=True)
class SummaryReport:
    sequences: int
    total_steps: int
    retrieval_steps: int
    wall_time_s: float
    tokens_per_sec: float
    inference_ms_p50: float
    inference_ms_p99: float
    retrieval_ms_p50: float
    retrieval_ms_p99: float
    step_ms_p50_retrieval: float  # inference + retrieval on retrieval steps
    step_ms_p50_other: float

    def rows(self) -> list[tuple[str, float]]:
        return [(name, getattr(self, name)) for name in self.__dataclass_fields__]


def _percentile(values: np.ndarray, q: float) -> float:
    return float(np.percentile(values, q)) if values.size else 0.0


def _is_retrieval_step(record: StepRecord) -> bool:
    return record.retrieval_ms > 0 or len(record.retrieved_ids) > 0


def summarize(traces: list[StepTrace]) -> SummaryReport:
    """Latency percentiles split by step kind, plus overall tokens/sec."""
    if not traces:
        raise ConfigurationError("cannot summarize zero traces")
    records = [r for t in traces for r in t.steps]
    if not records:
        raise ConfigurationError("traces contain no completed steps")
    inference = np.array([r.inference_ms for r in records])
    retrieval_steps = [r for r in records if _is_retrieval_step(r)]
    other_steps = [r for r in records if not _is_retrieval_step(r)]
    retrieval = np.array([r.retrieval_ms for r in retrieval_steps])
    wall = max(t.finished_at for t in traces) - min(t.started_at for t in traces)
    return SummaryReport(
        sequences=len(traces),
        total_steps=len(records),
        retrieval_steps=len(retrieval_steps),
        wall_time_s=wall,
        tokens_per_sec=len(records) / wall if wall > 0 else float("inf"),
        inference_ms_p50=_percentile(inference, 50),
        inference_ms_p99=_percentile(inference, 99),
        retrieval_ms_p50=_percentile(retrieval, 50),
        retrieval_ms_p99=_percentile(retrieval, 99),
        step_ms_p50_retrieval=_percentile(
            np.array([r.inference_ms + r.retrieval_ms for r in retrieval_steps]), 50
        ),
        step_ms_p50_other=_percentile(
            np.array([r.inference_ms + r.retrieval_ms for r in other_steps]), 50
        ),
    )


def write_trace_csv(traces: list[StepTrace], path) -> None:
    """One inference row and one retrieval row per step, sequences in order."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_HEADER)
        for trace in traces:
            for r in trace.steps:
                w.writerow([r.step, "inference", f"{r.inference_ms:.6f}", ""])
                w.writerow(
                    [r.step, "retrieval", f"{r.retrieval_ms:.6f}", ";".join(str(i) for i in r.retrieved_ids)]
                )


def expected_retrievals(config: GenerationConfig) -> int:
    return math.ceil(config.seq_len / config.interval)
