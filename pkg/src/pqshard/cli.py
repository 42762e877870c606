"""Operator command line: dataset generation, training, index build,
sharding, serving, querying, benchmarking, recall evaluation, and capacity
planning.

All human-facing output is CSV/JSON (binary formats carry bulk data only),
so runs diff cleanly. Report commands optionally render the same rows to a
figure via --plot. Exit codes: 0 success, 2 configuration error, 3 I/O or
data-integrity error, 4 remote/protocol error.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import struct
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import dataset, ivf, memnode, oracle, perfmodel, pq
from .client import CoordinatorClient
from .coordinator import PayloadStore, load_cluster_config
from .errors import (
    ConfigurationError,
    CorruptionError,
    ProtocolError,
    RejectionError,
    SearchEngineError,
    TrainingError,
)
from .service import CoordinatorServer, MemoryNodeServer

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_REMOTE = 4


def _exit_codes(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigurationError, TrainingError, RejectionError) as exc:
            raise SystemExit(_fail(exc, EXIT_CONFIG))
        except ProtocolError as exc:
            raise SystemExit(_fail(exc, EXIT_REMOTE))
        except (CorruptionError, SearchEngineError, OSError) as exc:
            raise SystemExit(_fail(exc, EXIT_IO))

    return wrapper


def _fail(exc: Exception, code: int) -> int:
    click.echo(f"error: {exc}", err=True)
    return code


@click.group()
def main():
    """Distributed IVF-PQ vector search toolkit."""


@main.command()
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--count", "-n", type=int, required=True, help="Number of vectors.")
@click.option("--dim", "-d", type=int, required=True, help="Vector dimensionality.")
@click.option(
    "--distribution",
    type=click.Choice(dataset.DISTRIBUTIONS),
    default="gaussian",
    show_default=True,
)
@click.option("--clusters", type=int, default=64, show_default=True, help="Centers for 'clustered'.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--payload-file",
    type=click.Path(dir_okay=False),
    default=None,
    help="Also write a token-payload store with one deterministic payload per vector id.",
)
@_exit_codes
def gen(out, count, dim, distribution, clusters, seed, payload_file):
    """Generate a deterministic synthetic vector dataset."""
    vectors = dataset.generate_vectors(count, dim, distribution, seed=seed, clusters=clusters)
    dataset.write_vectors(out, vectors)
    digest = hashlib.sha256(Path(out).read_bytes()).hexdigest()
    click.echo(f"wrote {count} x {dim} {distribution} vectors to {out} (sha256 {digest[:16]})")
    if payload_file:
        store = PayloadStore(payload_file, create=True)
        for vid in range(count):
            store.append(vid, _synthetic_payload(vid, seed))
        store.close()
        click.echo(f"wrote {count} payloads to {payload_file}")


def _synthetic_payload(vector_id: int, seed: int) -> bytes:
    # Stand-in for the token ids of a neighbor's text chunk: 8 u16 tokens
    # derived from the id, stable across runs.
    h = hashlib.blake2b(f"{seed}:{vector_id}".encode(), digest_size=16).digest()
    return struct.pack("<8H", *(v % 50000 for v in struct.unpack("<8H", h)))


@main.command()
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--codebook-out", type=click.Path(dir_okay=False), required=True)
@click.option("--index-out", type=click.Path(dir_okay=False), required=True)
@click.option("--nlist", type=int, default=1024, show_default=True)
@click.option("--m", type=int, default=16, show_default=True, help="PQ code bytes per vector.")
@click.option("--ksub", type=int, default=256, show_default=True, help="Centroids per subspace.")
@click.option("--iters", type=int, default=25, show_default=True, help="K-means iteration cap.")
@click.option(
    "--train-size",
    type=int,
    default=65536,
    show_default=True,
    help="Training subsample size (0 trains on the full dataset).",
)
@click.option("--seed", type=int, default=0, show_default=True)
@_exit_codes
def build(dataset_path, codebook_out, index_out, nlist, m, ksub, iters, train_size, seed):
    """Train quantizers on a dataset and build the IVF-PQ index."""
    vectors = dataset.read_vectors(dataset_path)
    n = len(vectors)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if train_size and 0 < train_size < n:
        sample = vectors[rng.choice(n, size=train_size, replace=False)]
    else:
        sample = vectors
    t0 = time.monotonic()
    quantizer = ivf.train_ivf(sample, nlist=nlist, kmeans_iters=iters, seed=seed)
    labels = ivf.assign_batch(quantizer, sample)
    codebook = pq.train_pq(
        sample - quantizer.centroids[labels], num_subspaces=m, num_centroids=ksub,
        kmeans_iters=iters, seed=seed + 1,
    )
    index = ivf.build_index(np.arange(n, dtype=np.uint64), vectors, quantizer, codebook)
    pq.save_codebook(codebook, codebook_out)
    ivf.save_index(index, index_out)
    click.echo(
        f"built index: {n} vectors, nlist={nlist}, m={m}, ksub={ksub} "
        f"in {time.monotonic() - t0:.1f}s -> {index_out}, {codebook_out}"
    )


@main.command()
@click.argument("index_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--codebook", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--nodes", type=int, default=1, show_default=True)
@click.option("--channels", type=int, default=4, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option(
    "--frequencies",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="CSV of list_id,count enabling frequency-aware placement.",
)
@_exit_codes
def shard(index_path, codebook, nodes, channels, out_dir, frequencies):
    """Split an index into per-node shard files."""
    cb = pq.load_codebook(codebook)
    index = ivf.load_index(index_path, cb)
    freq = None
    if frequencies:
        freq = np.zeros(index.nlist, dtype=np.float64)
        with open(frequencies) as f:
            for row in csv.reader(f):
                if not row or row[0] == "list_id":
                    continue
                freq[int(row[0])] = float(row[1])
    shards = memnode.shard_partition(index, nodes, channels, frequencies=freq)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in shards:
        path = out / f"shard_{s.node_id:04d}.cshd"
        memnode.save_shard(s, path)
        click.echo(f"wrote {path} ({s.size} entries)")


def _wait_forever(server, what):
    click.echo(f"{what} listening on {server.address}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()


@main.command("serve-mem")
@click.argument("shard_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--codebook", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--quantizer", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Index file; only the centroid header is read.")
@click.option("--listen", default="127.0.0.1:9301", show_default=True)
@click.option("--ahpq-target", type=float, default=0.99, show_default=True,
              help="Per-query exactness target for truncated queue sizing.")
@click.option("--exact", is_flag=True, help="Force full-length level-1 queues.")
@_exit_codes
def serve_mem(shard_path, codebook, quantizer, listen, ahpq_target, exact):
    """Serve one shard as a memory node."""
    cb = pq.load_codebook(codebook)
    quant = ivf.load_quantizer(quantizer)
    sh = memnode.load_shard(shard_path, cb, quant)
    host, port = listen.rsplit(":", 1)
    server = MemoryNodeServer(sh, host=host, port=int(port), target_prob=ahpq_target, exact=exact)
    _wait_forever(server, f"memory node {sh.node_id}")


@main.command("serve-coord")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--listen", default=None, help="Override the config listen address.")
@_exit_codes
def serve_coord(config_path, listen):
    """Serve the cluster coordinator from a JSON config."""
    config = load_cluster_config(config_path)
    host = port = None
    if listen:
        host, p = listen.rsplit(":", 1)
        port = int(p)
    server = CoordinatorServer(config, host=host, port=port)
    _wait_forever(server, "coordinator")


@main.command()
@click.argument("coordinator", type=str)
@click.argument("query_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--quantizer", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--k", type=int, default=100, show_default=True)
@click.option("--nprobe", type=int, default=32, show_default=True)
@click.option("--payloads", is_flag=True, help="Request token payloads (hex column).")
@click.option("--out", type=click.Path(dir_okay=False), default="-", show_default=True)
@click.option("--timeout-ms", type=float, default=5000.0, show_default=True)
@_exit_codes
def query(coordinator, query_file, quantizer, k, nprobe, payloads, out, timeout_ms):
    """Run queries from a vector file against a coordinator; emit CSV."""
    quant = ivf.load_quantizer(quantizer)
    queries = dataset.read_vectors(query_file)
    client = CoordinatorClient(coordinator, timeout_ms=timeout_ms)
    rows = []
    try:
        for qi, vec in enumerate(queries):
            probe = ivf.scan_index(quant, vec, nprobe)
            ids, dists, pls = client.search(qi, vec, probe, k, payload_requested=payloads)
            for rank in range(len(ids)):
                row = [qi, rank, int(ids[rank]), f"{float(dists[rank]):.6f}"]
                if payloads:
                    row.append(pls[rank].hex() if pls else "")
                rows.append(row)
    finally:
        client.close()
    header = ["query", "rank", "vector_id", "distance"] + (["payload"] if payloads else [])
    _write_csv(out, header, rows)


def _write_csv(out, header, rows):
    if out == "-":
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    else:
        with open(out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)


@main.command()
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("query_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_exit_codes
def truth(dataset_path, query_file, k, out):
    """Compute exact-KNN ground truth for a query file (brute force)."""
    db = dataset.read_vectors(dataset_path)
    queries = dataset.read_vectors(query_file)
    gt = oracle.exact_knn(db, queries, k)
    oracle.save_ground_truth(gt, out)
    click.echo(f"wrote ground truth for {len(queries)} queries (k={k}) to {out}")


@main.command()
@click.argument("coordinator", type=str)
@click.option("--quantizer", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--batch-sizes", default="1,4,16", show_default=True)
@click.option("--queries", type=int, default=256, show_default=True, help="Queries per batch size.")
@click.option("--k", type=int, default=100, show_default=True)
@click.option("--nprobe", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="-", show_default=True)
@click.option("--plot", type=click.Path(dir_okay=False), default=None)
@click.option("--timeout-ms", type=float, default=5000.0, show_default=True)
@_exit_codes
def bench(coordinator, quantizer, batch_sizes, queries, k, nprobe, seed, out, plot, timeout_ms):
    """Measure retrieval latency/throughput per batch size (feeds the
    retrieval latency tables of the planning model)."""
    quant = ivf.load_quantizer(quantizer)
    sizes = [int(s) for s in batch_sizes.split(",") if s]
    vecs = dataset.generate_vectors(queries, quant.dim, "gaussian", seed=seed)
    probes = [ivf.scan_index(quant, v, nprobe) for v in vecs]
    client = CoordinatorClient(coordinator, timeout_ms=timeout_ms)
    rows = []
    try:
        for batch in sizes:
            lat_ms = np.zeros(queries)
            batch_ms = []

            def one(i):
                t0 = time.monotonic()
                client.search(i, vecs[i], probes[i], k)
                lat_ms[i] = (time.monotonic() - t0) * 1000.0

            wall0 = time.monotonic()
            with ThreadPoolExecutor(max_workers=batch) as pool:
                for start in range(0, queries, batch):
                    wave = range(start, min(start + batch, queries))
                    t0 = time.monotonic()
                    list(pool.map(one, wave))
                    batch_ms.append((time.monotonic() - t0) * 1000.0)
            wall = time.monotonic() - wall0
            rows.append(
                {
                    "batch": batch,
                    "queries": queries,
                    "mean_ms": float(lat_ms.mean()),
                    "p50_ms": float(np.percentile(lat_ms, 50)),
                    "p95_ms": float(np.percentile(lat_ms, 95)),
                    "p99_ms": float(np.percentile(lat_ms, 99)),
                    "batch_p50_ms": float(np.percentile(batch_ms, 50)),
                    "qps": queries / wall,
                }
            )
    finally:
        client.close()
    _write_dict_csv(out, rows)
    if plot:
        from . import plots

        plots.save_bench_figure(rows, plot)


def _write_dict_csv(out, rows):
    if not rows:
        return
    if out == "-":
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    else:
        with open(out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


@main.command()
@click.argument("results_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("ground_truth", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="-", show_default=True)
@click.option("--plot", type=click.Path(dir_okay=False), default=None)
@_exit_codes
def recall(results_csv, ground_truth, out, plot):
    """Score a query-results CSV against ground truth (R@K and R1@K)."""
    gt = oracle.load_ground_truth(ground_truth)
    per_query: dict[int, list[int]] = {}
    with open(results_csv) as f:
        for row in csv.DictReader(f):
            per_query.setdefault(int(row["query"]), []).append(int(row["vector_id"]))
    if len(per_query) != gt.ids.shape[0]:
        raise ConfigurationError(
            f"results cover {len(per_query)} queries but ground truth has {gt.ids.shape[0]}"
        )
    results = [np.array(per_query[i], dtype=np.uint64) for i in sorted(per_query)]
    metrics = {
        f"R@{gt.k}": oracle.recall_at_k(results, gt, gt.k),
        f"R1@{gt.k}": oracle.recall1_at_k(results, gt),
    }
    _write_csv(out, ["metric", "value"], [[name, f"{v:.6f}"] for name, v in metrics.items()])
    if plot:
        from . import plots

        plots.save_recall_figure(metrics, plot)


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="-", show_default=True)
@click.option("--plot", type=click.Path(dir_okay=False), default=None)
@click.option("--scaling-out", type=click.Path(dir_okay=False), default=None,
              help="Also sweep node counts if the scenario carries a latency pool.")
@click.option("--scaling-plot", type=click.Path(dir_okay=False), default=None)
@_exit_codes
def plan(scenario, out, plot, scaling_out, scaling_plot):
    """Sweep accelerator ratios (and optionally node counts) for a scenario."""
    with open(scenario) as f:
        sc = json.load(f)
    try:
        total = int(sc["total"])
        intervals = [int(v) for v in _as_list(sc["i"])]
        batches = [int(v) for v in _as_list(sc["b"])]
        li = _as_table(sc["L_I_table"])
        lr = _as_table(sc["L_R_table"])
    except KeyError as exc:
        raise ConfigurationError(f"scenario is missing field {exc}") from exc
    rows = perfmodel.ratio_sweep(total, intervals, batches, li, lr)
    _write_dict_csv(out, rows)
    if plot:
        from . import plots

        plots.save_plan_figure(rows, plot)
    if scaling_out or scaling_plot:
        pool = sc.get("latency_pool_ms")
        if not pool:
            raise ConfigurationError("scenario has no latency_pool_ms for a scaling sweep")
        node_counts = [int(n) for n in sc.get("node_counts", [1, 2, 4, 8, 16])]
        srows = []
        for n in node_counts:
            res = perfmodel.scale_latency(
                perfmodel.ScalingInputs(
                    pool_ms=np.asarray(pool, dtype=np.float64),
                    num_nodes=n,
                    hop_latency_us=float(sc.get("hop_latency_us", perfmodel.DEFAULT_HOP_LATENCY_US)),
                    trials=int(sc.get("trials", 10000)),
                    seed=int(sc.get("seed", 0)),
                )
            )
            srows.append(
                {
                    "num_nodes": n,
                    "median_ms": res.median_ms,
                    "p99_ms": res.p99_ms,
                    "overhead_ms": res.overhead_ms,
                }
            )
        if scaling_out:
            _write_dict_csv(scaling_out, srows)
        if scaling_plot:
            from . import plots

            plots.save_scaling_figure(srows, scaling_plot)


def _as_list(value):
    return value if isinstance(value, list) else [value]


def _as_table(value):
    if isinstance(value, dict):
        return {int(k): float(v) for k, v in value.items()}
    return float(value)


if __name__ == "__main__":
    main()
