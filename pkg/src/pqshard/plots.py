"""Matplotlib renderings of the CSV reports.

Every CLI report command emits machine-readable CSV; these helpers turn
the same rows into PNG/PDF figures when a --plot path is given. Kept out
of the core modules so importing the engine never drags in matplotlib.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_bench_figure(rows: list[dict], path) -> None:
    """Latency percentiles and throughput against batch size."""
    batches = [r["batch"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(batches, [r["p50_ms"] for r in rows], marker="o", label="p50")
    ax1.plot(batches, [r["p95_ms"] for r in rows], marker="s", label="p95")
    ax1.plot(batches, [r["p99_ms"] for r in rows], marker="^", label="p99")
    ax1.set_xlabel("batch size")
    ax1.set_ylabel("latency (ms)")
    ax1.set_xscale("log", base=2)
    ax1.legend()
    ax2.plot(batches, [r["qps"] for r in rows], marker="o", color="tab:green")
    ax2.set_xlabel("batch size")
    ax2.set_ylabel("queries/sec")
    ax2.set_xscale("log", base=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_plan_figure(rows: list[dict], path) -> None:
    """System throughput versus inference share, one curve per interval."""
    fig, ax = plt.subplots(figsize=(6, 4))
    intervals = sorted({(r["interval"], r["batch"]) for r in rows})
    total = max(r["n_inference"] + r["n_retrieval"] for r in rows)
    for interval, batch in intervals:
        pts = [r for r in rows if r["interval"] == interval and r["batch"] == batch]
        pts.sort(key=lambda r: r["n_inference"])
        xs = [r["n_inference"] / total for r in pts]
        ys = [r["th_system"] for r in pts]
        ax.plot(xs, ys, label=f"interval={interval}, batch={batch}")
        best = next(r for r in pts if r["optimal"])
        ax.plot(best["n_inference"] / total, best["th_system"], "k*", markersize=10)
    ax.set_xlabel("inference share of accelerators")
    ax.set_ylabel("tokens/sec")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_recall_figure(metrics: dict[str, float], path) -> None:
    """Bar chart of the recall report."""
    fig, ax = plt.subplots(figsize=(4, 3.5))
    names = list(metrics)
    values = [metrics[n] for n in names]
    ax.bar(names, values, color="tab:blue")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("recall")
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_scaling_figure(rows: list[dict], path) -> None:
    """Median and p99 extrapolated latency against node count."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ns = [r["num_nodes"] for r in rows]
    ax.plot(ns, [r["median_ms"] for r in rows], marker="o", label="median")
    ax.plot(ns, [r["p99_ms"] for r in rows], marker="s", label="p99")
    ax.set_xlabel("memory nodes")
    ax.set_ylabel("query latency (ms)")
    ax.set_xscale("log", base=2)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
