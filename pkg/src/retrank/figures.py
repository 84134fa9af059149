"""Figure rendering for report outputs.

Reports stay line-delimited; these helpers draw the companion PNGs next
to them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_recall_figure(recall_at: dict[int, float], path: str | Path) -> None:
    ks = sorted(recall_at)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [recall_at[k] for k in ks], "o-", color="tab:blue")
    ax.set_xlabel("K")
    ax.set_ylabel("Recall@K")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(ks)
    ax.set_title("Entry-level retrieval recall")
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_bench_figure(rows: list[dict], path: str | Path) -> None:
    scopes = [r["scope"] for r in rows]
    qps = [r["qps"] for r in rows]
    times = [r["total_retrieval_time_s"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(scopes, qps, "o-", color="tab:blue")
    ax1.set_xlabel("Reranking scope")
    ax1.set_ylabel("Queries per second")
    ax1.set_xscale("log")
    ax1.grid(True, alpha=0.3)
    ax1.set_title("Throughput vs scope")
    ax2.plot(scopes, times, "s-", color="tab:orange")
    ax2.set_xlabel("Reranking scope")
    ax2.set_ylabel("Total retrieval time (s)")
    ax2.set_xscale("log")
    ax2.grid(True, alpha=0.3)
    ax2.set_title("Total time vs scope")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
