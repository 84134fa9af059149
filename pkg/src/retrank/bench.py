"""Throughput benchmark: end-to-end retrieval plus rerank, batch size 1.

Each query is timed individually (mean over repetitions after warmup);
throughput is queries divided by total time. A synthetic corpus builder
supports benchmarking without real data.
"""

from __future__ import annotations

import os
import platform
import sys
import time
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .index import EmbeddingMatrix, search_topk
from .kb import ArticleEntry, KnowledgeBase, SectionRecord
from .rerank import (
    DEFAULT_NUM_QUERY_TOKENS,
    QueryTokenSet,
    RerankConfig,
    SectionEmbeddingStore,
    rerank,
)


@dataclass(frozen=True)
class BenchRow:
    scope: int
    total_retrieval_time_s: float
    qps: float

    def as_record(self) -> dict:
        return {
            "scope": self.scope,
            "total_retrieval_time_s": self.total_retrieval_time_s,
            "qps": self.qps,
        }


@dataclass
class BenchReport:
    rows: list[BenchRow]
    fingerprint: dict

    def as_records(self) -> list[dict]:
        out = [{"type": "fingerprint", **self.fingerprint}]
        out.extend({"type": "row", **r.as_record()} for r in self.rows)
        return out


def environment_fingerprint(workers: int = 1) -> dict:
    return {
        "host": platform.node(),
        "platform": platform.platform(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "workers": workers,
        "batch_size": 1,
    }


def synthetic_corpus(
    n_entries: int = 20_000,
    images_per_entry: int = 5,
    sections_per_entry: int = 8,
    dim: int = 64,
    seed: int = 0,
) -> tuple[KnowledgeBase, EmbeddingMatrix, EmbeddingMatrix]:
    """Random KB plus matching image and section embedding matrices."""
    rng = np.random.default_rng(seed)
    entries: dict[str, ArticleEntry] = {}
    image_index: dict[str, str] = {}
    image_ids: list[str] = []
    section_ids: list[str] = []
    for e in range(n_entries):
        url = f"synth://entry/{e}"
        title = f"Entry {e}"
        sections = tuple(
            SectionRecord.build(url, title, s, f"h{s}", f"synthetic body {e}.{s}")
            for s in range(sections_per_entry)
        )
        imgs = tuple(f"img_{e}_{i}" for i in range(images_per_entry))
        entries[url] = ArticleEntry(url=url, title=title, sections=sections, image_ids=imgs)
        for img in imgs:
            image_index[img] = url
        image_ids.extend(imgs)
        section_ids.extend(s.section_id for s in sections)
    kb = KnowledgeBase(entries=entries, image_index=image_index)

    def unit(n: int) -> np.ndarray:
        rows = rng.standard_normal((n, dim))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return rows.astype(np.float32)

    images = EmbeddingMatrix(
        dim=dim, ids=tuple(image_ids), vectors=unit(len(image_ids)), normalized=True
    )
    sections = EmbeddingMatrix(
        dim=dim, ids=tuple(section_ids), vectors=unit(len(section_ids)), normalized=True
    )
    return kb, images, sections


def bench_throughput(
    index: EmbeddingMatrix,
    sections: EmbeddingMatrix,
    kb: KnowledgeBase,
    scopes: list[int],
    repetitions: int = 15,
    warmup: int = 3,
    alpha: float = 0.5,
    n_tokens: int = DEFAULT_NUM_QUERY_TOKENS,
    seed: int = 0,
) -> BenchReport:
    """Time search_topk(k=scope) plus rerank per query for each scope."""
    if not scopes:
        raise DataError("scopes must be nonempty")
    if repetitions < 1:
        raise DataError(f"repetitions must be >= 1, got {repetitions}")
    if warmup < 0:
        raise DataError(f"warmup must be >= 0, got {warmup}")
    store = SectionEmbeddingStore(sections)
    rng = np.random.default_rng(seed)
    n_queries = warmup + repetitions

    def unit_rows(n: int, d: int) -> np.ndarray:
        rows = rng.standard_normal((n, d))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return rows.astype(np.float32)

    image_queries = unit_rows(n_queries, index.dim)
    token_sets = [
        QueryTokenSet(query_id=f"bench_q{i}", tokens=unit_rows(n_tokens, sections.dim))
        for i in range(n_queries)
    ]

    rows: list[BenchRow] = []
    for scope in sorted(scopes):
        cfg = RerankConfig(alpha=alpha, scope=scope)
        total = 0.0
        for i in range(n_queries):
            t0 = time.perf_counter()
            candidates = search_topk(index, image_queries[i], scope, kb)
            rerank(token_sets[i], candidates, store, kb, cfg)
            elapsed = time.perf_counter() - t0
            if i >= warmup:
                total += elapsed
        rows.append(
            BenchRow(scope=scope, total_retrieval_time_s=total, qps=repetitions / total)
        )
    return BenchReport(rows=rows, fingerprint=environment_fingerprint())
