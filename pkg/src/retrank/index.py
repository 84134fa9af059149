"""Stage-1 visual search: exact cosine top-k over a flat float32 matrix.

The index is immutable after construction and safe to share across
threads. Scores are float32 cosines; last-bit differences across BLAS
builds are possible and downstream tolerances absorb them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .kb import KnowledgeBase


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Fixed-dimension float32 vectors keyed by unique string ids."""

    dim: int
    ids: tuple[str, ...]
    vectors: np.ndarray  # (count, dim) float32, row-major
    normalized: bool = False
    _row_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise DataError(f"dim must be positive, got {self.dim}")
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape != (len(self.ids), self.dim):
            raise DataError(
                f"vectors shape {self.vectors.shape} does not match "
                f"{len(self.ids)} ids x dim {self.dim}"
            )
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "ids", tuple(self.ids))
        row_of: dict[str, int] = {}
        for i, id_ in enumerate(self.ids):
            if id_ in row_of:
                raise DataError(f"duplicate id {id_!r}")
            row_of[id_] = i
        object.__setattr__(self, "_row_of", row_of)
        if self.normalized and len(self.ids) > 0:
            norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
            if bad.size:
                raise DataError(
                    f"matrix flagged normalized but row {self.ids[bad[0]]!r} "
                    f"has norm {norms[bad[0]]:.6f}"
                )

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, id_: str) -> np.ndarray:
        try:
            return self.vectors[self._row_of[id_]]
        except KeyError:
            raise DataError(f"unknown id {id_!r}") from None

    def has(self, id_: str) -> bool:
        return id_ in self._row_of


@dataclass(frozen=True)
class RetrievalCandidate:
    """One stage-1 hit: an image and the entry that owns it."""

    image_id: str
    entry_url: str
    visual_score: float  # cosine in [-1, 1]
    rank: int  # 1-based, dense


def normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Return a unit-norm copy of `m`. Idempotent: an already-normalized
    matrix is returned unchanged. Zero-norm rows are rejected by id."""
    if m.normalized:
        return m
    v64 = m.vectors.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", v64, v64))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataError(f"cannot normalize zero-norm row {m.ids[zero[0]]!r}")
    unit = (v64 / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix(dim=m.dim, ids=m.ids, vectors=unit, normalized=True)


def _unit_query(query: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != dim:
        raise DataError(f"query dim {q.shape[0]} does not match index dim {dim}")
    norm = np.float32(np.sqrt(np.dot(q.astype(np.float64), q.astype(np.float64))))
    if norm == 0.0:
        raise DataError("query vector has zero norm")
    return q / norm


def search_topk(
    index: EmbeddingMatrix,
    query: np.ndarray,
    k: int,
    kb: KnowledgeBase,
) -> list[RetrievalCandidate]:
    """Exhaustive cosine top-k over the image index.

    Returns the k highest-scoring images (all of them when k exceeds the
    index size), each resolved to its owning entry. Entries are NOT
    deduplicated here: several images of one entry may all appear. Ties
    are broken by ascending image id.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not index.normalized:
        raise DataError("index must be normalized before search")
    if len(index) == 0:
        return []
    q = _unit_query(query, index.dim)
    scores = index.vectors @ q
    take = min(k, len(index))
    # Threshold selection keeps every score tied at the boundary so the
    # ascending-id tie rule decides membership, not argpartition order.
    kth = np.partition(scores, len(scores) - take)[len(scores) - take]
    pool = np.flatnonzero(scores >= kth)
    order = sorted(pool, key=lambda i: (-scores[i], index.ids[i]))[:take]
    return [
        RetrievalCandidate(
            image_id=index.ids[i],
            entry_url=kb.entry_of_image(index.ids[i]).url,
            visual_score=float(scores[i]),
            rank=rank,
        )
        for rank, i in enumerate(order, start=1)
    ]


def search_topk_batch(
    index: EmbeddingMatrix,
    queries: dict[str, np.ndarray],
    k: int,
    kb: KnowledgeBase,
    workers: int = 1,
) -> dict[str, list[RetrievalCandidate]]:
    """Run search_topk for many queries, optionally in parallel.

    Queries are independent, so the result does not depend on `workers`.
    """
    items = list(queries.items())
    if workers <= 1 or len(items) <= 1:
        return {qid: search_topk(index, q, k, kb) for qid, q in items}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = pool.map(lambda it: (it[0], search_topk(index, it[1], k, kb)), items)
        return dict(results)
