"""Stage-2 multimodal reranking.

Candidate entries from the visual search are expanded to their sections;
each section is scored by late interaction (max similarity between any
query token and the section embedding) and fused with the entry's visual
score. Pure functions over immutable inputs: concurrent per-query use is
safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .index import EmbeddingMatrix, RetrievalCandidate
from .kb import KnowledgeBase

DEFAULT_ALPHA = 0.5
DEFAULT_SCOPE = 20
DEFAULT_NUM_QUERY_TOKENS = 32


@dataclass(frozen=True)
class QueryTokenSet:
    """Unit-norm fused image+question token embeddings for one query."""

    query_id: str
    tokens: np.ndarray  # (n_tokens, dim) float32

    def __post_init__(self):
        t = np.ascontiguousarray(self.tokens, dtype=np.float32)
        if t.ndim != 2 or t.shape[0] == 0:
            raise DataError(f"query {self.query_id!r}: tokens must be a nonempty 2-d matrix")
        norms = np.linalg.norm(t.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
        if bad.size:
            raise DataError(
                f"query {self.query_id!r}: token {bad[0]} has norm {norms[bad[0]]:.6f}, "
                "expected unit"
            )
        object.__setattr__(self, "tokens", t)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class SectionEmbedding:
    """Unit-norm embedding of one title-prefixed article section."""

    section_id: str
    vector: np.ndarray  # (dim,) float32

    def __post_init__(self):
        v = np.ascontiguousarray(self.vector, dtype=np.float32).reshape(-1)
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if abs(norm - 1.0) > 1e-4:
            raise DataError(
                f"section {self.section_id!r} has norm {norm:.6f}, expected unit"
            )
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class RerankConfig:
    alpha: float = DEFAULT_ALPHA
    scope: int = DEFAULT_SCOPE

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.scope < 1:
            raise DataError(f"scope must be >= 1, got {self.scope}")


@dataclass(frozen=True)
class RankedSection:
    section_id: str
    entry_url: str
    s_r: float  # late-interaction score
    s_v: float  # visual score inherited from the entry's best image
    fused: float  # alpha * s_v + (1 - alpha) * s_r


def maxsim(q: QueryTokenSet, s: SectionEmbedding) -> float:
    """Highest dot product between any query token and the section."""
    if s.vector.shape[0] != q.dim:
        raise DataError(
            f"dim mismatch: tokens are {q.dim}-d, section {s.section_id!r} "
            f"is {s.vector.shape[0]}-d"
        )
    return float(np.dot(q.tokens, s.vector).max())


def propagate_visual(
    candidates: list[RetrievalCandidate], kb: KnowledgeBase
) -> dict[str, float]:
    """Per-entry visual score: the max over that entry's retrieved images.

    Every section of the entry inherits this value during fusion.
    """
    scores: dict[str, float] = {}
    for cand in candidates:
        prev = scores.get(cand.entry_url)
        if prev is None or cand.visual_score > prev:
            scores[cand.entry_url] = cand.visual_score
    return scores


class SectionEmbeddingStore:
    """section_id -> SectionEmbedding lookup backed by an EmbeddingMatrix."""

    def __init__(self, matrix: EmbeddingMatrix):
        if not matrix.normalized:
            raise DataError("section embeddings must be normalized")
        self.matrix = matrix

    def get(self, section_id: str) -> SectionEmbedding | None:
        if not self.matrix.has(section_id):
            return None
        return SectionEmbedding(section_id=section_id, vector=self.matrix.row(section_id))


def rerank(
    q: QueryTokenSet,
    candidates: list[RetrievalCandidate],
    section_embs,
    kb: KnowledgeBase,
    cfg: RerankConfig = RerankConfig(),
) -> list[RankedSection]:
    """Score and sort all sections of the scoped candidate entries.

    Only the first cfg.scope stage-1 candidates are considered (image
    hits, not distinct entries); every section of their entries is scored
    and the full list is returned sorted by fused score descending, ties
    by ascending section id. The head of the list is the RAG context.

    `section_embs` needs a .get(section_id) -> SectionEmbedding | None.
    """
    if not candidates:
        raise DataError("rerank requires at least one candidate")
    scoped = candidates[: cfg.scope]
    s_v = propagate_visual(scoped, kb)

    seen: set[str] = set()
    urls = [c.entry_url for c in scoped if not (c.entry_url in seen or seen.add(c.entry_url))]

    missing: list[str] = []
    ranked: list[RankedSection] = []
    for url in urls:
        for section in kb.entry(url).sections:
            emb = section_embs.get(section.section_id)
            if emb is None:
                missing.append(section.section_id)
                continue
            s_r = maxsim(q, emb)
            fused = cfg.alpha * s_v[url] + (1.0 - cfg.alpha) * s_r
            ranked.append(
                RankedSection(
                    section_id=section.section_id,
                    entry_url=url,
                    s_r=s_r,
                    s_v=s_v[url],
                    fused=fused,
                )
            )
    if missing:
        raise DataError(
            "no section embedding for: " + ", ".join(sorted(missing))
        )
    if not ranked:
        raise DataError("no scoped entry has any section to rerank")
    ranked.sort(key=lambda r: (-r.fused, r.section_id))
    return ranked


TOKEN_ID_SEPARATOR = "/token_"


def query_token_sets(matrix: EmbeddingMatrix) -> dict[str, QueryTokenSet]:
    """Group an EVEC matrix keyed "query_id/token_<i>" into per-query
    token sets. Token indices must be dense from 0."""
    grouped: dict[str, list[tuple[int, int]]] = {}
    for row, id_ in enumerate(matrix.ids):
        qid, sep, suffix = id_.rpartition(TOKEN_ID_SEPARATOR)
        if not sep or not suffix.isdigit():
            raise DataError(
                f"id {id_!r} is not of the form <query_id>{TOKEN_ID_SEPARATOR}<i>"
            )
        grouped.setdefault(qid, []).append((int(suffix), row))
    out: dict[str, QueryTokenSet] = {}
    for qid, pairs in grouped.items():
        pairs.sort()
        indices = [i for i, _ in pairs]
        if indices != list(range(len(pairs))):
            raise DataError(f"query {qid!r}: token indices not dense from 0: {indices}")
        rows = matrix.vectors[[row for _, row in pairs]]
        out[qid] = QueryTokenSet(query_id=qid, tokens=rows)
    return out


def dedup_entry_urls(ranked: list[RankedSection]) -> list[str]:
    """Entry order induced by each entry's best fused section."""
    seen: set[str] = set()
    out: list[str] = []
    for r in ranked:
        if r.entry_url not in seen:
            seen.add(r.entry_url)
            out.append(r.entry_url)
    return out
