"""Hard-negative mining and the temperature-scaled contrastive objective.

The miner builds training examples from stage-1 retrieval output; the
loss returns both the value and analytic gradients with respect to every
embedding so an external trainer can backpropagate through its encoders.
Everything here is deterministic given the seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .index import RetrievalCandidate
from .kb import KnowledgeBase
from .rerank import QueryTokenSet, SectionEmbedding

DEFAULT_NUM_NEGATIVES = 24
DEFAULT_TEMPERATURE = 0.07

HARD_NEGATIVE_ENTRY = "hard_negative_entry"
POSITIVE_ENTRY_NONEVIDENCE = "positive_entry_nonevidence"


@dataclass(frozen=True)
class TrainExample:
    query_id: str
    positive_section_id: str
    negative_section_ids: tuple[str, ...]
    provenance: tuple[str, ...]  # parallel to negative_section_ids
    short: bool = False  # pool was smaller than the requested count

    def as_record(self) -> dict:
        """Line-delimited export consumed by external trainers."""
        return {
            "query_id": self.query_id,
            "positive_section_id": self.positive_section_id,
            "negative_section_ids": list(self.negative_section_ids),
        }


@dataclass(frozen=True)
class LossConfig:
    temperature: float = DEFAULT_TEMPERATURE
    n_tokens: int | None = None  # enforced on the query token set when given

    def __post_init__(self):
        if self.temperature <= 0:
            raise DataError(f"temperature must be positive, got {self.temperature}")


def mine_negatives(
    query_id: str,
    gold_url: str,
    evidence_section_id: str,
    candidates: list[RetrievalCandidate],
    kb: KnowledgeBase,
    n: int = DEFAULT_NUM_NEGATIVES,
    seed: int = 0,
) -> TrainExample:
    """Sample hard negatives for one training query.

    The pool is the union of (a) all sections of retrieved entries other
    than the gold entry and (b) the gold entry's non-evidence sections.
    Sampling is uniform over the combined pool, without replacement,
    seeded. When the pool is smaller than n the example is flagged short
    and carries the whole pool in seeded order.
    """
    if n < 1:
        raise DataError(f"negative count must be >= 1, got {n}")
    if not candidates:
        raise DataError("mining requires stage-1 candidates")
    gold = kb.entry(gold_url)
    if all(s.section_id != evidence_section_id for s in gold.sections):
        raise DataError(
            f"evidence section {evidence_section_id!r} not found in gold entry {gold_url!r}"
        )

    pool: list[tuple[str, str]] = []
    seen_urls: set[str] = set()
    for cand in candidates:
        if cand.entry_url == gold_url or cand.entry_url in seen_urls:
            continue
        seen_urls.add(cand.entry_url)
        for section in kb.entry(cand.entry_url).sections:
            pool.append((section.section_id, HARD_NEGATIVE_ENTRY))
    for section in gold.sections:
        if section.section_id != evidence_section_id:
            pool.append((section.section_id, POSITIVE_ENTRY_NONEVIDENCE))

    if not pool:
        raise DataError(f"query {query_id!r}: negative pool is empty")

    rng = random.Random(seed)
    take = min(n, len(pool))
    chosen = rng.sample(pool, take)
    return TrainExample(
        query_id=query_id,
        positive_section_id=evidence_section_id,
        negative_section_ids=tuple(sid for sid, _ in chosen),
        provenance=tuple(prov for _, prov in chosen),
        short=take < n,
    )


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad_tokens: np.ndarray  # (n_tokens, dim)
    grad_positive: np.ndarray  # (dim,)
    grad_negatives: np.ndarray  # (n_negatives, dim)
    probs: np.ndarray = field(repr=False, default=None)  # softmax over [pos, negs]


def loss_value_raw(tokens: np.ndarray, sections: np.ndarray, temperature: float) -> float:
    """Loss value only, on raw float arrays; row 0 of `sections` is the
    positive. Used as the function under finite differencing."""
    tokens = np.asarray(tokens, dtype=np.float64)
    sections = np.asarray(sections, dtype=np.float64)
    sims = tokens @ sections.T  # (n_tokens, n_sections)
    logits = sims.max(axis=0) / temperature
    shift = logits.max()
    return float(shift + np.log(np.exp(logits - shift).sum()) - logits[0])


def loss_and_grads_raw(
    tokens: np.ndarray, sections: np.ndarray, temperature: float
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and analytic gradients on raw float arrays.

    Row 0 of `sections` is the positive. At max-sim ties the subgradient
    is routed to the lowest-index maximizing token. Returns
    (loss, grad_tokens, grad_sections, probs).
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    sections = np.asarray(sections, dtype=np.float64)
    sims = tokens @ sections.T
    argmax = sims.argmax(axis=0)  # np.argmax picks the first (lowest) index on ties
    logits = sims[argmax, np.arange(sections.shape[0])] / temperature
    shift = logits.max()
    exp = np.exp(logits - shift)
    probs = exp / exp.sum()
    loss = float(shift + np.log(exp.sum()) - logits[0])

    coeff = probs.copy()
    coeff[0] -= 1.0
    coeff /= temperature  # dL/d maxsim_j
    grad_sections = coeff[:, None] * tokens[argmax]
    grad_tokens = np.zeros_like(tokens)
    np.add.at(grad_tokens, argmax, coeff[:, None] * sections)
    return loss, grad_tokens, grad_sections, probs


def contrastive_loss(
    q: QueryTokenSet,
    pos: SectionEmbedding,
    negs: list[SectionEmbedding],
    cfg: LossConfig = LossConfig(),
) -> LossResult:
    """Hard-negative InfoNCE over the positive and its mined negatives.

    The softmax denominator runs over the positive plus every negative.
    Gradients are analytic and match central finite differences of
    loss_value_raw in the ambient (unconstrained) space.
    """
    if not negs:
        raise DataError("contrastive loss requires at least one negative")
    if cfg.n_tokens is not None and q.n_tokens != cfg.n_tokens:
        raise DataError(
            f"query {q.query_id!r} has {q.n_tokens} tokens, config requires {cfg.n_tokens}"
        )
    dim = q.dim
    for emb in (pos, *negs):
        if emb.vector.shape[0] != dim:
            raise DataError(
                f"dim mismatch: tokens are {dim}-d, section {emb.section_id!r} "
                f"is {emb.vector.shape[0]}-d"
            )
    sections = np.stack([pos.vector] + [n.vector for n in negs]).astype(np.float64)
    loss, grad_tokens, grad_sections, probs = loss_and_grads_raw(
        q.tokens, sections, cfg.temperature
    )
    return LossResult(
        loss=loss,
        grad_tokens=grad_tokens,
        grad_positive=grad_sections[0],
        grad_negatives=grad_sections[1:],
        probs=probs,
    )
