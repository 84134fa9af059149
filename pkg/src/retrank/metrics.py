"""Retrieval and answer metrics.

Recall@K uses exact URL matching against the deduplicated ranked entry
list. Answer accuracy is a normalized exact-match rule standing in for
the neural answer-equivalence metric; reports label it "exact-match
(BEM proxy)" so the numbers are never silently compared against scores
produced by the neural metric.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from typing import IO, Iterable

from .errors import DataError

RELAXED_TOLERANCE = 0.05

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = {"a", "an", "the"}


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    gold_url: str
    ranked_urls: tuple[str, ...]  # deduplicated by first occurrence
    gold_answers: tuple[str, ...]
    predicted_answer: str | None = None
    answer_kind: str = "string"  # "string" | "numeric"

    def __post_init__(self):
        if not self.gold_answers:
            raise DataError(f"record {self.query_id!r}: gold_answers must be nonempty")
        if self.answer_kind not in ("string", "numeric"):
            raise DataError(
                f"record {self.query_id!r}: answer_kind must be 'string' or 'numeric'"
            )
        object.__setattr__(self, "ranked_urls", _dedup(self.ranked_urls))
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))


def _dedup(urls: Iterable[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out = []
    for url in urls:
        if url not in seen:
            seen.add(url)
            out.append(url)
    return tuple(out)


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    vqa_accuracy: float | None
    relaxed_accuracy: float | None
    n_queries: int
    unparseable_numeric: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "vqa_accuracy_exact_match_bem_proxy": self.vqa_accuracy,
            "relaxed_accuracy": self.relaxed_accuracy,
            "unparseable_numeric": list(self.unparseable_numeric),
        }

    def pretty(self) -> str:
        lines = [f"queries evaluated: {self.n_queries}"]
        for k in sorted(self.recall_at):
            lines.append(f"recall@{k}: {self.recall_at[k]:.4f}")
        if self.vqa_accuracy is not None:
            lines.append(f"vqa accuracy, exact-match (BEM proxy): {self.vqa_accuracy:.4f}")
        if self.relaxed_accuracy is not None:
            lines.append(f"relaxed accuracy: {self.relaxed_accuracy:.4f}")
        if self.unparseable_numeric:
            lines.append(
                "unparseable numeric predictions: " + ", ".join(self.unparseable_numeric)
            )
        return "\n".join(lines)


def recall_at_k(records: list[EvalRecord], ks: list[int]) -> dict[int, float]:
    """Fraction of queries whose gold URL is within the first K entries."""
    if not records:
        raise DataError("recall needs at least one record")
    if any(k < 1 for k in ks):
        raise DataError("every K must be positive")
    out: dict[int, float] = {}
    for k in ks:
        hits = sum(1 for r in records if r.gold_url in r.ranked_urls[:k])
        out[k] = hits / len(records)
    return out


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop a leading article, collapse
    whitespace. Matching is exact after this normalization."""
    words = text.lower().translate(_PUNCT_TABLE).split()
    if words and words[0] in _ARTICLES:
        words = words[1:]
    return " ".join(words)


def _answer_matches(pred: str, golds: tuple[str, ...]) -> bool:
    norm = normalize_answer(pred)
    return any(norm == normalize_answer(g) for g in golds)


def vqa_accuracy(records: list[EvalRecord]) -> float:
    """Exact-match accuracy after normalization, any gold answer counts."""
    if not records:
        raise DataError("accuracy needs at least one record")
    missing = [r.query_id for r in records if r.predicted_answer is None]
    if missing:
        raise DataError("records missing predictions: " + ", ".join(missing[:5]))
    hits = sum(1 for r in records if _answer_matches(r.predicted_answer, r.gold_answers))
    return hits / len(records)


def _parse_number(text: str) -> float | None:
    try:
        return float(text.strip().rstrip(".").replace(",", ""))
    except ValueError:
        return None


def relaxed_accuracy(records: list[EvalRecord]) -> tuple[float, list[str]]:
    """Numeric answers pass within a relative tolerance; strings fall back
    to the exact-match rule. Returns (accuracy, unparseable query ids)."""
    if not records:
        raise DataError("accuracy needs at least one record")
    hits = 0
    unparseable: list[str] = []
    for r in records:
        if r.predicted_answer is None:
            raise DataError(f"record {r.query_id!r} has no prediction")
        if r.answer_kind != "numeric":
            hits += _answer_matches(r.predicted_answer, r.gold_answers)
            continue
        pred = _parse_number(r.predicted_answer)
        if pred is None:
            unparseable.append(r.query_id)
            continue
        for gold_text in r.gold_answers:
            gold = _parse_number(gold_text)
            if gold is None:
                raise DataError(
                    f"record {r.query_id!r}: numeric gold answer {gold_text!r} is unparseable"
                )
            if gold == 0.0:
                if pred == 0.0:
                    hits += 1
                    break
            elif abs(pred - gold) <= RELAXED_TOLERANCE * abs(gold):
                hits += 1
                break
    return hits / len(records), unparseable


def evaluate(records: list[EvalRecord], ks: list[int]) -> EvalReport:
    """Aggregate every metric the record set supports.

    Answer metrics are included only when every record carries a
    prediction; retrieval recall is always computed.
    """
    recall = recall_at_k(records, ks)
    have_answers = all(r.predicted_answer is not None for r in records)
    vqa = rel = None
    unparseable: list[str] = []
    if have_answers:
        vqa = vqa_accuracy(records)
        rel, unparseable = relaxed_accuracy(records)
    return EvalReport(
        recall_at=recall,
        vqa_accuracy=vqa,
        relaxed_accuracy=rel,
        n_queries=len(records),
        unparseable_numeric=unparseable,
    )


def parse_record(obj: dict) -> EvalRecord:
    try:
        ranked = obj["ranked_urls"]
        golds = obj["gold_answers"]
        if not isinstance(ranked, list) or not isinstance(golds, list):
            raise DataError("ranked_urls and gold_answers must be lists")
        return EvalRecord(
            query_id=str(obj["query_id"]),
            gold_url=str(obj["gold_url"]),
            ranked_urls=tuple(str(u) for u in ranked),
            gold_answers=tuple(str(g) for g in golds),
            predicted_answer=(
                str(obj["predicted_answer"]) if obj.get("predicted_answer") is not None else None
            ),
            answer_kind=obj.get("answer_kind", "string"),
        )
    except KeyError as exc:
        raise DataError(f"missing field {exc.args[0]!r}") from None


def read_records(stream: IO[str]) -> tuple[list[EvalRecord], list[str]]:
    """Parse line-delimited records; malformed lines are collected, not
    fatal, but a nonempty issue list must surface as a nonzero exit."""
    records: list[EvalRecord] = []
    issues: list[str] = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_record(json.loads(line)))
        except (json.JSONDecodeError, DataError) as exc:
            issues.append(f"line {lineno}: {exc}")
    return records, issues
