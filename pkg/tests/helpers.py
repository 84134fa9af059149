"""Shared fixture builders and independent oracles used across the suite."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from retrank import EmbeddingMatrix, KnowledgeBase, ingest, save_embeddings
from retrank.mining import loss_value_raw


def build_kb(articles: list[dict]) -> KnowledgeBase:
    buf = io.StringIO("".join(json.dumps(a) + "\n" for a in articles))
    kb, report = ingest(buf)
    assert not report.skipped, report.skipped
    return kb


def article(url: str, n_sections: int, image_ids: list[str], title: str | None = None) -> dict:
    return {
        "url": url,
        "title": title or f"Title of {url}",
        "sections": [
            {"heading": f"h{i}", "body": f"body {i} of {url}"} for i in range(n_sections)
        ],
        "image_ids": image_ids,
    }


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


def full_scan_topk(index: EmbeddingMatrix, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Independent top-k oracle: score every row, sort the full list with
    the (-score, id) tie rule, take the first k. Shares only the scoring
    primitive (float32 cosine) with the implementation, not its
    selection logic."""
    q = np.asarray(query, dtype=np.float32)
    q = q / np.float32(np.sqrt(np.dot(q.astype(np.float64), q.astype(np.float64))))
    scores = index.vectors @ q
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.ids[i]))
    return [(index.ids[i], float(scores[i])) for i in order[: min(k, len(index))]]


def cosine_scores_f64(index: EmbeddingMatrix, query: np.ndarray) -> dict[str, float]:
    """Reference cosine values in float64, for formula-level checks."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    rows = index.vectors.astype(np.float64)
    return {id_: float(np.dot(rows[i], q)) for i, id_ in enumerate(index.ids)}


def evec_of(path: Path, ids: list[str], rows, normalized: bool) -> Path:
    rows = np.asarray(rows, dtype=np.float32)
    m = EmbeddingMatrix(dim=rows.shape[1], ids=tuple(ids), vectors=rows, normalized=normalized)
    save_embeddings(m, path)
    return path


def write_jsonl_file(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


E0 = [1.0, 0.0, 0.0, 0.0]
E1 = [0.0, 1.0, 0.0, 0.0]
E2 = [0.0, 0.0, 1.0, 0.0]
E3 = [0.0, 0.0, 0.0, 1.0]
HALF23 = [0.0, 0.0, 0.7071068, 0.7071068]
HALF01 = [0.7071068, 0.7071068, 0.0, 0.0]


def pipeline_fixture(root: Path) -> dict:
    """A tiny fully-wired corpus: 3 entries, axis-aligned embeddings, two
    queries whose gold sections are exact token matches."""
    paths = {
        "kb": root / "kb.jsonl",
        "images_evec": root / "images.evec",
        "sections_evec": root / "sections.evec",
        "queries_evec": root / "queries.evec",
        "qtokens_evec": root / "qtokens.evec",
        "questions": root / "questions.jsonl",
        "gold": root / "gold.jsonl",
        "stub_fixtures": root / "stub_fixtures.json",
    }
    write_jsonl_file(paths["kb"], [
        {"url": "kb://A", "title": "Alpha", "sections": [
            {"heading": "intro", "body": "alpha first"},
            {"heading": "more", "body": "alpha second"},
        ], "image_ids": ["imA"]},
        {"url": "kb://B", "title": "Beta", "sections": [
            {"heading": "intro", "body": "beta first"},
            {"heading": "more", "body": "beta second"},
        ], "image_ids": ["imB"]},
        {"url": "kb://C", "title": "Gamma", "sections": [
            {"heading": "intro", "body": "gamma first"},
            {"heading": "more", "body": "gamma second"},
        ], "image_ids": ["imC"]},
    ])
    evec_of(paths["images_evec"], ["imA", "imB", "imC"], [E0, E1, E2], normalized=True)
    evec_of(
        paths["sections_evec"],
        ["kb://A#0", "kb://A#1", "kb://B#0", "kb://B#1", "kb://C#0", "kb://C#1"],
        [E0, E3, E1, HALF23, E2, HALF01],
        normalized=True,
    )
    evec_of(paths["queries_evec"], ["q1", "q2"], [E0, E1], normalized=True)
    evec_of(
        paths["qtokens_evec"],
        ["q1/token_0", "q1/token_1", "q2/token_0", "q2/token_1"],
        [E0, E3, E1, E3],
        normalized=True,
    )
    write_jsonl_file(paths["questions"], [
        {"query_id": "q1", "question": "What is alpha?"},
        {"query_id": "q2", "question": "What is beta?"},
    ])
    write_jsonl_file(paths["gold"], [
        {"query_id": "q1", "gold_url": "kb://A", "evidence_section_id": "kb://A#0",
         "gold_answers": ["alpha one"]},
        {"query_id": "q2", "gold_url": "kb://B", "evidence_section_id": "kb://B#0",
         "gold_answers": ["beta one"]},
    ])
    paths["stub_fixtures"].write_text(json.dumps({
        "What is alpha?": "alpha one",
        "What is beta?": "beta one",
    }), encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def fd_gradients(
    tokens: np.ndarray, sections: np.ndarray, temperature: float, h: float = 1e-4
) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of the loss value in the ambient space."""
    def grad_of(arr: np.ndarray, which: str) -> np.ndarray:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = g.reshape(-1)
        base = arr.astype(np.float64).copy()
        for idx in range(base.size):
            for sign in (+1, -1):
                perturbed = base.reshape(-1).copy()
                perturbed[idx] += sign * h
                pm = perturbed.reshape(base.shape)
                if which == "tokens":
                    val = loss_value_raw(pm, sections, temperature)
                else:
                    val = loss_value_raw(tokens, pm, temperature)
                flat[idx] += sign * val
        return g / (2.0 * h)

    return grad_of(np.asarray(tokens), "tokens"), grad_of(np.asarray(sections), "sections")
