import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retrank import (
    DataError,
    QueryTokenSet,
    RerankConfig,
    RetrievalCandidate,
    SectionEmbedding,
    dedup_entry_urls,
    maxsim,
    propagate_visual,
    rerank,
)

from helpers import article, build_kb, unit_rows


def tokens_of(rows, query_id="q"):
    return QueryTokenSet(query_id=query_id, tokens=np.asarray(rows, dtype=np.float32))


def section_emb(section_id, vec):
    return SectionEmbedding(section_id=section_id, vector=np.asarray(vec, dtype=np.float32))


def cand(image_id, url, score, rank):
    return RetrievalCandidate(image_id=image_id, entry_url=url, visual_score=score, rank=rank)


class TestMaxsim:
    def test_enumerated(self):
        q = tokens_of([[1, 0], [0, 1]])
        assert maxsim(q, section_emb("s", [0.6, 0.8])) == pytest.approx(0.8)

    def test_self_similarity(self):
        q = tokens_of([[1, 0], [0, 1]])
        assert maxsim(q, section_emb("s", [0, 1])) == pytest.approx(1.0)

    def test_antipodal(self):
        q = tokens_of([[1, 0]])
        assert maxsim(q, section_emb("s", [-1, 0])) == pytest.approx(-1.0)

    def test_dim_mismatch(self):
        with pytest.raises(DataError, match="dim mismatch"):
            maxsim(tokens_of([[1, 0]]), section_emb("s", [1, 0, 0]))

    @given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 10**9))
    @settings(max_examples=50, deadline=None)
    def test_dominates_every_token(self, n_tokens, dim, seed):
        rng = np.random.default_rng(seed)
        q = tokens_of(unit_rows(rng, n_tokens, dim))
        s = section_emb("s", unit_rows(rng, 1, dim)[0])
        best = maxsim(q, s)
        # enumerate the N_q products as the operation evaluates them
        sims = [float(x) for x in np.dot(q.tokens, s.vector)]
        assert all(best >= sim for sim in sims)
        assert best == max(sims)
        # independent float64 reference for the formula itself
        ref = max(
            float(np.dot(q.tokens[i].astype(np.float64), s.vector.astype(np.float64)))
            for i in range(n_tokens)
        )
        assert best == pytest.approx(ref, abs=1e-5)
        assert -1.0 - 1e-6 <= best <= 1.0 + 1e-6


class TestPropagateVisual:
    def test_max_over_entry_images(self):
        kb = build_kb([article("A", 1, ["a1", "a2"])])
        got = propagate_visual(
            [cand("a1", "A", 0.9, 1), cand("a2", "A", 0.7, 2)], kb
        )
        assert got == {"A": 0.9}

    def test_single(self):
        kb = build_kb([article("B", 1, ["b"])])
        assert propagate_visual([cand("b", "B", 0.5, 1)], kb) == {"B": 0.5}

    def test_empty(self):
        kb = build_kb([article("B", 1, ["b"])])
        assert propagate_visual([], kb) == {}


def two_entry_setup():
    kb = build_kb([article("ex", 1, ["ix"]), article("ey", 1, ["iy"])])
    # all values exactly representable in binary so the fused tie is exact
    candidates = [cand("ix", "ex", 0.875, 1), cand("iy", "ey", 0.5, 2)]
    store = {
        "ex#0": section_emb("ex#0", [0.625, float(np.sqrt(1 - 0.625**2))]),
        "ey#0": section_emb("ey#0", [1.0, 0.0]),
    }
    return kb, candidates, store


class TestRerank:
    def test_exact_tie_broken_by_section_id(self):
        kb, candidates, store = two_entry_setup()
        q = tokens_of([[1.0, 0.0]])
        got = rerank(q, candidates, store, kb, RerankConfig(alpha=0.5, scope=20))
        assert [r.section_id for r in got] == ["ex#0", "ey#0"]
        assert got[0].fused == got[1].fused == 0.75
        assert got[0].s_r == 0.625 and got[0].s_v == 0.875
        assert got[1].s_r == 1.0 and got[1].s_v == 0.5

    def test_alpha_one_degenerates_to_visual(self):
        kb, candidates, store = two_entry_setup()
        q = tokens_of([[1.0, 0.0]])
        got = rerank(q, candidates, store, kb, RerankConfig(alpha=1.0, scope=20))
        assert got[0].entry_url == candidates[0].entry_url
        assert [r.fused for r in got] == [0.875, 0.5]

    def test_alpha_zero_maxsim_dominates(self):
        kb, candidates, store = two_entry_setup()
        q = tokens_of([[1.0, 0.0]])
        got = rerank(q, candidates, store, kb, RerankConfig(alpha=0.0, scope=20))
        assert got[0].section_id == "ey#0"
        assert got[0].fused == 1.0

    def test_scope_limits_candidates_not_entries(self):
        kb = build_kb([
            article("A", 1, ["a1", "a2"]),
            article("B", 1, ["b1"]),
            article("C", 1, ["c1"]),
        ])
        candidates = [
            cand("a1", "A", 0.9, 1),
            cand("a2", "A", 0.8, 2),
            cand("b1", "B", 0.7, 3),
            cand("c1", "C", 0.6, 4),
        ]
        store = {
            sid: section_emb(sid, [1.0, 0.0]) for sid in ("A#0", "B#0", "C#0")
        }
        q = tokens_of([[1.0, 0.0]])
        got = rerank(q, candidates, store, kb, RerankConfig(alpha=0.5, scope=3))
        assert {r.entry_url for r in got} == {"A", "B"}

    def test_missing_embeddings_listed(self):
        kb = build_kb([article("A", 2, ["a1"])])
        store = {"A#0": section_emb("A#0", [1.0, 0.0])}
        with pytest.raises(DataError, match="A#1"):
            rerank(tokens_of([[1.0, 0.0]]), [cand("a1", "A", 0.9, 1)], store, kb)

    def test_empty_candidates_error(self):
        kb = build_kb([article("A", 1, ["a1"])])
        with pytest.raises(DataError, match="at least one candidate"):
            rerank(tokens_of([[1.0, 0.0]]), [], {}, kb)

    def test_zero_section_entries_never_returned(self):
        kb = build_kb([article("A", 0, ["a1"]), article("B", 1, ["b1"])])
        store = {"B#0": section_emb("B#0", [1.0, 0.0])}
        got = rerank(
            tokens_of([[1.0, 0.0]]),
            [cand("a1", "A", 0.99, 1), cand("b1", "B", 0.5, 2)],
            store, kb,
        )
        assert {r.entry_url for r in got} == {"B"}

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_permutation_property(self, data):
        n_entries = data.draw(st.integers(1, 6))
        dim = data.draw(st.integers(2, 8))
        seed = data.draw(st.integers(0, 10**9))
        rng = np.random.default_rng(seed)
        kb = build_kb([
            article(f"u{i}", rng.integers(1, 4), [f"im{i}{j}" for j in range(rng.integers(1, 3))])
            for i in range(n_entries)
        ])
        candidates = []
        rank = 1
        for url, entry in kb.entries.items():
            for image_id in entry.image_ids:
                candidates.append(cand(image_id, url, float(rng.uniform(-1, 1)), rank))
                rank += 1
        rng.shuffle(candidates)
        candidates = [
            RetrievalCandidate(c.image_id, c.entry_url, c.visual_score, i + 1)
            for i, c in enumerate(sorted(candidates, key=lambda c: -c.visual_score))
        ]
        store = {
            s.section_id: section_emb(s.section_id, unit_rows(rng, 1, dim)[0])
            for s in kb.sections_of(kb.entries)
        }
        scope = data.draw(st.integers(1, len(candidates)))
        q = tokens_of(unit_rows(rng, 4, dim))
        got = rerank(q, candidates, store, kb, RerankConfig(alpha=0.5, scope=scope))
        assert {r.entry_url for r in got} == {c.entry_url for c in candidates[:scope]}
        # every section of every scoped entry is present exactly once
        expected_sections = {
            s.section_id for s in kb.sections_of({c.entry_url for c in candidates[:scope]})
        }
        assert {r.section_id for r in got} == expected_sections
        assert len(got) == len(expected_sections)
        fused = [r.fused for r in got]
        assert fused == sorted(fused, reverse=True)

    @given(st.data())
    @settings(max_examples=30, deadline=None)
    def test_alpha_one_top_entry_matches_stage1(self, data):
        seed = data.draw(st.integers(0, 10**9))
        rng = np.random.default_rng(seed)
        n = data.draw(st.integers(2, 6))
        kb = build_kb([article(f"u{i}", 2, [f"im{i}"]) for i in range(n)])
        scores = sorted({float(s) for s in rng.uniform(-1, 1, n)}, reverse=True)
        if len(scores) < n:
            return
        candidates = [
            cand(f"im{i}", f"u{i}", scores[i], i + 1) for i in range(n)
        ]
        store = {
            s.section_id: section_emb(s.section_id, unit_rows(rng, 1, 4)[0])
            for s in kb.sections_of(kb.entries)
        }
        got = rerank(tokens_of(unit_rows(rng, 3, 4)), candidates, store, kb,
                     RerankConfig(alpha=1.0, scope=n))
        assert got[0].entry_url == candidates[0].entry_url

    def test_monotone_fusion(self):
        kb, candidates, store = two_entry_setup()
        q = tokens_of([[1.0, 0.0]])
        cfg = RerankConfig(alpha=0.5, scope=20)
        before = rerank(q, candidates, store, kb, cfg)
        pos_before = [r.section_id for r in before].index("ex#0")
        # raise ex#0's late-interaction score, everything else fixed
        store["ex#0"] = section_emb("ex#0", [0.9, float(np.sqrt(1 - 0.81))])
        after = rerank(q, candidates, store, kb, cfg)
        pos_after = [r.section_id for r in after].index("ex#0")
        assert pos_after <= pos_before


def test_dedup_entry_urls():
    kb, candidates, store = two_entry_setup()
    got = rerank(tokens_of([[1.0, 0.0]]), candidates, store, kb)
    assert dedup_entry_urls(got) == ["ex", "ey"]


def test_query_token_set_validation():
    with pytest.raises(DataError, match="norm"):
        QueryTokenSet(query_id="q", tokens=np.array([[1.0, 1.0]], dtype=np.float32))
    with pytest.raises(DataError, match="nonempty"):
        QueryTokenSet(query_id="q", tokens=np.zeros((0, 3), dtype=np.float32))


def test_rerank_config_validation():
    with pytest.raises(DataError, match="alpha"):
        RerankConfig(alpha=1.5)
    with pytest.raises(DataError, match="scope"):
        RerankConfig(scope=0)
    cfg = RerankConfig()
    assert cfg.alpha == 0.5 and cfg.scope == 20
