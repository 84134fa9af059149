import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retrank import DataError, EmbeddingMatrix, normalize, search_topk, search_topk_batch

from helpers import article, build_kb, cosine_scores_f64, full_scan_topk, unit_rows


def make_index(ids, rows, normalized=False):
    rows = np.asarray(rows, dtype=np.float32)
    return EmbeddingMatrix(dim=rows.shape[1], ids=tuple(ids), vectors=rows,
                           normalized=normalized)


def kb_for(ids):
    return build_kb([article(f"url/{i}", 1, [i]) for i in ids])


THREE = make_index(["a", "b", "c"], [[1, 0], [0, 1], [0.6, 0.8]], normalized=True)
THREE_KB = kb_for(["a", "b", "c"])


class TestNormalize:
    def test_three_four_five(self):
        m = normalize(make_index(["r"], [[3.0, 4.0]]))
        assert m.normalized
        np.testing.assert_array_equal(m.vectors, np.array([[0.6, 0.8]], dtype=np.float32))

    def test_zero_row_rejected_by_id(self):
        with pytest.raises(DataError, match="zero-norm row 'bad'"):
            normalize(make_index(["ok", "bad"], [[1, 1], [0, 0]]))

    def test_idempotent(self):
        m = normalize(make_index(["a", "b"], [[2, 1], [-3, 5]]))
        again = normalize(m)
        assert again is m

    @given(st.integers(1, 40), st.integers(1, 16), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rows_unit_norm(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        rows = rng.standard_normal((n, dim)).astype(np.float32)
        rows[np.linalg.norm(rows, axis=1) == 0] = 1.0
        m = normalize(make_index([f"i{j}" for j in range(n)], rows))
        norms = np.linalg.norm(m.vectors.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6


class TestSearch:
    def test_hand_example(self):
        got = search_topk(THREE, np.array([1.0, 0.0]), 2, THREE_KB)
        assert [(c.image_id, c.rank) for c in got] == [("a", 1), ("c", 2)]
        assert got[0].visual_score == pytest.approx(1.0)
        assert got[1].visual_score == pytest.approx(0.6)
        assert got[0].entry_url == "url/a"

    def test_self_similarity(self):
        got = search_topk(THREE, np.array([0.6, 0.8]), 1, THREE_KB)
        assert got[0].image_id == "c"
        assert got[0].visual_score == pytest.approx(1.0, abs=1e-6)

    def test_k_exceeds_rows(self):
        got = search_topk(THREE, np.array([1.0, 0.1]), 99, THREE_KB)
        assert len(got) == 3
        assert [c.rank for c in got] == [1, 2, 3]
        scores = [c.visual_score for c in got]
        assert scores == sorted(scores, reverse=True)

    def test_errors(self):
        with pytest.raises(DataError, match="dim"):
            search_topk(THREE, np.array([1.0, 0.0, 0.0]), 1, THREE_KB)
        with pytest.raises(DataError, match="zero norm"):
            search_topk(THREE, np.array([0.0, 0.0]), 1, THREE_KB)
        with pytest.raises(DataError, match="normalized"):
            search_topk(make_index(["a"], [[2.0, 0.0]]), np.array([1.0, 0.0]), 1, kb_for(["a"]))
        with pytest.raises(DataError, match="k must be"):
            search_topk(THREE, np.array([1.0, 0.0]), 0, THREE_KB)

    def test_tie_break_ascending_id(self):
        idx = make_index(["z", "m", "a"], [[1, 0], [1, 0], [1, 0]], normalized=True)
        got = search_topk(idx, np.array([1.0, 0.0]), 2, kb_for(["z", "m", "a"]))
        assert [c.image_id for c in got] == ["a", "m"]

    @given(st.integers(2, 120), st.integers(1, 24), st.integers(1, 25), st.integers(0, 10**9))
    @settings(max_examples=60, deadline=None)
    def test_matches_full_scan_oracle(self, n, dim, k, seed):
        rng = np.random.default_rng(seed)
        rows = unit_rows(rng, n, dim)
        if n >= 4:  # force duplicate rows so ties are exercised
            rows[1] = rows[0]
            rows[3] = rows[2]
        ids = [f"im{i:04d}" for i in range(n)]
        idx = EmbeddingMatrix(dim=dim, ids=tuple(ids), vectors=rows, normalized=True)
        kb = kb_for(ids)
        query = rng.standard_normal(dim).astype(np.float32)
        got = search_topk(idx, query, k, kb)
        expected = full_scan_topk(idx, query, k)
        assert [(c.image_id, c.visual_score) for c in got] == expected

    @given(st.integers(2, 60), st.integers(1, 12), st.integers(0, 10**9))
    @settings(max_examples=40, deadline=None)
    def test_formula_is_cosine(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        idx = EmbeddingMatrix(
            dim=dim, ids=tuple(f"i{j}" for j in range(n)),
            vectors=unit_rows(rng, n, dim), normalized=True,
        )
        query = rng.standard_normal(dim).astype(np.float32) * 3.7
        reference = cosine_scores_f64(idx, query)
        for cand in search_topk(idx, query, n, kb_for(idx.ids)):
            assert cand.visual_score == pytest.approx(reference[cand.image_id], abs=1e-5)
            assert -1.0 - 1e-6 <= cand.visual_score <= 1.0 + 1e-6

    @given(st.integers(2, 80), st.integers(1, 16), st.integers(1, 10), st.integers(0, 10**9))
    @settings(max_examples=40, deadline=None)
    def test_topk_prefix_monotone(self, n, dim, k, seed):
        rng = np.random.default_rng(seed)
        idx = EmbeddingMatrix(
            dim=dim, ids=tuple(f"i{j}" for j in range(n)),
            vectors=unit_rows(rng, n, dim), normalized=True,
        )
        kb = kb_for(idx.ids)
        query = rng.standard_normal(dim).astype(np.float32)
        small = search_topk(idx, query, k, kb)
        big = search_topk(idx, query, k + 1, kb)
        assert [c.image_id for c in big[: len(small)]] == [c.image_id for c in small]

    @given(st.integers(2, 60), st.integers(1, 12), st.integers(-10, 10), st.integers(0, 10**9))
    @settings(max_examples=40, deadline=None)
    def test_scale_invariance_power_of_two(self, n, dim, exp, seed):
        # power-of-two scales keep float32 arithmetic exact, so the
        # ranking comparison is bitwise, not approximate
        rng = np.random.default_rng(seed)
        idx = EmbeddingMatrix(
            dim=dim, ids=tuple(f"i{j}" for j in range(n)),
            vectors=unit_rows(rng, n, dim), normalized=True,
        )
        kb = kb_for(idx.ids)
        query = rng.standard_normal(dim).astype(np.float32)
        base = search_topk(idx, query, n, kb)
        scaled = search_topk(idx, query * np.float32(2.0**exp), n, kb)
        assert [(c.image_id, c.visual_score) for c in base] == [
            (c.image_id, c.visual_score) for c in scaled
        ]

    def test_batch_independent_of_workers(self):
        rng = np.random.default_rng(7)
        idx = EmbeddingMatrix(
            dim=8, ids=tuple(f"i{j}" for j in range(50)),
            vectors=unit_rows(rng, 50, 8), normalized=True,
        )
        kb = kb_for(idx.ids)
        queries = {f"q{j}": rng.standard_normal(8).astype(np.float32) for j in range(9)}
        serial = search_topk_batch(idx, queries, 5, kb, workers=1)
        parallel = search_topk_batch(idx, queries, 5, kb, workers=4)
        assert serial == parallel


class TestMatrixInvariants:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError, match="duplicate id"):
            make_index(["a", "a"], [[1, 0], [0, 1]])

    def test_normalized_flag_checked(self):
        with pytest.raises(DataError, match="norm"):
            make_index(["a"], [[3.0, 4.0]], normalized=True)

    def test_shape_mismatch(self):
        with pytest.raises(DataError, match="shape"):
            EmbeddingMatrix(dim=3, ids=("a",), vectors=np.ones((1, 2), dtype=np.float32))
