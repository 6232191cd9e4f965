import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activecoref.corpus import Document, Span, enumerate_spans
from activecoref.features import (
    N_EXTRA,
    WIDTH_BUCKETS,
    EmbeddingTable,
    SpanFeatures,
    SpanFeaturizer,
)


def make_doc():
    return Document(
        doc_id="d",
        tokens=("The", "board", "met", "and", "it", "voted", "today"),
        sentence_starts=(0, 3),
    )


class TestSpanFeatures:
    def test_provenance_validated(self):
        with pytest.raises(ValueError):
            SpanFeatures(vector=np.zeros(3), provenance="guessed")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            SpanFeatures(vector=np.array([1.0, np.nan]), provenance="hashed")


class TestHashedFeatures:
    def test_shape_and_provenance(self):
        feat = SpanFeaturizer(hash_dim=64)
        out = feat.featurize(make_doc(), Span("d", 0, 2))
        assert out.vector.shape == (64 + N_EXTRA,)
        assert out.provenance == "hashed"

    def test_deterministic_across_instances(self):
        doc = make_doc()
        span = Span("d", 1, 4)
        a = SpanFeaturizer(hash_dim=128).featurize(doc, span).vector
        b = SpanFeaturizer(hash_dim=128).featurize(doc, span).vector
        np.testing.assert_array_equal(a, b)

    def test_case_insensitive_tokens(self):
        lower = Document("d", ("the", "board"), (0,))
        upper = Document("d", ("THE", "BOARD"), (0,))
        feat = SpanFeaturizer(hash_dim=64)
        span = Span("d", 0, 2)
        np.testing.assert_array_equal(
            feat.featurize(lower, span).vector, feat.featurize(upper, span).vector
        )

    def test_width_indicator_one_hot(self):
        feat = SpanFeaturizer(hash_dim=32)
        doc = make_doc()
        block = feat.featurize(doc, Span("d", 0, 3)).vector[32 : 32 + len(WIDTH_BUCKETS) + 1]
        assert block.sum() == 1.0
        assert block[2] == 1.0  # width 3 falls in the third bucket

    def test_wide_span_falls_in_last_bucket(self):
        doc = Document("d", tuple(f"w{i}" for i in range(30)), (0,))
        feat = SpanFeaturizer(hash_dim=32)
        block = feat.featurize(doc, Span("d", 0, 20)).vector[
            32 : 32 + len(WIDTH_BUCKETS) + 1
        ]
        assert block[len(WIDTH_BUCKETS)] == 1.0

    def test_quartile_indicator_tracks_sentence(self):
        tokens = tuple(f"w{i}" for i in range(8))
        doc = Document("d", tokens, (0, 2, 4, 6))
        feat = SpanFeaturizer(hash_dim=16)
        base = 16 + len(WIDTH_BUCKETS) + 1
        first = feat.featurize(doc, Span("d", 0, 1)).vector
        last = feat.featurize(doc, Span("d", 6, 7)).vector
        assert first[base + 0] == 1.0
        assert last[base + 3] == 1.0

    def test_hash_dim_validated(self):
        with pytest.raises(ValueError):
            SpanFeaturizer(hash_dim=0)

    def test_batch_matches_single(self):
        doc = make_doc()
        feat = SpanFeaturizer(hash_dim=64)
        spans = enumerate_spans(doc, max_width=3)
        mat = feat.featurize_batch(doc, spans).toarray()
        for row, span in zip(mat, spans):
            np.testing.assert_array_equal(row, feat.featurize(doc, span).vector)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 6), st.integers(1, 4), st.integers(16, 256))
    def test_batch_row_property(self, start, width, dim):
        doc = make_doc()
        end = min(start + width, len(doc.tokens))
        if end <= start:
            return
        span = Span("d", start, end)
        feat = SpanFeaturizer(hash_dim=dim)
        row = feat.featurize_batch(doc, [span]).toarray()[0]
        np.testing.assert_array_equal(row, feat.featurize(doc, span).vector)


class TestEmbeddingTable:
    def _write(self, tmp_path, records):
        path = tmp_path / "emb.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        return str(path)

    def test_load_and_lookup(self, tmp_path):
        path = self._write(
            tmp_path,
            [
                {"doc_id": "d", "start": 0, "end": 2, "vector": [1.0, 0.0, 2.0]},
                {"doc_id": "d", "start": 2, "end": 3, "vector": [0.0, 1.0, 0.0]},
            ],
        )
        table = EmbeddingTable.load(path)
        assert table.dim == 3
        np.testing.assert_array_equal(
            table.lookup(Span("d", 0, 2)), np.array([1.0, 0.0, 2.0])
        )

    def test_missing_span_raises(self, tmp_path):
        path = self._write(
            tmp_path, [{"doc_id": "d", "start": 0, "end": 1, "vector": [1.0]}]
        )
        with pytest.raises(LookupError):
            EmbeddingTable.load(path).lookup(Span("d", 5, 6))

    def test_inconsistent_dims_rejected(self, tmp_path):
        path = self._write(
            tmp_path,
            [
                {"doc_id": "d", "start": 0, "end": 1, "vector": [1.0]},
                {"doc_id": "d", "start": 1, "end": 2, "vector": [1.0, 2.0]},
            ],
        )
        with pytest.raises(ValueError, match="inconsistent"):
            EmbeddingTable.load(path)

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text('{"doc_id": "d"}\n')
        with pytest.raises(ValueError, match="line 1"):
            EmbeddingTable.load(str(path))

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingTable({})

    def test_external_replaces_hashed_block(self, tmp_path):
        path = self._write(
            tmp_path, [{"doc_id": "d", "start": 0, "end": 2, "vector": [3.0, 4.0]}]
        )
        feat = SpanFeaturizer(hash_dim=512, embeddings=EmbeddingTable.load(path))
        assert feat.n_features == 2
        out = feat.featurize(make_doc(), Span("d", 0, 2))
        assert out.provenance == "external"
        np.testing.assert_array_equal(out.vector, np.array([3.0, 4.0]))

    def test_external_batch(self, tmp_path):
        path = self._write(
            tmp_path,
            [
                {"doc_id": "d", "start": 0, "end": 2, "vector": [3.0, 0.0]},
                {"doc_id": "d", "start": 2, "end": 3, "vector": [0.0, 4.0]},
            ],
        )
        feat = SpanFeaturizer(embeddings=EmbeddingTable.load(path))
        mat = feat.featurize_batch(make_doc(), [Span("d", 0, 2), Span("d", 2, 3)])
        np.testing.assert_array_equal(mat.toarray(), [[3.0, 0.0], [0.0, 4.0]])
