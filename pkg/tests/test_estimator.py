import pytest
from sklearn.exceptions import NotFittedError

from activecoref.corpus import Span
from activecoref.estimator import IncrementalCoreferenceResolver
from activecoref.loop import LabeledPool, oracle_label
from activecoref.synth import SynthConfig, synth_generate


TINY = dict(max_epochs=2, hash_dim=64, rep_dim=8, hidden_dim=8)


def docs(n=2, seed=5):
    return synth_generate(
        SynthConfig(n_docs=n, tokens_per_doc=50, n_entities=4 * n, seed=seed)
    )


class TestParams:
    def test_get_params_roundtrip(self):
        est = IncrementalCoreferenceResolver(**TINY)
        params = est.get_params()
        assert params["max_epochs"] == 2
        clone = IncrementalCoreferenceResolver(**params)
        assert clone.get_params() == params

    def test_set_params(self):
        est = IncrementalCoreferenceResolver()
        est.set_params(learning_rate=3e-4, seed=9)
        assert est.learning_rate == 3e-4
        assert est.seed == 9

    def test_invalid_hyper_surfaces_at_fit(self):
        est = IncrementalCoreferenceResolver(dropout=1.5)
        with pytest.raises(ValueError):
            est.fit(docs(1))


class TestValidation:
    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            IncrementalCoreferenceResolver(**TINY).predict(docs(1))

    def test_score_before_fit(self):
        with pytest.raises(NotFittedError):
            IncrementalCoreferenceResolver(**TINY).score(docs(1))

    def test_fit_rejects_empty(self):
        with pytest.raises(ValueError):
            IncrementalCoreferenceResolver(**TINY).fit([])

    def test_fit_rejects_non_documents(self):
        with pytest.raises(TypeError):
            IncrementalCoreferenceResolver(**TINY).fit(["text"])


class TestFitPredict:
    def test_fit_predict_shapes(self):
        est = IncrementalCoreferenceResolver(**TINY).fit(docs(2))
        test = docs(1, seed=7)
        preds = est.predict(test)
        assert len(preds) == 1
        for cluster in preds[0]:
            for span in cluster:
                assert isinstance(span, Span)
                assert span.doc_id == test[0].doc_id

    def test_score_in_unit_interval(self):
        est = IncrementalCoreferenceResolver(**TINY).fit(docs(2))
        assert 0.0 <= est.score(docs(1, seed=7)) <= 1.0

    def test_evaluate_returns_full_result(self):
        est = IncrementalCoreferenceResolver(**TINY).fit(docs(2))
        result = est.evaluate(docs(1, seed=7))
        assert result.avg_f1 == pytest.approx(
            (result.muc_f1 + result.b3_f1 + result.ceaf_f1) / 3
        )

    def test_continue_fit_uses_pool(self):
        train_docs = docs(2)
        est = IncrementalCoreferenceResolver(**TINY).fit(train_docs)
        pool = LabeledPool()
        target = docs(1, seed=8)
        mentions = sorted(target[0].mention_cluster_index())
        for start, end in mentions[:3]:
            pool.add(oracle_label(target[0], Span(target[0].doc_id, start, end)))
        est.continue_fit(target, pool)
        assert est.predict(target)

    def test_traces_align_with_predictions(self):
        est = IncrementalCoreferenceResolver(**TINY).fit(docs(2))
        test = docs(1, seed=7)
        traces = est.predict_traces(test)
        assert traces[0].doc_id == test[0].doc_id
        assert len(traces[0].steps) == len(traces[0].retained)


class TestCheckpointRoundtrip:
    def test_save_and_reload(self, tmp_path):
        est = IncrementalCoreferenceResolver(**TINY).fit(docs(2))
        path = str(tmp_path / "model.npz")
        est.save(path)
        loaded = IncrementalCoreferenceResolver.from_checkpoint(path)
        test = docs(1, seed=7)
        assert loaded.predict(test) == est.predict(test)
        assert loaded.get_params()["hash_dim"] == TINY["hash_dim"]

    def test_unfitted_save_rejected(self, tmp_path):
        with pytest.raises(NotFittedError):
            IncrementalCoreferenceResolver(**TINY).save(str(tmp_path / "x.npz"))
