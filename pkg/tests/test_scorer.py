import logging
import math

import numpy as np
import pytest

from activecoref.corpus import Document, Span, enumerate_spans
from activecoref.features import SpanFeaturizer
from activecoref.loop import Label, LabeledPool
from activecoref.scorer import (
    Hyperparams,
    ModelParams,
    N_DIST_BUCKETS,
    batch_loss_and_grads,
    build_discrete_batches,
    build_full_gold_batches,
    distance_bucket,
    gate_value,
    grad_check,
    init_params,
    load_params,
    mention_score,
    pair_score,
    params_equal,
    prune_spans,
    retained_spans,
    save_params,
    train,
)
from activecoref.scorer import _held_fraction_hash
from activecoref.synth import SynthConfig, synth_generate


HYPER = Hyperparams(hash_dim=64, rep_dim=8, hidden_dim=8)


def make_params(seed=0, hyper=HYPER):
    feat = SpanFeaturizer(hash_dim=hyper.hash_dim)
    return init_params(feat.n_features, hyper, seed=seed, featurizer=feat)


def tiny_corpus(n_docs=2, seed=3):
    return synth_generate(
        SynthConfig(n_docs=n_docs, tokens_per_doc=60, n_entities=4 * n_docs, seed=seed)
    )


class TestHyperparams:
    @pytest.mark.parametrize(
        "field,value",
        [
            ("prune_ratio", 0.0),
            ("prune_ratio", 1.5),
            ("dropout", 1.0),
            ("dropout", -0.1),
            ("max_epochs", 0),
            ("learning_rate", 0.0),
            ("optimizer", "sgd"),
        ],
    )
    def test_invalid_rejected(self, field, value):
        with pytest.raises(ValueError):
            Hyperparams(**{field: value})

    def test_to_dict_roundtrips(self):
        h = Hyperparams(max_epochs=7, dropout=0.2)
        assert Hyperparams(**h.to_dict()) == h


class TestDistanceBucket:
    @pytest.mark.parametrize(
        "dist,bucket",
        [(0, 0), (1, 1), (2, 2), (3, 3), (4, 3), (5, 4), (7, 4), (8, 5),
         (15, 5), (16, 6), (31, 6), (32, 7), (63, 7), (64, 8), (5000, 8)],
    )
    def test_edges(self, dist, bucket):
        assert distance_bucket(dist) == bucket


class TestModelParams:
    def test_init_deterministic(self):
        assert params_equal(make_params(seed=5), make_params(seed=5))

    def test_seeds_differ(self):
        assert not params_equal(make_params(seed=5), make_params(seed=6))

    def test_copy_is_independent(self):
        a = make_params()
        b = a.copy()
        b.arrays["b_g"][:] = 9.0
        assert a.arrays["b_g"][0] != 9.0

    def test_shape_check(self):
        a = make_params()
        arrays = {k: v.copy() for k, v in a.arrays.items()}
        arrays["w_g"] = np.zeros(3)
        with pytest.raises(ValueError, match="w_g"):
            ModelParams(arrays, HYPER, a.n_features, featurizer=a.featurizer)

    def test_non_finite_rejected(self):
        a = make_params()
        arrays = {k: v.copy() for k, v in a.arrays.items()}
        arrays["b_e"][0] = np.inf
        with pytest.raises(ValueError, match="b_e"):
            ModelParams(arrays, HYPER, a.n_features, featurizer=a.featurizer)

    def test_attach_featurizer_checks_dim(self):
        a = make_params()
        with pytest.raises(ValueError):
            a.attach_featurizer(SpanFeaturizer(hash_dim=32))


class TestScoringPrimitives:
    def test_mention_score_logistic(self):
        params = make_params()
        doc = tiny_corpus(1)[0]
        feat = params.featurizer.featurize(doc, Span(doc.doc_id, 0, 2))
        out = mention_score(params, feat)
        assert out.p_mention == pytest.approx(1.0 / (1.0 + math.exp(-out.s_m)))

    def test_mention_score_shape_check(self):
        params = make_params()
        with pytest.raises(ValueError):
            mention_score(params, np.zeros(3))

    def test_pair_score_dummy_is_zero_reference(self):
        # The dummy outcome is the constant 0 the pair score competes with;
        # it never goes through the scorer, so only finiteness matters here.
        params = make_params()
        rng = np.random.default_rng(0)
        g_x, g_c = rng.normal(size=(2, params.rep_dim))
        s = pair_score(params, g_x, g_c, 0)
        assert np.isfinite(s)

    def test_pair_score_bucket_range(self):
        params = make_params()
        g = np.zeros(params.rep_dim)
        with pytest.raises(ValueError):
            pair_score(params, g, g, N_DIST_BUCKETS)

    def test_gate_in_unit_interval(self):
        params = make_params()
        rng = np.random.default_rng(1)
        for _ in range(20):
            g_c, g_x = rng.normal(size=(2, params.rep_dim)) * 5
            assert 0.0 <= gate_value(params, g_c, g_x) <= 1.0


class TestPruning:
    def test_keep_count(self):
        params = make_params()
        doc = tiny_corpus(1)[0]
        candidates = enumerate_spans(doc, params.hyper.max_width)
        kept = prune_spans(params, doc, candidates)
        expected = min(len(candidates),
                       math.ceil(params.hyper.prune_ratio * doc.n_tokens))
        assert len(kept) == expected

    def test_document_order(self):
        params = make_params()
        doc = tiny_corpus(1)[0]
        kept = retained_spans(params, doc)
        assert kept == sorted(kept, key=lambda s: (s.start, s.end))

    def test_subset_of_candidates(self):
        params = make_params()
        doc = tiny_corpus(1)[0]
        assert set(retained_spans(params, doc)) <= set(
            enumerate_spans(doc, params.hyper.max_width)
        )

    def test_empty_candidates(self):
        params = make_params()
        doc = tiny_corpus(1)[0]
        assert prune_spans(params, doc, []) == []


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = make_params(seed=2)
        path = str(tmp_path / "model.npz")
        save_params(params, path)
        loaded = load_params(path)
        assert params_equal(params, loaded)
        assert loaded.hyper == params.hyper
        assert loaded.n_features == params.n_features

    def test_version_guard(self, tmp_path):
        params = make_params()
        path = str(tmp_path / "model.npz")
        import json

        meta = {"version": 99, "n_features": params.n_features,
                "hyper": params.hyper.to_dict()}
        np.savez(path, __meta__=np.array(json.dumps(meta)), **params.arrays)
        with pytest.raises(ValueError, match="version"):
            load_params(path)


class TestFullGoldBatches:
    def test_bce_targets_match_gold(self):
        params = make_params()
        corpus = tiny_corpus(1)
        doc = corpus[0]
        batch = build_full_gold_batches(params, corpus)[0]
        candidates = enumerate_spans(doc, params.hyper.max_width)
        gold = doc.mention_cluster_index()
        for c, y in zip(candidates, batch.y_bce):
            assert y == (1.0 if (c.start, c.end) in gold else 0.0)

    def test_gold_nodes_carry_cluster_components(self):
        params = make_params()
        corpus = tiny_corpus(1)
        doc = corpus[0]
        batch = build_full_gold_batches(params, corpus)[0]
        gold = doc.mention_cluster_index()
        n_clusters = len(doc.gold_clusters)
        comps = {}
        junk_comps = []
        keys = _node_keys_from(batch, params, doc)
        for key, comp in zip(keys, batch.node_comp):
            if key in gold:
                comps.setdefault(gold[key], set()).add(comp)
            else:
                junk_comps.append(comp)
        # Every gold cluster maps to exactly one component id.
        assert all(len(v) == 1 for v in comps.values())
        # Hard negatives are singleton components beyond the gold range.
        assert all(c >= n_clusters for c in junk_comps)
        assert len(set(junk_comps)) == len(junk_comps)

    def test_junk_nodes_overlap_gold(self):
        params = make_params()
        corpus = tiny_corpus(1)
        doc = corpus[0]
        batch = build_full_gold_batches(params, corpus)[0]
        gold = doc.mention_cluster_index()
        mentions = sorted(gold)
        keys = _node_keys_from(batch, params, doc)
        junk = [k for k in keys if k not in gold]
        assert len(junk) <= len(mentions)
        for start, end in junk:
            assert any(start < ge and gs < end for gs, ge in mentions)

    def test_nodes_in_document_order(self):
        # Distinct tokens everywhere so feature vectors identify spans.
        params = make_params()
        doc = Document(
            doc_id="d",
            tokens=tuple(f"uniq{i}" for i in range(16)),
            sentence_starts=(0,),
            gold_clusters=(((0, 1), (8, 9)), ((3, 4), (12, 13))),
        )
        batch = build_full_gold_batches(params, [doc])[0]
        keys = _node_keys_from(batch, params, doc)
        assert keys == sorted(keys)

    def test_deterministic(self):
        params = make_params()
        corpus = tiny_corpus(2)
        a = build_full_gold_batches(params, corpus)
        b = build_full_gold_batches(params, corpus)
        for ba, bb in zip(a, b):
            np.testing.assert_array_equal(ba.node_comp, bb.node_comp)
            np.testing.assert_array_equal(ba.node_feats, bb.node_feats)


def _node_keys_from(batch, params, doc):
    """Recover node (start, end) keys by matching feature vectors."""
    lookup = {}
    for span in enumerate_spans(doc, params.hyper.max_width):
        vec = params.featurizer.featurize(doc, span).vector
        lookup[vec.tobytes()] = (span.start, span.end)
    return [lookup[row.tobytes()] for row in batch.node_feats]


class TestDiscreteBatches:
    def _doc(self):
        return Document(
            doc_id="d",
            tokens=tuple(f"w{i}" for i in range(20)),
            sentence_starts=(0,),
            gold_clusters=(((0, 1), (5, 6), (10, 11)),),
        )

    def test_antecedent_links_union(self):
        params = make_params()
        doc = self._doc()
        pool = LabeledPool()
        pool.add(Label(Span("d", 0, 1), "no_prior_antecedent"))
        pool.add(Label(Span("d", 5, 6), "antecedent", antecedent=Span("d", 0, 1)))
        pool.add(Label(Span("d", 10, 11), "antecedent", antecedent=Span("d", 5, 6)))
        batch = build_discrete_batches(params, [doc], pool)[0]
        assert batch.n_nodes == 3
        assert len(set(batch.node_comp)) == 1

    def test_not_a_mention_becomes_singleton_node(self):
        params = make_params()
        doc = self._doc()
        pool = LabeledPool()
        pool.add(Label(Span("d", 0, 1), "no_prior_antecedent"))
        pool.add(Label(Span("d", 5, 6), "antecedent", antecedent=Span("d", 0, 1)))
        pool.add(Label(Span("d", 3, 4), "not_a_mention"))
        batch = build_discrete_batches(params, [doc], pool)[0]
        assert batch.n_nodes == 3
        assert len(set(batch.node_comp)) == 2  # the linked pair plus the junk
        assert batch.node_xe.all()
        # BCE sees the junk span as a negative.
        assert 0.0 in batch.y_bce

    def test_conflicting_not_a_mention_dropped(self, caplog):
        params = make_params()
        doc = self._doc()
        pool = LabeledPool()
        pool.add(Label(Span("d", 0, 1), "not_a_mention"))
        pool.add(Label(Span("d", 5, 6), "antecedent", antecedent=Span("d", 0, 1)))
        with caplog.at_level(logging.WARNING, logger="activecoref.scorer"):
            batch = build_discrete_batches(params, [doc], pool)[0]
        assert "conflicts" in caplog.text
        # Both spans form one linked component; no junk singleton remains.
        assert batch.n_nodes == 2
        assert len(set(batch.node_comp)) == 1

    def test_implied_antecedent_gets_bce_positive(self):
        params = make_params()
        doc = self._doc()
        pool = LabeledPool()
        pool.add(Label(Span("d", 5, 6), "antecedent", antecedent=Span("d", 0, 1)))
        batch = build_discrete_batches(params, [doc], pool)[0]
        # One labeled row plus the implied positive for the target.
        assert batch.F_bce.shape[0] == 2
        assert batch.y_bce.tolist() == [1.0, 1.0]
        assert batch.n_nodes == 2
        # The implied node is not an XE query, only an available antecedent.
        assert batch.node_xe.sum() == 1

    def test_unknown_document_rejected(self):
        params = make_params()
        pool = LabeledPool()
        pool.add(Label(Span("elsewhere", 0, 1), "no_prior_antecedent"))
        with pytest.raises(ValueError, match="elsewhere"):
            build_discrete_batches(params, [self._doc()], pool)


class TestLossAndTraining:
    def test_duplicated_doc_doubles_loss_and_grads(self):
        params = make_params()
        corpus = tiny_corpus(1)
        batch = build_full_gold_batches(params, corpus)
        loss1, grads1 = batch_loss_and_grads(params, batch)
        loss2, grads2 = batch_loss_and_grads(params, batch + batch)
        assert loss2 == pytest.approx(2 * loss1)
        for key in grads1:
            np.testing.assert_allclose(grads2[key], 2 * grads1[key], atol=1e-12)

    def test_loss_finite_without_grads(self):
        params = make_params()
        corpus = tiny_corpus(1)
        batch = build_full_gold_batches(params, corpus)
        loss = batch_loss_and_grads(params, batch, with_grads=False)
        assert np.isfinite(loss)

    def test_grad_check_small(self):
        params = make_params()
        corpus = tiny_corpus(1)
        batches = build_full_gold_batches(params, corpus)
        assert grad_check(params, batches, n_weights=60) < 1e-4

    def test_grad_check_discrete(self):
        params = make_params()
        doc = tiny_corpus(1)[0]
        pool = LabeledPool()
        mentions = sorted(doc.mention_cluster_index())
        from activecoref.loop import oracle_label

        for start, end in mentions[:4]:
            pool.add(oracle_label(doc, Span(doc.doc_id, start, end)))
        batches = build_discrete_batches(params, [doc], pool)
        assert grad_check(params, batches, n_weights=60) < 1e-4

    def test_train_does_not_mutate_source(self):
        hyper = Hyperparams(hash_dim=64, rep_dim=8, hidden_dim=8, max_epochs=2)
        feat = SpanFeaturizer(hash_dim=64)
        source = init_params(feat.n_features, hyper, featurizer=feat)
        frozen = source.copy()
        trained = train(source, None, tiny_corpus(2), hyper, mode="full_gold")
        assert params_equal(source, frozen)
        assert not params_equal(source, trained)

    def test_train_mode_validated(self):
        params = make_params()
        with pytest.raises(ValueError, match="mode"):
            train(params, None, tiny_corpus(1), HYPER, mode="banana")

    def test_discrete_needs_labels(self):
        params = make_params()
        with pytest.raises(ValueError, match="labeled"):
            train(params, LabeledPool(), tiny_corpus(1), HYPER, mode="discrete")

    def test_full_gold_needs_clusters(self):
        params = make_params()
        bare = [
            Document("empty", ("just", "filler", "tokens"), (0,))
        ]
        with pytest.raises(ValueError, match="gold"):
            train(params, None, bare, HYPER, mode="full_gold")

    def test_training_reduces_train_loss(self):
        hyper = Hyperparams(hash_dim=64, rep_dim=8, hidden_dim=8,
                            max_epochs=8, dropout=0.0)
        feat = SpanFeaturizer(hash_dim=64)
        source = init_params(feat.n_features, hyper, featurizer=feat)
        corpus = tiny_corpus(2)
        batches = build_full_gold_batches(source, corpus)
        before = batch_loss_and_grads(source, batches, with_grads=False)
        trained = train(source, None, corpus, hyper, mode="full_gold")
        batches_after = build_full_gold_batches(trained, corpus)
        after = batch_loss_and_grads(trained, batches_after, with_grads=False)
        assert after < before


class TestHoldoutHash:
    def test_deterministic(self):
        assert _held_fraction_hash("doc-1:3:5") == _held_fraction_hash("doc-1:3:5")

    def test_roughly_ten_percent(self):
        hits = sum(_held_fraction_hash(f"key-{i}") for i in range(2000))
        assert 0.05 < hits / 2000 < 0.15
