import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activecoref.acquisition import (
    STRATEGIES,
    AcquisitionScore,
    clust_ent,
    cond_ent,
    joint_ent,
    li_clust_ent,
    ment_ent,
    score_pool,
)
from activecoref.corpus import Span, enumerate_spans
from activecoref.features import SpanFeaturizer
from activecoref.scorer import Hyperparams, init_params, retained_spans
from activecoref.synth import SynthConfig, synth_generate


HYPER = Hyperparams(hash_dim=64, rep_dim=8, hidden_dim=8)


def make_params(seed=0):
    feat = SpanFeaturizer(hash_dim=HYPER.hash_dim)
    return init_params(feat.n_features, HYPER, seed=seed, featurizer=feat)


def make_docs(n=2):
    return synth_generate(
        SynthConfig(n_docs=n, tokens_per_doc=50, n_entities=4 * n, seed=9)
    )


def random_dist(rng, k):
    raw = rng.random(k) + 1e-3
    return raw / raw.sum()


class TestEntropies:
    def test_ment_ent_half_is_ln2(self):
        assert ment_ent(0.5) == pytest.approx(math.log(2), abs=1e-12)

    def test_ment_ent_symmetry(self):
        assert ment_ent(0.2) == pytest.approx(ment_ent(0.8), abs=1e-12)

    def test_ment_ent_certainty_is_zero(self):
        assert ment_ent(0.0) == pytest.approx(0.0, abs=1e-9)
        assert ment_ent(1.0) == pytest.approx(0.0, abs=1e-9)

    def test_clust_ent_uniform_is_ln_k(self):
        for k in (2, 3, 7, 20):
            assert clust_ent(np.full(k, 1.0 / k)) == pytest.approx(
                math.log(k), abs=1e-12
            )

    def test_clust_ent_one_hot_is_zero(self):
        assert clust_ent([1.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-9)

    def test_cond_ent_scales_by_p(self):
        dist = [0.5, 0.3, 0.2]
        assert cond_ent(0.4, dist) == pytest.approx(0.4 * clust_ent(dist), abs=1e-12)

    def test_joint_is_sum(self):
        dist = [0.6, 0.4]
        assert joint_ent(0.7, dist) == pytest.approx(
            ment_ent(0.7) + cond_ent(0.7, dist), abs=1e-12
        )

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(1, 10), st.integers(0, 10_000))
    def test_identities_hold_for_random_draws(self, p, k, seed):
        dist = random_dist(np.random.default_rng(seed), k)
        assert joint_ent(p, dist) == pytest.approx(
            ment_ent(p) + cond_ent(p, dist), abs=1e-12
        )
        assert cond_ent(p, dist) == pytest.approx(p * clust_ent(dist), abs=1e-12)
        assert ment_ent(p) >= 0.0
        assert clust_ent(dist) >= 0.0
        assert cond_ent(p, dist) >= 0.0


class TestLiClustEnt:
    def test_groups_by_cluster(self):
        # Candidates 0,1 share cluster 0; candidate 2 is cluster 1.
        dist = np.array([0.3, 0.2, 0.1, 0.4])  # dummy last
        value = li_clust_ent(dist, [0, 0, 1])
        assert value == pytest.approx(clust_ent([0.5, 0.1, 0.4]), abs=1e-12)

    def test_dummy_is_its_own_group(self):
        # A single candidate and the dummy: grouping changes nothing.
        dist = np.array([0.7, 0.3])
        assert li_clust_ent(dist, [0]) == pytest.approx(clust_ent(dist), abs=1e-12)

    def test_all_one_cluster_collapses(self):
        dist = np.array([0.25, 0.25, 0.25, 0.25])
        value = li_clust_ent(dist, [0, 0, 0])
        assert value == pytest.approx(clust_ent([0.75, 0.25]), abs=1e-12)

    def test_membership_length_checked(self):
        with pytest.raises(ValueError):
            li_clust_ent([0.5, 0.5], [0, 1])

    def test_grouping_never_increases_entropy(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            k = int(rng.integers(2, 8))
            dist = random_dist(rng, k + 1)
            membership = rng.integers(0, 3, size=k).tolist()
            assert li_clust_ent(dist, membership) <= clust_ent(dist) + 1e-12


class TestAcquisitionScore:
    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError):
            AcquisitionScore(Span("d", 0, 1), 0.5, "alphabetical")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            AcquisitionScore(Span("d", 0, 1), float("nan"), "ment_ent")


class TestScorePool:
    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            score_pool("magic", make_params(), make_docs(1),
                       np.random.default_rng(0))

    @pytest.mark.parametrize("strategy", STRATEGIES)
    def test_every_strategy_scores_the_pool(self, strategy):
        params = make_params()
        docs = make_docs(2)
        out = score_pool(strategy, params, docs, np.random.default_rng(0))
        assert out
        assert all(s.strategy == strategy for s in out)
        assert all(np.isfinite(s.score) for s in out)

    def test_random_covers_all_candidates(self):
        params = make_params()
        docs = make_docs(1)
        out = score_pool("random", params, docs, np.random.default_rng(0))
        assert len(out) == len(enumerate_spans(docs[0], params.hyper.max_width))

    def test_model_strategies_cover_retained(self):
        params = make_params()
        docs = make_docs(1)
        out = score_pool("ment_ent", params, docs, np.random.default_rng(0))
        assert [s.span for s in out] == retained_spans(params, docs[0])

    def test_labeled_spans_excluded(self):
        params = make_params()
        docs = make_docs(1)
        spans = retained_spans(params, docs[0])
        labeled = frozenset({spans[0].key(), spans[3].key()})
        out = score_pool("ment_ent", params, docs, np.random.default_rng(0),
                         labeled_keys=labeled)
        assert len(out) == len(spans) - 2
        assert all(s.span.key() not in labeled for s in out)

    def test_entropy_strategies_ignore_rng(self):
        params = make_params()
        docs = make_docs(1)
        a = score_pool("joint_ent", params, docs, np.random.default_rng(0))
        b = score_pool("joint_ent", params, docs, np.random.default_rng(99))
        assert [s.score for s in a] == [s.score for s in b]

    def test_random_strategies_use_rng(self):
        params = make_params()
        docs = make_docs(1)
        a = score_pool("random_ment", params, docs, np.random.default_rng(0))
        b = score_pool("random_ment", params, docs, np.random.default_rng(99))
        assert [s.score for s in a] != [s.score for s in b]

    def test_output_in_document_then_span_order(self):
        params = make_params()
        docs = make_docs(2)
        out = score_pool("ment_ent", params, docs, np.random.default_rng(0))
        keys = [(s.span.doc_id, s.span.start, s.span.end) for s in out]
        doc_order = {d.doc_id: i for i, d in enumerate(docs)}
        indexed = [(doc_order[k[0]], k[1], k[2]) for k in keys]
        assert indexed == sorted(indexed)
