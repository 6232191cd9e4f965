"""Acquisition scoring for active learning.

Entropy strategies quantify model uncertainty about a span: whether it is a
mention at all (ment_ent), which cluster it joins (clust_ent), both chained
together (cond_ent, joint_ent), and a grouped-antecedent variant
(li_clust_ent).  Random baselines draw i.i.d. uniform scores.  All entropies
use natural log; probabilities are clamped to [1e-12, 1 - 1e-12] before logs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .corpus import Document, Span, enumerate_spans
from .clusterer import infer_document, _antecedent_distribution_at
from .scorer import ModelParams, retained_spans, span_representations

__all__ = [
    "STRATEGIES",
    "AcquisitionScore",
    "ment_ent",
    "clust_ent",
    "cond_ent",
    "joint_ent",
    "li_clust_ent",
    "score_pool",
]

STRATEGIES = (
    "random",
    "random_ment",
    "ment_ent",
    "clust_ent",
    "cond_ent",
    "joint_ent",
    "li_clust_ent",
)

_CLAMP = 1e-12


@dataclass(frozen=True)
class AcquisitionScore:
    span: Span
    score: float
    strategy: str

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not np.isfinite(self.score):
            raise ValueError("acquisition score must be finite")


def _clamp(p):
    return np.clip(p, _CLAMP, 1.0 - _CLAMP)


def ment_ent(p_mention: float) -> float:
    """Binary entropy of the mention probability."""
    p = float(_clamp(p_mention))
    return float(-p * np.log(p) - (1.0 - p) * np.log(1.0 - p))


def clust_ent(dist) -> float:
    """Entropy of the cluster-assignment distribution."""
    p = _clamp(np.asarray(dist, dtype=np.float64))
    return float(-np.sum(p * np.log(p)))


def cond_ent(p_mention: float, dist) -> float:
    """Clustering entropy conditioned on the span being a mention."""
    return float(p_mention) * clust_ent(dist)


def joint_ent(p_mention: float, dist) -> float:
    """ment_ent + cond_ent: chain-rule entropy of (is-mention, cluster)."""
    return ment_ent(p_mention) + cond_ent(p_mention, dist)


def li_clust_ent(antecedent_dist, cluster_membership) -> float:
    """Entropy after grouping antecedent probabilities by predicted cluster.

    ``antecedent_dist`` covers the preceding candidates with the dummy
    outcome last; ``cluster_membership`` gives each candidate's cluster id.
    The dummy outcome forms its own group.
    """
    dist = np.asarray(antecedent_dist, dtype=np.float64)
    membership = list(cluster_membership)
    if len(membership) != len(dist) - 1:
        raise ValueError(
            f"{len(membership)} memberships for {len(dist) - 1} candidates"
        )
    grouped: dict = {}
    for cluster, p in zip(membership, dist[:-1]):
        grouped[cluster] = grouped.get(cluster, 0.0) + float(p)
    groups = np.array(list(grouped.values()) + [float(dist[-1])])
    return clust_ent(groups)


def score_pool(strategy: str, params: ModelParams, docs: list[Document],
               rng: np.random.Generator,
               labeled_keys: frozenset = frozenset()) -> list[AcquisitionScore]:
    """Score every unlabeled pool span under a strategy.

    The pool is the retained spans of each document, except for ``random``
    which draws from all candidate spans up to max_width.  Output order is
    document order, then span order.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    out: list[AcquisitionScore] = []
    for doc in docs:
        if strategy == "random":
            spans = enumerate_spans(doc, params.hyper.max_width)
            scored = [(s, float(rng.random())) for s in spans]
        elif strategy == "random_ment":
            scored = [(s, float(rng.random())) for s in retained_spans(params, doc)]
        elif strategy == "ment_ent":
            spans = retained_spans(params, doc)
            _, s_m = span_representations(params, doc, spans)
            scored = [(s, ment_ent(float(p))) for s, p in zip(spans, expit(s_m))]
        elif strategy in ("clust_ent", "cond_ent", "joint_ent"):
            _, trace = infer_document(params, doc)
            scored = []
            for step in trace.steps:
                if strategy == "clust_ent":
                    value = clust_ent(step.distribution)
                elif strategy == "cond_ent":
                    value = cond_ent(step.p_mention, step.distribution)
                else:
                    value = joint_ent(step.p_mention, step.distribution)
                scored.append((step.span, value))
        else:  # li_clust_ent
            _, trace = infer_document(params, doc)
            retained = list(trace.retained)
            G, s_m = span_representations(params, doc, retained)
            # Cluster id per retained span from the unfiltered partition.
            membership = [0] * len(retained)
            n_open = 0
            for pos, step in enumerate(trace.steps):
                if step.chosen == len(step.cluster_ids):
                    membership[pos] = n_open
                    n_open += 1
                else:
                    membership[pos] = step.chosen
            scored = []
            for pos, span in enumerate(retained):
                dist = _antecedent_distribution_at(params, G, s_m, pos)
                scored.append((span, li_clust_ent(dist, membership[:pos])))

        for span, value in scored:
            if span.key() in labeled_keys:
                continue
            out.append(AcquisitionScore(span=span, score=value, strategy=strategy))
    return out
