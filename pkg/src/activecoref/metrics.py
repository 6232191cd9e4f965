"""Coreference evaluation: MUC, B-cubed, CEAF (phi4), and mention F1.

Each metric exposes a count-level function returning
(p_num, p_den, r_num, r_den) so corpus scores aggregate by summing counts
across documents (micro-average), plus a convenience wrapper returning
(P, R, F1) directly.  A clustering is a list of clusters, each a collection
of hashable mention identifiers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "EvalResult",
    "muc",
    "b_cubed",
    "ceaf_phi4",
    "mention_f1",
    "muc_counts",
    "b_cubed_counts",
    "ceaf_phi4_counts",
    "mention_counts",
    "evaluate_clusterings",
    "evaluate_documents",
    "strip_singleton_clusters",
]


def _validate(clustering) -> list[set]:
    seen = set()
    out = []
    for cluster in clustering:
        members = set(cluster)
        if len(members) != len(list(cluster)):
            raise ValueError("duplicate mention within a cluster")
        overlap = seen & members
        if overlap:
            raise ValueError(f"mention {next(iter(overlap))!r} in two clusters")
        seen |= members
        out.append(members)
    return out


def _prf(p_num, p_den, r_num, r_den) -> tuple[float, float, float]:
    p = p_num / p_den if p_den else 0.0
    r = r_num / r_den if r_den else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _mention_to_cluster(clusters: list[set]) -> dict:
    index = {}
    for i, cluster in enumerate(clusters):
        for m in cluster:
            index[m] = i
    return index


def _muc_halves(keys: list[set], responses: list[set]) -> tuple[float, float]:
    """Vilain link counts of `keys` against `responses`: (numerator, denominator)."""
    resp_index = _mention_to_cluster(responses)
    num = 0
    den = 0
    for key in keys:
        partitions = {resp_index[m] for m in key if m in resp_index}
        unaligned = sum(1 for m in key if m not in resp_index)
        num += len(key) - len(partitions) - unaligned
        den += len(key) - 1
    return float(num), float(den)


def muc_counts(gold, pred) -> tuple[float, float, float, float]:
    g = _validate(gold)
    p = _validate(pred)
    r_num, r_den = _muc_halves(g, p)
    p_num, p_den = _muc_halves(p, g)
    return p_num, p_den, r_num, r_den


def muc(gold, pred) -> tuple[float, float, float]:
    return _prf(*muc_counts(gold, pred))


def _b_cubed_half(keys: list[set], responses: list[set]) -> tuple[float, float]:
    resp_index = _mention_to_cluster(responses)
    num = 0.0
    den = 0
    for key in keys:
        for m in key:
            den += 1
            if m in resp_index:
                resp = responses[resp_index[m]]
                num += len(key & resp) / len(key)
    return num, float(den)


def b_cubed_counts(gold, pred) -> tuple[float, float, float, float]:
    g = _validate(gold)
    p = _validate(pred)
    r_num, r_den = _b_cubed_half(g, p)
    p_num, p_den = _b_cubed_half(p, g)
    return p_num, p_den, r_num, r_den


def b_cubed(gold, pred) -> tuple[float, float, float]:
    return _prf(*b_cubed_counts(gold, pred))


def ceaf_phi4_counts(gold, pred) -> tuple[float, float, float, float]:
    g = _validate(gold)
    p = _validate(pred)
    if not g or not p:
        return 0.0, float(len(p)), 0.0, float(len(g))
    phi = np.zeros((len(g), len(p)))
    for i, key in enumerate(g):
        for j, resp in enumerate(p):
            phi[i, j] = 2.0 * len(key & resp) / (len(key) + len(resp))
    rows, cols = linear_sum_assignment(-phi)
    total = float(phi[rows, cols].sum())
    return total, float(len(p)), total, float(len(g))


def ceaf_phi4(gold, pred) -> tuple[float, float, float]:
    return _prf(*ceaf_phi4_counts(gold, pred))


def mention_counts(gold_mentions, pred_mentions) -> tuple[float, float, float, float]:
    g = set(gold_mentions)
    p = set(pred_mentions)
    hit = float(len(g & p))
    return hit, float(len(p)), hit, float(len(g))


def mention_f1(gold_mentions, pred_mentions) -> tuple[float, float, float]:
    return _prf(*mention_counts(gold_mentions, pred_mentions))


@dataclass(frozen=True)
class EvalResult:
    muc_p: float
    muc_r: float
    muc_f1: float
    b3_p: float
    b3_r: float
    b3_f1: float
    ceaf_p: float
    ceaf_r: float
    ceaf_f1: float
    mention_p: float
    mention_r: float
    mention_f1: float
    avg_f1: float

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def strip_singleton_clusters(clustering):
    return [c for c in clustering if len(list(c)) > 1]


def evaluate_clusterings(pairs, strip_singletons: bool = False) -> EvalResult:
    """Micro-averaged scores over (gold, pred) clustering pairs.

    ``pairs`` yields one (gold clustering, predicted clustering) per document.
    With ``strip_singletons`` predicted size-1 clusters are dropped before
    scoring.
    """
    sums = {m: np.zeros(4) for m in ("muc", "b3", "ceaf", "mention")}
    for gold, pred in pairs:
        if strip_singletons:
            pred = strip_singleton_clusters(pred)
        sums["muc"] += muc_counts(gold, pred)
        sums["b3"] += b_cubed_counts(gold, pred)
        sums["ceaf"] += ceaf_phi4_counts(gold, pred)
        gold_mentions = [m for c in gold for m in c]
        pred_mentions = [m for c in pred for m in c]
        sums["mention"] += mention_counts(gold_mentions, pred_mentions)

    muc_p, muc_r, muc_f = _prf(*sums["muc"])
    b3_p, b3_r, b3_f = _prf(*sums["b3"])
    ceaf_p, ceaf_r, ceaf_f = _prf(*sums["ceaf"])
    men_p, men_r, men_f = _prf(*sums["mention"])
    return EvalResult(
        muc_p=muc_p, muc_r=muc_r, muc_f1=muc_f,
        b3_p=b3_p, b3_r=b3_r, b3_f1=b3_f,
        ceaf_p=ceaf_p, ceaf_r=ceaf_r, ceaf_f1=ceaf_f,
        mention_p=men_p, mention_r=men_r, mention_f1=men_f,
        avg_f1=(muc_f + b3_f + ceaf_f) / 3.0,
    )


def evaluate_documents(gold_docs, predictions: dict,
                       strip_singletons: bool = False) -> EvalResult:
    """Score predictions keyed by doc_id against documents' gold clusters.

    Cluster members are compared as (start, end) pairs.  Documents missing
    from ``predictions`` count as empty predictions.
    """
    pairs = []
    for doc in gold_docs:
        gold = [[(s, e) for s, e in cluster] for cluster in doc.gold_clusters]
        pred_clusters = predictions.get(doc.doc_id, ())
        pred = [
            [(sp.start, sp.end) if hasattr(sp, "start") else tuple(sp) for sp in cluster]
            for cluster in pred_clusters
        ]
        pairs.append((gold, pred))
    return evaluate_clusterings(pairs, strip_singletons=strip_singletons)
