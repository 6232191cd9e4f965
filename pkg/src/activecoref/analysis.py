"""Post-hoc analyses: sampled-span composition, error taxonomy, timing.

The error taxonomy aligns each predicted cluster to the gold cluster it
overlaps most (ties: larger gold cluster, then lower gold index) and counts
six failure kinds.  This is an alignment-based simplification of the full
transformation-based taxonomy; it reproduces the categories at aggregate
granularity, which is what the reports compare.
"""
from __future__ import annotations

from dataclasses import dataclass

from .corpus import PRONOUNS, Document

__all__ = [
    "SpanTypeCounts",
    "ErrorCounts",
    "classify_sampled_spans",
    "error_report",
    "timing_report",
]


@dataclass(frozen=True)
class SpanTypeCounts:
    entity_mentions: int = 0
    non_entities: int = 0
    pronouns: int = 0
    singletons: int = 0

    def __add__(self, other: "SpanTypeCounts") -> "SpanTypeCounts":
        return SpanTypeCounts(
            self.entity_mentions + other.entity_mentions,
            self.non_entities + other.non_entities,
            self.pronouns + other.pronouns,
            self.singletons + other.singletons,
        )

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class ErrorCounts:
    missing_entity: int = 0
    extra_entity: int = 0
    missing_mention: int = 0
    extra_mention: int = 0
    divided_entity: int = 0
    conflated_entity: int = 0

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            *(getattr(self, n) + getattr(other, n) for n in self.__dataclass_fields__)
        )

    def total(self) -> int:
        return sum(getattr(self, n) for n in self.__dataclass_fields__)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def classify_sampled_spans(labels, gold) -> SpanTypeCounts:
    """Type counts for sampled spans against gold annotation.

    A span is an entity mention iff it exactly matches a gold mention; a
    singleton iff that mention's cluster has size 1; a pronoun iff it is a
    single token from the pronoun lexicon (independent of mention status).
    ``gold`` is a list of Documents or a doc_id -> Document mapping.
    """
    docs = gold if isinstance(gold, dict) else {d.doc_id: d for d in gold}
    entity = non_entity = pronoun = singleton = 0
    for label in labels:
        span = label.query
        if span.doc_id not in docs:
            raise ValueError(f"label references unknown document {span.doc_id!r}")
        doc = docs[span.doc_id]
        index = doc.mention_cluster_index()
        key = (span.start, span.end)
        if key in index:
            entity += 1
            if len(doc.gold_clusters[index[key]]) == 1:
                singleton += 1
        else:
            non_entity += 1
        if span.width == 1 and doc.tokens[span.start].lower() in PRONOUNS:
            pronoun += 1
    return SpanTypeCounts(
        entity_mentions=entity,
        non_entities=non_entity,
        pronouns=pronoun,
        singletons=singleton,
    )


def error_report(gold, pred) -> ErrorCounts:
    """Count the six error kinds between two clusterings of one document.

    Clusterings are lists of clusters of hashable mention ids.  Each
    predicted cluster aligns to the gold cluster it overlaps most; ties go
    to the larger gold cluster, then the lower gold index.
    """
    gold_sets = [set(c) for c in gold]
    pred_sets = [set(c) for c in pred]

    gold_of = {}
    for gi, g in enumerate(gold_sets):
        for m in g:
            gold_of[m] = gi

    aligned_to: dict[int, list[int]] = {gi: [] for gi in range(len(gold_sets))}
    extra_entity = 0
    for pi, p in enumerate(pred_sets):
        overlaps = [(len(p & g), len(g), -gi) for gi, g in enumerate(gold_sets)]
        if not overlaps or max(o[0] for o in overlaps) == 0:
            extra_entity += 1
            continue
        best = max(range(len(gold_sets)), key=lambda gi: overlaps[gi])
        aligned_to[best].append(pi)

    missing_entity = 0
    missing_mention = 0
    extra_mention = 0
    divided = 0
    for gi, g in enumerate(gold_sets):
        touched = {pi for pi, p in enumerate(pred_sets) if p & g}
        if not touched:
            missing_entity += 1
            continue
        if len(touched) >= 2:
            divided += len(touched) - 1
        covered = set()
        for pi in aligned_to[gi]:
            covered |= pred_sets[pi]
            extra_mention += len(pred_sets[pi] - g)
        missing_mention += len(g - covered)

    conflated = 0
    for p in pred_sets:
        gold_touched = {gold_of[m] for m in p if m in gold_of}
        if len(gold_touched) >= 2:
            conflated += len(gold_touched) - 1

    return ErrorCounts(
        missing_entity=missing_entity,
        extra_entity=extra_entity,
        missing_mention=missing_mention,
        extra_mention=extra_mention,
        divided_entity=divided,
        conflated_entity=conflated,
    )


def timing_report(rows) -> list[dict]:
    """Per-strategy mean sampling/training seconds over per-cycle rows.

    ``rows`` are dicts with at least strategy, sample_seconds, train_seconds
    (the per-cycle CSV schema).  One output row per strategy, sorted.
    """
    grouped: dict[str, list] = {}
    for row in rows:
        grouped.setdefault(str(row["strategy"]), []).append(row)
    out = []
    for strategy in sorted(grouped):
        batch = grouped[strategy]
        n = len(batch)
        out.append(
            {
                "strategy": strategy,
                "n_batches": n,
                "mean_sample_seconds": sum(float(r["sample_seconds"]) for r in batch) / n,
                "mean_train_seconds": sum(float(r["train_seconds"]) for r in batch) / n,
            }
        )
    return out
