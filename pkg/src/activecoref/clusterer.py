"""Incremental clustering inference.

Retained spans are processed in document order.  Each span is scored against
every open cluster; it joins the argmax cluster when that score is positive,
otherwise it opens a new cluster.  Joining updates the cluster representation
through a learned gate.  The per-span assignment distribution (softmax over
cluster scores plus the new-cluster outcome at score 0) is recorded at
processing time for the acquisition strategies.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .corpus import Document, Span
from .scorer import (
    ModelParams,
    N_DIST_BUCKETS,
    _gate_fwd,
    _mlp_fwd,
    _phi_onehot,
    distance_bucket,
    retained_spans,
    span_representations,
)

__all__ = [
    "TraceStep",
    "InferenceTrace",
    "update_rep",
    "infer_document",
    "cluster_distribution",
    "antecedent_distribution",
    "dump_trace",
]


@dataclass(frozen=True)
class TraceStep:
    """One processed span: outcome scores at processing time.

    ``cluster_ids`` names the open clusters in creation order; the final
    outcome of ``scores``/``distribution`` is the new-cluster option.
    ``chosen`` indexes into those outcomes.
    """

    span: Span
    p_mention: float
    cluster_ids: tuple[int, ...]
    scores: np.ndarray
    distribution: np.ndarray
    chosen: int


@dataclass(frozen=True)
class InferenceTrace:
    doc_id: str
    retained: tuple[Span, ...]
    steps: tuple[TraceStep, ...]
    peak_live_reps: int

    def step_for(self, span: Span) -> TraceStep:
        for step in self.steps:
            if step.span == span:
                return step
        raise KeyError(f"span {span} was not processed in this trace")


def update_rep(g_c: np.ndarray, g_x: np.ndarray, gate: float) -> np.ndarray:
    """Convex combination gate*g_c + (1-gate)*g_x."""
    if g_c.shape != g_x.shape:
        raise ValueError(f"shape mismatch: {g_c.shape} vs {g_x.shape}")
    if not 0.0 <= gate <= 1.0:
        raise ValueError(f"gate must be in [0, 1], got {gate}")
    return gate * g_c + (1.0 - gate) * g_x


def _score_against_clusters(params: ModelParams, g_x: np.ndarray, s_m_x: float,
                            reps: np.ndarray, buckets: np.ndarray) -> np.ndarray:
    """s(x, c) for a batch of cluster representations, eval mode."""
    if reps.shape[0] == 0:
        return np.zeros(0)
    s_m_c, _ = _mlp_fwd(params, "m", reps, None)
    J = reps.shape[0]
    phi = np.zeros((J, N_DIST_BUCKETS))
    phi[np.arange(J), buckets] = 1.0
    X = np.concatenate(
        [np.tile(g_x, (J, 1)), reps, g_x[None, :] * reps, phi], axis=1
    )
    s_a, _ = _mlp_fwd(params, "a", X, None)
    return s_m_x + s_m_c + s_a


def infer_document(
    params: ModelParams,
    doc: Document,
    mention_threshold: float | None = None,
) -> tuple[tuple[tuple[Span, ...], ...], InferenceTrace]:
    """Cluster the document's retained spans.

    Returns the predicted clusters (singletons whose span has
    p_mention < mention_threshold are dropped) and the full trace.  The
    clusterer keeps exactly one live representation per open cluster.
    """
    threshold = (
        params.hyper.mention_threshold if mention_threshold is None
        else mention_threshold
    )
    retained = retained_spans(params, doc)
    G, s_m = span_representations(params, doc, retained)
    p_mention = expit(s_m)

    members: list[list[int]] = []
    reps: list[np.ndarray] = []
    last_pos: list[int] = []
    steps: list[TraceStep] = []
    peak = 0

    for i, span in enumerate(retained):
        buckets = np.array(
            [distance_bucket(i - lp - 1) for lp in last_pos], dtype=np.int64
        )
        scores = _score_against_clusters(
            params, G[i], float(s_m[i]),
            np.stack(reps) if reps else np.zeros((0, params.rep_dim)), buckets
        )
        outcomes = np.append(scores, 0.0)
        lse = logsumexp(outcomes)
        dist = np.exp(outcomes - lse)

        if len(scores) > 0 and float(scores[int(np.argmax(scores))]) > 0.0:
            chosen = int(np.argmax(scores))
            e, _ = _gate_fwd(params, reps[chosen], G[i])
            reps[chosen] = update_rep(reps[chosen], G[i], e)
            members[chosen].append(i)
            last_pos[chosen] = i
        else:
            chosen = len(scores)
            members.append([i])
            reps.append(G[i].copy())
            last_pos.append(i)
        peak = max(peak, len(reps))

        steps.append(
            TraceStep(
                span=span,
                p_mention=float(p_mention[i]),
                cluster_ids=tuple(range(len(scores))),
                scores=outcomes,
                distribution=dist,
                chosen=chosen,
            )
        )

    clusters = []
    for member_ids in members:
        if len(member_ids) == 1 and p_mention[member_ids[0]] < threshold:
            continue
        clusters.append(tuple(retained[i] for i in member_ids))

    trace = InferenceTrace(
        doc_id=doc.doc_id,
        retained=tuple(retained),
        steps=tuple(steps),
        peak_live_reps=peak,
    )
    return tuple(clusters), trace


def full_partition(trace: InferenceTrace) -> tuple[tuple[Span, ...], ...]:
    """Clusters over all retained spans, before singleton filtering."""
    members: dict[int, list[Span]] = {}
    open_clusters = 0
    for step in trace.steps:
        if step.chosen == len(step.cluster_ids):
            members[open_clusters] = [step.span]
            open_clusters += 1
        else:
            members[step.chosen].append(step.span)
    return tuple(tuple(v) for _, v in sorted(members.items()))


def cluster_distribution(trace: InferenceTrace, span: Span) -> np.ndarray:
    """Assignment distribution recorded when the span was processed."""
    return trace.step_for(span).distribution


def antecedent_distribution(params: ModelParams, doc: Document,
                            span: Span) -> np.ndarray:
    """Softmax over pairwise scores against each preceding retained span,
    with the dummy outcome (score 0) last."""
    retained = retained_spans(params, doc)
    try:
        pos = retained.index(span)
    except ValueError:
        raise ValueError(f"span {span} is not retained in {doc.doc_id!r}")
    G, s_m = span_representations(params, doc, retained)
    return _antecedent_distribution_at(params, G, s_m, pos)


def _antecedent_distribution_at(params: ModelParams, G: np.ndarray,
                                s_m: np.ndarray, pos: int) -> np.ndarray:
    buckets = np.array([distance_bucket(pos - j - 1) for j in range(pos)],
                       dtype=np.int64)
    scores = _score_against_clusters(
        params, G[pos], float(s_m[pos]), G[:pos], buckets
    )
    outcomes = np.append(scores, 0.0)
    return np.exp(outcomes - logsumexp(outcomes))


def dump_trace(trace: InferenceTrace, path: str) -> None:
    """Line-delimited JSON, one record per processed span."""
    with open(path, "w", encoding="utf-8") as handle:
        for step in trace.steps:
            record = {
                "doc_id": trace.doc_id,
                "start": step.span.start,
                "end": step.span.end,
                "p_mention": step.p_mention,
                "scores": [float(s) for s in step.scores],
                "distribution": [float(p) for p in step.distribution],
                "chosen": step.chosen,
            }
            handle.write(json.dumps(record) + "\n")
