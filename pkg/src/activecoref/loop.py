"""Active learning orchestration.

Each cycle scores the unlabeled pool with the previous cycle's model, selects
spans under a per-cycle label budget k and document reading budget m, labels
them (simulated oracle or annotation queue), unions them into the pool, and
retrains from the fixed source checkpoint on everything labeled so far.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .acquisition import STRATEGIES, AcquisitionScore, score_pool
from .analysis import ErrorCounts, SpanTypeCounts, classify_sampled_spans, error_report
from .clusterer import infer_document
from .corpus import Document, Span, load_corpus
from .metrics import EvalResult, evaluate_documents
from .scorer import Hyperparams, ModelParams, load_params, save_params, train

__all__ = [
    "CycleConfig",
    "Label",
    "LabeledPool",
    "CycleReport",
    "select_with_read_budget",
    "select_spread",
    "oracle_label",
    "run_cycle",
    "run_simulation",
    "simulate_to_files",
    "run_grid",
    "evaluate_model",
    "CSV_COLUMNS",
    "TIMING_COLUMNS",
    "write_cycle_csv",
    "write_timing_csv",
    "write_manifest",
    "read_manifest",
    "aggregate_reports",
]

logger = logging.getLogger(__name__)

VERDICTS = ("antecedent", "no_prior_antecedent", "not_a_mention")


@dataclass(frozen=True)
class Label:
    """One span annotation: its antecedent, or one of the two escape verdicts."""

    query: Span
    kind: str
    antecedent: Span | None = None
    timestamp: str | None = None
    annotator_id: str = "oracle"

    def __post_init__(self) -> None:
        if self.kind not in VERDICTS:
            raise ValueError(f"unknown verdict kind {self.kind!r}")
        if self.kind == "antecedent":
            a = self.antecedent
            if a is None:
                raise ValueError("antecedent verdict needs an antecedent span")
            if a.doc_id != self.query.doc_id:
                raise ValueError("antecedent must be in the query's document")
            if (a.start, a.end) >= (self.query.start, self.query.end):
                raise ValueError("antecedent must precede the query span")
        elif self.antecedent is not None:
            raise ValueError(f"{self.kind} verdict cannot carry an antecedent")

    def to_record(self) -> dict:
        record = {
            "doc_id": self.query.doc_id,
            "start": self.query.start,
            "end": self.query.end,
            "kind": self.kind,
            "annotator_id": self.annotator_id,
        }
        if self.antecedent is not None:
            record["antecedent"] = [self.antecedent.start, self.antecedent.end]
        if self.timestamp is not None:
            record["timestamp"] = self.timestamp
        return record


class LabeledPool:
    """Monotone pool of labels, at most one per span."""

    def __init__(self) -> None:
        self._labels: dict[tuple[str, int, int], Label] = {}
        self._cycle: dict[tuple[str, int, int], int] = {}

    @property
    def n_labels(self) -> int:
        return len(self._labels)

    def keys(self) -> frozenset:
        return frozenset(self._labels)

    def add(self, label: Label, cycle: int = 0) -> None:
        key = label.query.key()
        if key in self._labels:
            raise ValueError(f"span {key} already labeled")
        self._labels[key] = label
        self._cycle[key] = cycle

    def get(self, span: Span) -> Label | None:
        return self._labels.get(span.key())

    def iter_labels(self):
        for key in sorted(self._labels):
            yield self._labels[key]

    def labels_from_cycle(self, cycle: int) -> list[Label]:
        return [self._labels[k] for k in sorted(self._labels)
                if self._cycle[k] == cycle]

    def document_ids(self) -> set[str]:
        return {key[0] for key in self._labels}


@dataclass(frozen=True)
class CycleConfig:
    """One run's budget schedule: k labels per cycle over T cycles, reading
    at most m documents per cycle (None = unconstrained)."""

    strategy: str = "ment_ent"
    k: int = 50
    m: int | None = 1
    cycles: int = 6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1 or None for unconstrained")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")

    @property
    def m_str(self) -> str:
        return "unconstrained" if self.m is None else str(self.m)

    def run_id(self) -> str:
        return f"{self.strategy}-k{self.k}-m{self.m_str}-s{self.seed}"


@dataclass(frozen=True)
class CycleReport:
    run_id: str
    cycle: int
    strategy: str
    k: int
    m: int | None
    eval: EvalResult
    n_labels: int
    n_docs_read: int
    span_types: SpanTypeCounts
    errors: ErrorCounts
    sample_seconds: float
    train_seconds: float


CSV_COLUMNS = (
    "run_id", "cycle", "strategy", "k", "m",
    "avg_f1", "muc_f1", "b3_f1", "ceaf_f1", "mention_f1",
    "n_labels", "n_docs_read",
    "entity_mentions", "non_entities", "pronouns", "singletons",
    "missing_entity", "extra_entity", "missing_mention", "extra_mention",
    "divided_entity", "conflated_entity",
    "sample_seconds", "train_seconds",
)

# Wall-clock values live in a sidecar so reruns of the same config produce
# byte-identical per-cycle CSVs; the main CSV keeps the columns but leaves
# them blank.
TIMING_COLUMNS = ("run_id", "cycle", "strategy", "sample_seconds", "train_seconds")


def report_row(report: CycleReport) -> dict:
    m_str = "unconstrained" if report.m is None else str(report.m)
    return {
        "run_id": report.run_id,
        "cycle": report.cycle,
        "strategy": report.strategy,
        "k": report.k,
        "m": m_str,
        "avg_f1": f"{report.eval.avg_f1:.6f}",
        "muc_f1": f"{report.eval.muc_f1:.6f}",
        "b3_f1": f"{report.eval.b3_f1:.6f}",
        "ceaf_f1": f"{report.eval.ceaf_f1:.6f}",
        "mention_f1": f"{report.eval.mention_f1:.6f}",
        "n_labels": report.n_labels,
        "n_docs_read": report.n_docs_read,
        "entity_mentions": report.span_types.entity_mentions,
        "non_entities": report.span_types.non_entities,
        "pronouns": report.span_types.pronouns,
        "singletons": report.span_types.singletons,
        "missing_entity": report.errors.missing_entity,
        "extra_entity": report.errors.extra_entity,
        "missing_mention": report.errors.missing_mention,
        "extra_mention": report.errors.extra_mention,
        "divided_entity": report.errors.divided_entity,
        "conflated_entity": report.errors.conflated_entity,
        "sample_seconds": "",
        "train_seconds": "",
    }


def timing_row(report: CycleReport) -> dict:
    return {
        "run_id": report.run_id,
        "cycle": report.cycle,
        "strategy": report.strategy,
        "sample_seconds": f"{report.sample_seconds:.3f}",
        "train_seconds": f"{report.train_seconds:.3f}",
    }


def select_with_read_budget(scored: list[AcquisitionScore], k: int,
                            m: int | None) -> list[Span]:
    """Top-k spans under the m-document reading budget.

    Spans sort by score descending with (doc_id, start, end) tie order.  With
    m constrained, the documents of the top-m spans define the readable set;
    selection is the top-k among spans in those documents.  Fewer than k
    survivors means all of them are returned (logged).
    """
    if not scored:
        raise ValueError("nothing to select from")
    ranked = sorted(
        scored,
        key=lambda a: (-a.score, a.span.doc_id, a.span.start, a.span.end),
    )
    if m is not None:
        allowed = {a.span.doc_id for a in ranked[:m]}
        ranked = [a for a in ranked if a.span.doc_id in allowed]
    selected = [a.span for a in ranked[:k]]
    if len(selected) < k:
        logger.info("selected %d spans (budget k=%d): pool exhausted",
                    len(selected), k)
    return selected


def select_spread(scored: list[AcquisitionScore], k: int,
                  k_per_doc: int = 1) -> list[Span]:
    """Top spans spread across documents, at most k_per_doc from each before
    the cap relaxes by one and the scan repeats."""
    if k_per_doc < 1:
        raise ValueError("k_per_doc must be >= 1")
    ranked = sorted(
        scored,
        key=lambda a: (-a.score, a.span.doc_id, a.span.start, a.span.end),
    )
    selected: list[Span] = []
    chosen = set()
    cap = k_per_doc
    while len(selected) < k and len(selected) < len(ranked):
        counts: dict[str, int] = {}
        for a in ranked:
            if len(selected) >= k:
                break
            if a.span.key() in chosen:
                counts[a.span.doc_id] = counts.get(a.span.doc_id, 0) + 1
                continue
            if counts.get(a.span.doc_id, 0) >= cap:
                continue
            selected.append(a.span)
            chosen.add(a.span.key())
            counts[a.span.doc_id] = counts.get(a.span.doc_id, 0) + 1
        cap += k_per_doc
    return selected


def oracle_label(gold: Document, query: Span, timestamp: str | None = None) -> Label:
    """Label a query from gold annotation.

    Exact-match mention identity; the antecedent is the nearest preceding
    mention of the same gold cluster, and the cluster's earliest mention gets
    the no-prior-antecedent verdict.
    """
    if query.doc_id != gold.doc_id:
        raise ValueError(f"query {query} is not in document {gold.doc_id!r}")
    if query.end > gold.n_tokens:
        raise ValueError(f"query {query} exceeds document length")
    index = gold.mention_cluster_index()
    key = (query.start, query.end)
    if key not in index:
        return Label(query=query, kind="not_a_mention", timestamp=timestamp)
    cluster = sorted(gold.gold_clusters[index[key]])
    pos = cluster.index(key)
    if pos == 0:
        return Label(query=query, kind="no_prior_antecedent", timestamp=timestamp)
    prev = cluster[pos - 1]
    return Label(
        query=query,
        kind="antecedent",
        antecedent=Span(gold.doc_id, prev[0], prev[1]),
        timestamp=timestamp,
    )


def evaluate_model(params: ModelParams, test_docs: list[Document],
                   strip_singletons: bool = False) -> tuple[EvalResult, ErrorCounts]:
    """Score a model on held-out documents and aggregate the error taxonomy."""
    predictions = {}
    errors = ErrorCounts()
    for doc in test_docs:
        clusters, _ = infer_document(params, doc)
        predictions[doc.doc_id] = clusters
        gold = [[(s, e) for s, e in c] for c in doc.gold_clusters]
        pred = [[(s.start, s.end) for s in c] for c in clusters]
        errors = errors + error_report(gold, pred)
    result = evaluate_documents(test_docs, predictions,
                                strip_singletons=strip_singletons)
    return result, errors


@dataclass
class LoopState:
    """Mutable state threaded through cycles."""

    h0: ModelParams
    current: ModelParams
    pool: LabeledPool
    corpus: list[Document]


def run_cycle(state: LoopState, config: CycleConfig, cycle: int,
              test_docs: list[Document]) -> CycleReport:
    """One cycle: score with the current model, select, label, retrain from
    the source, evaluate.  Mutates ``state`` (pool and current model)."""
    docs_by_id = {d.doc_id: d for d in state.corpus}
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(config.seed, cycle, 17))
    )

    t0 = time.perf_counter()
    scored = score_pool(config.strategy, state.current, state.corpus, rng,
                        labeled_keys=state.pool.keys())
    if scored:
        selected = select_with_read_budget(scored, config.k, config.m)
    else:
        selected = []
        logger.info("cycle %d: unlabeled pool is empty", cycle)
    sample_seconds = time.perf_counter() - t0

    selected_docs = {s.doc_id for s in selected}
    if config.m is not None and len(selected_docs) > config.m:
        raise AssertionError(
            f"cycle {cycle} read {len(selected_docs)} documents, budget {config.m}"
        )
    for span in selected:
        state.pool.add(oracle_label(docs_by_id[span.doc_id], span), cycle=cycle)

    if state.pool.n_labels == 0:
        raise RuntimeError(f"cycle {cycle}: no labels after selection; aborting")

    t0 = time.perf_counter()
    state.current = train(state.h0, state.pool, state.corpus,
                          state.h0.hyper, mode="discrete")
    train_seconds = time.perf_counter() - t0

    result, errors = evaluate_model(state.current, test_docs)
    span_types = classify_sampled_spans(list(state.pool.iter_labels()), docs_by_id)
    return CycleReport(
        run_id=config.run_id(),
        cycle=cycle,
        strategy=config.strategy,
        k=config.k,
        m=config.m,
        eval=result,
        n_labels=state.pool.n_labels,
        n_docs_read=len(state.pool.document_ids()),
        span_types=span_types,
        errors=errors,
        sample_seconds=sample_seconds,
        train_seconds=train_seconds,
    )


def run_simulation(h0: ModelParams, target_docs: list[Document],
                   test_docs: list[Document], config: CycleConfig
                   ) -> tuple[list[CycleReport], ModelParams, LabeledPool]:
    """T cycles of oracle-labeled active learning from a fixed source model.

    The training seed is pinned to the run seed so a cycle that adds no new
    labels reproduces the previous cycle's model bit-exactly.
    """
    hyper = replace(h0.hyper, seed=config.seed)
    h0 = ModelParams(
        {k: v.copy() for k, v in h0.arrays.items()}, hyper, h0.n_features,
        featurizer=h0.featurizer,
    )
    state = LoopState(h0=h0, current=h0, pool=LabeledPool(), corpus=target_docs)
    reports = []
    for cycle in range(1, config.cycles + 1):
        reports.append(run_cycle(state, config, cycle, test_docs))
    return reports, state.current, state.pool


# ---------------------------------------------------------------------------
# Run artifacts.

def write_cycle_csv(path: str, reports: list[CycleReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerow(report_row(report))


def write_timing_csv(path: str, reports: list[CycleReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=TIMING_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerow(timing_row(report))


def write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def simulate_to_files(source_path: str, target_path: str, test_path: str,
                       config: CycleConfig, out_dir: str) -> dict:
    """Run one simulation and write its CSV, timing sidecar, and manifest.

    Artifact paths in the manifest are basenames relative to the manifest's
    own directory, so two runs of the same config in different directories
    produce byte-identical manifests and per-cycle CSVs.
    """
    h0 = load_params(source_path)
    target_docs = load_corpus(target_path)
    test_docs = load_corpus(test_path)
    reports, final, pool = run_simulation(h0, target_docs, test_docs, config)
    run_id = config.run_id()
    write_cycle_csv(os.path.join(out_dir, f"{run_id}.csv"), reports)
    write_timing_csv(os.path.join(out_dir, f"{run_id}.timing.csv"), reports)
    save_params(final, os.path.join(out_dir, f"{run_id}.model.npz"))
    manifest = {
        "run_id": run_id,
        "config": {
            "strategy": config.strategy,
            "k": config.k,
            "m": config.m,
            "cycles": config.cycles,
            "seed": config.seed,
        },
        "inputs": {
            "source_checkpoint": source_path,
            "target_corpus": target_path,
            "test_corpus": test_path,
        },
        "artifacts": {
            "cycle_csv": f"{run_id}.csv",
            "timing_csv": f"{run_id}.timing.csv",
            "final_model": f"{run_id}.model.npz",
        },
        "n_labels": pool.n_labels,
        "completed": True,
    }
    write_manifest(os.path.join(out_dir, f"{run_id}.manifest.json"), manifest)
    return manifest


def _grid_worker(args) -> dict:
    return simulate_to_files(*args)


def run_grid(source_path: str, target_path: str, test_path: str,
             configs: list[CycleConfig], repeats: int = 5,
             out_dir: str = ".", jobs: int = 1,
             resume: bool = True) -> list[dict]:
    """Run the (strategy, k, m) grid with ``repeats`` seeds per config.

    Run seeds are config.seed + repeat index.  Existing completed manifests
    are skipped when ``resume`` is set.  Returns aggregate rows
    (mean/variance per config and cycle across repeats).
    """
    os.makedirs(out_dir, exist_ok=True)
    runs = []
    for config in configs:
        for r in range(repeats):
            runs.append(replace(config, seed=config.seed + r))

    pending = []
    for config in runs:
        manifest_path = os.path.join(out_dir, f"{config.run_id()}.manifest.json")
        if resume and os.path.exists(manifest_path):
            manifest = read_manifest(manifest_path)
            if manifest.get("completed"):
                logger.info("skipping completed run %s", config.run_id())
                continue
        pending.append(config)

    work = [(source_path, target_path, test_path, c, out_dir) for c in pending]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_grid_worker, work))
    else:
        for args in work:
            _grid_worker(args)

    rows = []
    for config in runs:
        csv_path = os.path.join(out_dir, f"{config.run_id()}.csv")
        with open(csv_path, "r", encoding="utf-8") as handle:
            rows.extend(csv.DictReader(handle))
    return aggregate_reports(rows)


_AGG_METRICS = ("avg_f1", "muc_f1", "b3_f1", "ceaf_f1", "mention_f1")


def aggregate_reports(rows: list[dict]) -> list[dict]:
    """Mean/variance per (strategy, k, m, cycle) across run seeds.

    Variance is the population variance over repeats.
    """
    grouped: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["strategy"], int(row["k"]), row["m"], int(row["cycle"]))
        grouped.setdefault(key, []).append(row)
    out = []
    for key in sorted(grouped, key=lambda k: (k[0], k[1], str(k[2]), k[3])):
        strategy, k, m, cycle = key
        group = grouped[key]
        agg = {
            "strategy": strategy,
            "k": k,
            "m": m,
            "cycle": cycle,
            "n_runs": len(group),
        }
        for metric in _AGG_METRICS:
            values = np.array([float(r[metric]) for r in group])
            agg[f"{metric}_mean"] = float(values.mean())
            agg[f"{metric}_var"] = float(values.var())
        agg["n_labels_mean"] = float(
            np.mean([float(r["n_labels"]) for r in group])
        )
        out.append(agg)
    return out
