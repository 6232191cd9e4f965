"""HTTP backend for human annotation sessions.

A session owns an ordered queue of sampled spans.  The server enforces a
single-active-query protocol: labels must arrive for the current head of the
queue, duplicates are acknowledged idempotently, and out-of-order or invalid
submissions are rejected.  Per-session mutations are serialized behind a
lock; cycle training runs on a background thread so labeling never blocks.
"""
from __future__ import annotations

import threading
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .acquisition import STRATEGIES, score_pool
from .corpus import Document, Span
from .loop import Label, LabeledPool, select_spread, select_with_read_budget
from .scorer import ModelParams, retained_spans, train

__all__ = ["AnnotationService", "create_app", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

MODES = ("few_docs", "many_docs", "custom")


def _iso_millis(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds")


class _Session:
    def __init__(self, session_id: str, annotator_id: str, mode: str,
                 queue: list[Span], started_at: datetime):
        self.session_id = session_id
        self.annotator_id = annotator_id
        self.mode = mode
        self.queue = queue
        self.position = 0
        self.completed: list[tuple[Label, datetime]] = []
        self.started_at = started_at
        self.lock = threading.Lock()

    @property
    def head(self) -> Span | None:
        if self.position >= len(self.queue):
            return None
        return self.queue[self.position]


class AnnotationService:
    """All session and pool state behind the HTTP endpoints.

    ``clock`` is injectable for tests and must return timezone-aware
    datetimes.
    """

    def __init__(self, h0: ModelParams, corpus: list[Document],
                 strategy: str = "ment_ent", k: int = 50, m: int | None = 1,
                 seed: int = 0, clock=None):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        self.h0 = h0
        self.current = h0
        self.corpus = list(corpus)
        self.docs = {d.doc_id: d for d in corpus}
        self.strategy = strategy
        self.k = k
        self.m = m
        self.seed = seed
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.pool = LabeledPool()
        self.sessions: dict[str, _Session] = {}
        self.cycle = 0
        self._session_counter = 0
        self._state_lock = threading.Lock()
        self._training_thread: threading.Thread | None = None
        self._candidate_cache: dict[str, list[Span]] = {}

    # -- internals ---------------------------------------------------------

    def _enqueued_keys(self) -> frozenset:
        keys = set(self.pool.keys())
        for session in self.sessions.values():
            for span in session.queue[session.position:]:
                keys.add(span.key())
        return frozenset(keys)

    def _build_queue(self, mode: str, k: int, m: int | None,
                     k_per_doc: int) -> list[Span]:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(self.seed, self.cycle,
                                            self._session_counter))
        )
        scored = score_pool(self.strategy, self.current, self.corpus, rng,
                            labeled_keys=self._enqueued_keys())
        if not scored:
            return []
        if mode == "few_docs":
            return select_with_read_budget(scored, k, 1 if m is None else m)
        if mode == "many_docs":
            return select_spread(scored, k, k_per_doc=1)
        return select_spread(scored, k, k_per_doc=k_per_doc)

    def _candidates(self, query: Span) -> list[Span]:
        if query.doc_id not in self._candidate_cache:
            doc = self.docs[query.doc_id]
            self._candidate_cache[query.doc_id] = retained_spans(self.current, doc)
        spans = self._candidate_cache[query.doc_id]
        qkey = (query.start, query.end)
        return [s for s in spans if (s.start, s.end) < qkey]

    # -- operations --------------------------------------------------------

    def create_session(self, annotator_id: str, mode: str,
                       k: int | None = None, m: int | None = None,
                       k_per_doc: int = 1) -> dict:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        with self._state_lock:
            self._session_counter += 1
            session_id = f"session-{self._session_counter:04d}"
            queue = self._build_queue(mode, k or self.k,
                                      m if m is not None else self.m, k_per_doc)
            session = _Session(session_id, annotator_id, mode, queue,
                               started_at=self.clock())
            self.sessions[session_id] = session
        return {
            "session_id": session_id,
            "annotator_id": annotator_id,
            "mode": mode,
            "queue_length": len(queue),
            "started_at": _iso_millis(session.started_at),
        }

    def next_query(self, session_id: str):
        session = self.sessions.get(session_id)
        if session is None:
            return None
        with session.lock:
            head = session.head
            if head is None:
                return {}
            doc = self.docs[head.doc_id]
            return {
                "session_id": session_id,
                "position": session.position,
                "total": len(session.queue),
                "document": {
                    "doc_id": doc.doc_id,
                    "tokens": list(doc.tokens),
                    "sentence_starts": list(doc.sentence_starts),
                },
                "query": {"start": head.start, "end": head.end},
                "candidates": [
                    {"start": s.start, "end": s.end}
                    for s in self._candidates(head)
                ],
            }

    def submit_label(self, session_id: str, query: Span, kind: str,
                     antecedent: Span | None) -> tuple[int, dict]:
        """Returns (status_code, payload)."""
        session = self.sessions.get(session_id)
        if session is None:
            return 404, {"error": f"unknown session {session_id!r}"}
        with session.lock:
            for done, _ in session.completed:
                if done.query == query:
                    same = done.kind == kind and done.antecedent == antecedent
                    if same:
                        return 200, {"status": "duplicate",
                                     "position": session.position}
                    return 409, {"error": "span already labeled differently"}
            head = session.head
            if head is None:
                return 409, {"error": "queue exhausted"}
            if query != head:
                return 409, {
                    "error": "out-of-order submission",
                    "expected": {"start": head.start, "end": head.end,
                                 "doc_id": head.doc_id},
                }
            now = self.clock()
            try:
                label = Label(query=query, kind=kind, antecedent=antecedent,
                              timestamp=_iso_millis(now),
                              annotator_id=session.annotator_id)
            except ValueError as exc:
                return 422, {"error": str(exc)}
            with self._state_lock:
                if self.pool.get(query) is None:
                    self.pool.add(label, cycle=self.cycle)
            session.completed.append((label, now))
            session.position += 1
            return 200, {"status": "ok", "position": session.position,
                         "remaining": len(session.queue) - session.position}

    def stats(self, session_id: str) -> dict | None:
        session = self.sessions.get(session_id)
        if session is None:
            return None
        with session.lock:
            times = [t for _, t in session.completed]
            inter = [
                (b - a).total_seconds() for a, b in zip(times, times[1:])
            ]
            first_25 = sum(
                1 for t in times
                if (t - session.started_at).total_seconds() <= 25 * 60
            )
            switches = sum(
                1
                for (la, _), (lb, _) in zip(session.completed,
                                            session.completed[1:])
                if la.query.doc_id != lb.query.doc_id
            )
            return {
                "session_id": session_id,
                "n_labels": len(session.completed),
                "labels_first_25_minutes": first_25,
                "inter_arrival_seconds": inter,
                "document_switches": switches,
                "started_at": _iso_millis(session.started_at),
                "queue_length": len(session.queue),
                "remaining": len(session.queue) - session.position,
            }

    def document(self, doc_id: str) -> dict | None:
        doc = self.docs.get(doc_id)
        if doc is None:
            return None
        return {
            "doc_id": doc.doc_id,
            "tokens": list(doc.tokens),
            "sentence_starts": list(doc.sentence_starts),
        }

    def advance_cycle(self, block: bool = False) -> dict:
        """Close the labeling cycle and retrain from the source checkpoint.

        Training runs on a background thread; label submission stays
        responsive.  ``block`` waits for completion (used in tests)."""
        with self._state_lock:
            if self._training_thread is not None and self._training_thread.is_alive():
                return {"status": "already_training", "cycle": self.cycle}
            if self.pool.n_labels == 0:
                return {"status": "no_labels", "cycle": self.cycle}
            self.cycle += 1
            cycle = self.cycle
            thread = threading.Thread(target=self._train_job, daemon=True)
            self._training_thread = thread
            thread.start()
        if block:
            thread.join()
        return {"status": "training", "cycle": cycle}

    def _train_job(self) -> None:
        new_params = train(self.h0, self.pool, self.corpus,
                           self.h0.hyper, mode="discrete")
        with self._state_lock:
            self.current = new_params
            self._candidate_cache.clear()

    def training_status(self) -> dict:
        alive = self._training_thread is not None and self._training_thread.is_alive()
        return {"training": alive, "cycle": self.cycle,
                "n_labels": self.pool.n_labels}

    def export_labels(self) -> list[dict]:
        return [label.to_record() for label in self.pool.iter_labels()]


# ---------------------------------------------------------------------------
# HTTP layer.

class SpanBody(BaseModel):
    doc_id: str
    start: int = Field(ge=0)
    end: int = Field(ge=1)


class VerdictBody(BaseModel):
    kind: str
    antecedent: SpanBody | None = None


class LabelBody(BaseModel):
    query: SpanBody
    verdict: VerdictBody


class SessionBody(BaseModel):
    annotator_id: str = "anonymous"
    mode: str = "few_docs"
    k: int | None = Field(default=None, ge=1)
    m: int | None = Field(default=None, ge=1)
    k_per_doc: int = Field(default=1, ge=1)


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="annotation backend")
    app.state.service = service

    @app.get("/health")
    def health():
        return {"status": "ok", "schema_version": SCHEMA_VERSION,
                "version": __version__}

    @app.post("/session")
    def create_session(body: SessionBody):
        try:
            return service.create_session(
                body.annotator_id, body.mode, k=body.k, m=body.m,
                k_per_doc=body.k_per_doc,
            )
        except ValueError as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.get("/session/{session_id}/next")
    def next_query(session_id: str):
        payload = service.next_query(session_id)
        if payload is None:
            return JSONResponse(status_code=404,
                                content={"error": "unknown session"})
        if payload == {}:
            return Response(status_code=204)
        return payload

    @app.post("/session/{session_id}/label")
    def submit_label(session_id: str, body: LabelBody):
        query = Span(body.query.doc_id, body.query.start, body.query.end)
        antecedent = None
        if body.verdict.antecedent is not None:
            a = body.verdict.antecedent
            antecedent = Span(a.doc_id, a.start, a.end)
        if body.verdict.kind not in ("antecedent", "no_prior_antecedent",
                                     "not_a_mention"):
            return JSONResponse(status_code=422,
                                content={"error": "unknown verdict kind"})
        status, payload = service.submit_label(session_id, query,
                                               body.verdict.kind, antecedent)
        if status == 200:
            return payload
        return JSONResponse(status_code=status, content=payload)

    @app.get("/session/{session_id}/stats")
    def stats(session_id: str):
        payload = service.stats(session_id)
        if payload is None:
            return JSONResponse(status_code=404,
                                content={"error": "unknown session"})
        return payload

    @app.get("/document/{doc_id}")
    def document(doc_id: str):
        payload = service.document(doc_id)
        if payload is None:
            return JSONResponse(status_code=404,
                                content={"error": "unknown document"})
        return payload

    @app.post("/cycle/advance")
    def advance():
        return service.advance_cycle()

    @app.get("/cycle/status")
    def cycle_status():
        return service.training_status()

    @app.get("/labels")
    def labels():
        return {"labels": service.export_labels()}

    return app
