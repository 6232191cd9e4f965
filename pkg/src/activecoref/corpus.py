"""Documents, spans, and corpus I/O.

A corpus is a list of immutable :class:`Document` objects.  Gold coreference
annotation is stored as a partition of (start, end) token spans; all span
indices are half-open ``[start, end)`` over the document's token list.
"""
from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "Span",
    "Document",
    "CorpusParseError",
    "CorpusValidationError",
    "PRONOUNS",
    "load_corpus",
    "save_corpus",
    "enumerate_spans",
]


class CorpusParseError(ValueError):
    """A corpus file record could not be decoded."""


class CorpusValidationError(ValueError):
    """A document violated a structural invariant."""


# Closed English pronoun lexicon (personal, possessive, reflexive,
# demonstrative).  Used for span-type analysis and synthetic generation;
# callers may supply their own lexicon where one is accepted.
PRONOUNS = frozenset(
    """
    i me my mine myself we us our ours ourselves
    you your yours yourself yourselves
    he him his himself she her hers herself it its itself
    they them their theirs themselves
    this that these those who whom whose which
    """.split()
)


@dataclass(frozen=True, order=True)
class Span:
    """A half-open token interval ``[start, end)`` inside one document."""

    doc_id: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise CorpusValidationError(
                f"invalid span [{self.start}, {self.end}) in doc {self.doc_id!r}"
            )

    @property
    def width(self) -> int:
        return self.end - self.start

    def key(self) -> tuple[str, int, int]:
        return (self.doc_id, self.start, self.end)


@dataclass(frozen=True)
class Document:
    """A tokenized document with an optional gold entity partition.

    ``gold_clusters`` is a tuple of clusters; each cluster is a tuple of
    (start, end) pairs.  Singleton clusters are allowed.
    """

    doc_id: str
    tokens: tuple[str, ...]
    sentence_starts: tuple[int, ...]
    gold_clusters: tuple[tuple[tuple[int, int], ...], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "sentence_starts", tuple(self.sentence_starts))
        object.__setattr__(
            self,
            "gold_clusters",
            tuple(tuple((int(s), int(e)) for s, e in c) for c in self.gold_clusters),
        )
        self._validate()

    def _validate(self) -> None:
        n = len(self.tokens)
        if n == 0:
            raise CorpusValidationError(f"doc {self.doc_id!r}: empty token list")
        ss = self.sentence_starts
        if not ss or ss[0] != 0:
            raise CorpusValidationError(
                f"doc {self.doc_id!r}: sentence_starts must begin at 0"
            )
        if any(b <= a for a, b in zip(ss, ss[1:])):
            raise CorpusValidationError(
                f"doc {self.doc_id!r}: sentence_starts must be strictly increasing"
            )
        if ss[-1] >= n:
            raise CorpusValidationError(
                f"doc {self.doc_id!r}: sentence start {ss[-1]} out of range"
            )
        seen: set[tuple[int, int]] = set()
        for cluster in self.gold_clusters:
            for start, end in cluster:
                if not (0 <= start < end <= n):
                    raise CorpusValidationError(
                        f"doc {self.doc_id!r}: span [{start}, {end}) out of range"
                    )
                if (start, end) in seen:
                    raise CorpusValidationError(
                        f"doc {self.doc_id!r}: span [{start}, {end}) appears twice"
                    )
                seen.add((start, end))

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_sentences(self) -> int:
        return len(self.sentence_starts)

    def sentence_index(self, token_pos: int) -> int:
        """Index of the sentence containing token position ``token_pos``."""
        return bisect_right(self.sentence_starts, token_pos) - 1

    def gold_mentions(self) -> set[tuple[int, int]]:
        return {m for cluster in self.gold_clusters for m in cluster}

    def mention_cluster_index(self) -> dict[tuple[int, int], int]:
        """Map each gold mention to the index of its cluster."""
        return {
            m: i for i, cluster in enumerate(self.gold_clusters) for m in cluster
        }

    def span_tokens(self, span: Span | tuple[int, int]) -> tuple[str, ...]:
        start, end = (span.start, span.end) if isinstance(span, Span) else span
        return self.tokens[start:end]

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "tokens": list(self.tokens),
            "sentence_starts": list(self.sentence_starts),
            "clusters": [[[s, e] for s, e in c] for c in self.gold_clusters],
        }

    @classmethod
    def from_record(cls, record: dict) -> "Document":
        try:
            return cls(
                doc_id=record["doc_id"],
                tokens=tuple(record["tokens"]),
                sentence_starts=tuple(record["sentence_starts"]),
                gold_clusters=tuple(
                    tuple((s, e) for s, e in cluster)
                    for cluster in record.get("clusters", [])
                ),
            )
        except (KeyError, TypeError) as exc:
            raise CorpusParseError(f"malformed document record: {exc}") from exc


def load_corpus(path: str | Path) -> list[Document]:
    """Read a line-delimited JSON corpus file.

    Raises :class:`CorpusParseError` (naming the line number) on malformed
    records and :class:`CorpusValidationError` (naming the doc_id) on
    invariant violations.
    """
    docs: list[Document] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusParseError(f"line {lineno}: expected a JSON object")
            try:
                docs.append(Document.from_record(record))
            except CorpusParseError as exc:
                raise CorpusParseError(f"line {lineno}: {exc}") from exc
    return docs


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps(doc.to_record()) + "\n")


def enumerate_spans(doc: Document, max_width: int) -> list[Span]:
    """All candidate spans of width 1..max_width, ordered by (start, end)."""
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    n = doc.n_tokens
    spans: list[Span] = []
    for start in range(n):
        for end in range(start + 1, min(start + max_width, n) + 1):
            spans.append(Span(doc.doc_id, start, end))
    return spans


def gold_clusters_as_spans(doc: Document) -> list[list[Span]]:
    return [
        [Span(doc.doc_id, s, e) for s, e in cluster] for cluster in doc.gold_clusters
    ]


def clusters_to_record(doc_id: str, clusters: Sequence[Sequence[Span]]) -> dict:
    """Serialize predicted clusters in the corpus record format."""
    return {
        "doc_id": doc_id,
        "clusters": [[[sp.start, sp.end] for sp in c] for c in clusters],
    }
