"""Span feature extraction.

Lexical features are signed-hashed into a fixed-width slot with a keyed
blake2b digest, which is stable across processes and platforms (the builtin
``hash`` is salted per process and cannot be used here).  Width and
sentence-position indicators get dedicated one-hot coordinates after the
hashed block, so they are never aliased by lexical collisions.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import Document, Span

__all__ = [
    "SpanFeatures",
    "SpanFeaturizer",
    "EmbeddingTable",
    "WIDTH_BUCKETS",
    "N_EXTRA",
]

_HASH_KEY = b"span-feature-hash-v1"

# Upper edges of span-width buckets: 1, 2, 3, 4, 5-7, 8-15, 16+.
WIDTH_BUCKETS = (1, 2, 3, 4, 7, 15)
_N_WIDTH = len(WIDTH_BUCKETS) + 1
_N_QUARTILE = 4
N_EXTRA = _N_WIDTH + _N_QUARTILE


@dataclass(frozen=True)
class SpanFeatures:
    """Feature vector for one span plus where it came from."""

    vector: np.ndarray
    provenance: str  # "hashed" or "external"

    def __post_init__(self) -> None:
        if self.provenance not in ("hashed", "external"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("feature vector has non-finite entries")


def _width_bucket(width: int) -> int:
    for i, edge in enumerate(WIDTH_BUCKETS):
        if width <= edge:
            return i
    return len(WIDTH_BUCKETS)


def _hash_feature(name: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(name.encode("utf-8"), key=_HASH_KEY, digest_size=8)
    value = int.from_bytes(digest.digest(), "big")
    sign = 1.0 if value & 1 else -1.0
    return (value >> 1) % dim, sign


class EmbeddingTable:
    """Precomputed span vectors keyed by (doc_id, start, end).

    Loaded from a line-delimited JSON file where each record carries
    ``doc_id``, ``start``, ``end``, and ``vector``.
    """

    def __init__(self, vectors: dict[tuple[str, int, int], np.ndarray]):
        if not vectors:
            raise ValueError("embedding table is empty")
        dims = {v.shape[0] for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent embedding dimensions: {sorted(dims)}")
        self._vectors = vectors
        self.dim = dims.pop()

    @classmethod
    def load(cls, path: str) -> "EmbeddingTable":
        vectors: dict[tuple[str, int, int], np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    key = (record["doc_id"], int(record["start"]), int(record["end"]))
                    vec = np.asarray(record["vector"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"bad embedding record on line {line_no}: {exc}")
                if vec.ndim != 1:
                    raise ValueError(f"vector on line {line_no} is not one-dimensional")
                vectors[key] = vec
        return cls(vectors)

    def lookup(self, span: Span) -> np.ndarray:
        key = (span.doc_id, span.start, span.end)
        if key not in self._vectors:
            raise LookupError(f"no embedding for span {key}")
        return self._vectors[key]


class SpanFeaturizer:
    """Maps a span to a fixed-width float64 feature vector.

    With the default hashed representation the lexical block holds a signed
    bag of span tokens plus first/last/head marker features.  When an
    ``EmbeddingTable`` is supplied its vectors replace the hashed block and
    missing spans raise ``LookupError``.
    """

    def __init__(self, hash_dim: int = 512, embeddings: EmbeddingTable | None = None):
        if hash_dim < 1:
            raise ValueError("hash_dim must be positive")
        self.hash_dim = hash_dim
        self.embeddings = embeddings
        # External vectors come from a real encoder and pass through as-is;
        # the hashed representation appends width/position indicator blocks.
        if embeddings is not None:
            self.n_features = embeddings.dim
        else:
            self.n_features = hash_dim + N_EXTRA

    def _lexical_entries(self, doc: Document, span: Span) -> dict[int, float]:
        tokens = doc.span_tokens(span)
        names = [f"tok:{t.lower()}" for t in tokens]
        names.append(f"first:{tokens[0].lower()}")
        names.append(f"last:{tokens[-1].lower()}")
        # Head approximation: final token of the span.
        names.append(f"head:{tokens[-1].lower()}")
        entries: dict[int, float] = {}
        for name in names:
            idx, sign = _hash_feature(name, self.hash_dim)
            entries[idx] = entries.get(idx, 0.0) + sign
        return entries

    def _extra_entries(self, doc: Document, span: Span) -> dict[int, float]:
        base = self.hash_dim
        entries = {base + _width_bucket(span.width): 1.0}
        quartile = min(
            _N_QUARTILE - 1,
            (_N_QUARTILE * doc.sentence_index(span.start)) // doc.n_sentences,
        )
        entries[base + _N_WIDTH + quartile] = 1.0
        return entries

    def featurize(self, doc: Document, span: Span) -> SpanFeatures:
        if self.embeddings is not None:
            vec = np.array(self.embeddings.lookup(span), dtype=np.float64)
            return SpanFeatures(vector=vec, provenance="external")
        out = np.zeros(self.n_features, dtype=np.float64)
        for idx, value in self._lexical_entries(doc, span).items():
            out[idx] = value
        for idx, value in self._extra_entries(doc, span).items():
            out[idx] = value
        return SpanFeatures(vector=out, provenance="hashed")

    def featurize_batch(self, doc: Document, spans: list[Span]) -> sp.csr_matrix:
        """CSR matrix with one row per span, in the given order."""
        data: list[float] = []
        indices: list[int] = []
        indptr = [0]
        for span in spans:
            if self.embeddings is not None:
                vec = self.embeddings.lookup(span)
                nz = np.nonzero(vec)[0]
                indices.extend(int(i) for i in nz)
                data.extend(float(vec[i]) for i in nz)
            else:
                for idx, value in sorted(self._lexical_entries(doc, span).items()):
                    indices.append(idx)
                    data.append(value)
                for idx, value in sorted(self._extra_entries(doc, span).items()):
                    indices.append(idx)
                    data.append(value)
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
            shape=(len(spans), self.n_features),
        )
