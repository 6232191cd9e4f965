"""Scoring networks and their training loop.

The model is a small feedforward stack over span features, all float64 numpy
with hand-written backpropagation:

  * a shared embedder mapping features to a span representation g,
  * a unary mention scorer s_m(g) (one hidden layer),
  * a pairwise scorer s_a over [g_x; g_c; g_x*g_c; distance one-hot],
  * a gate network producing the cluster-update weight in [0, 1].

A span's score against a cluster is s(x, c) = s_m(x) + s_m(c) + s_a(x, c, d);
the new-cluster outcome scores a constant 0.  Training backpropagates through
the gated cluster-representation updates of a teacher-forced incremental pass,
so gradients flow along the whole update chain.  ``grad_check`` compares every
analytic gradient against central finite differences.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

from .corpus import Document, Span, enumerate_spans
from .features import SpanFeatures, SpanFeaturizer

__all__ = [
    "Hyperparams",
    "ModelParams",
    "SpanScores",
    "DocBatch",
    "distance_bucket",
    "N_DIST_BUCKETS",
    "init_params",
    "mention_score",
    "pair_score",
    "gate_value",
    "span_representations",
    "prune_spans",
    "retained_spans",
    "build_full_gold_batches",
    "build_discrete_batches",
    "batch_loss_and_grads",
    "train",
    "grad_check",
    "save_params",
    "load_params",
    "params_equal",
]

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# Distance buckets: 0, 1, 2, 3-4, 5-7, 8-15, 16-31, 32-63, 64+.
_DIST_EDGES = (0, 1, 2, 4, 7, 15, 31, 63)
N_DIST_BUCKETS = len(_DIST_EDGES) + 1


def distance_bucket(dist: int) -> int:
    """Bucket index for a distance counted in spans since the cluster's last member."""
    for i, edge in enumerate(_DIST_EDGES):
        if dist <= edge:
            return i
    return len(_DIST_EDGES)


@dataclass(frozen=True)
class Hyperparams:
    """Training and architecture configuration."""

    max_epochs: int = 50
    early_stop_patience: int = 10
    prune_ratio: float = 0.4
    dropout: float = 0.4
    grad_clip: float = 10.0
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    seed: int = 0
    # Architecture and task knobs.
    max_width: int = 10
    hash_dim: int = 512
    rep_dim: int = 64
    hidden_dim: int = 64
    mention_loss_weight: float = 1.0
    cluster_loss_weight: float = 1.0
    bce_positive_weight: float = 1.0
    mention_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.prune_ratio <= 1.0:
            raise ValueError("prune_ratio must be in (0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for name in (
            "max_epochs",
            "early_stop_patience",
            "grad_clip",
            "learning_rate",
            "max_width",
            "hash_dim",
            "rep_dim",
            "hidden_dim",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class SpanScores:
    s_m: float
    p_mention: float


_ARRAY_KEYS = (
    "W_e", "b_e",
    "W_m", "b_m", "w_m2", "b_m2",
    "W_a", "b_a", "w_a2", "b_a2",
    "w_g", "b_g",
)


class ModelParams:
    """All trainable arrays plus the configuration that shaped them.

    The featurizer is rebuilt from the config on load; callers using external
    embeddings attach their featurizer afterwards via ``attach_featurizer``.
    """

    def __init__(self, arrays: dict[str, np.ndarray], hyper: Hyperparams,
                 n_features: int, featurizer: SpanFeaturizer | None = None):
        self.arrays = {k: np.asarray(arrays[k], dtype=np.float64) for k in _ARRAY_KEYS}
        self.hyper = hyper
        self.n_features = n_features
        self.featurizer = featurizer or SpanFeaturizer(hash_dim=hyper.hash_dim)
        if self.featurizer.n_features != n_features:
            raise ValueError(
                f"featurizer produces {self.featurizer.n_features} features, "
                f"model expects {n_features}"
            )
        self._check_shapes()

    def _check_shapes(self) -> None:
        R, H, D = self.hyper.rep_dim, self.hyper.hidden_dim, self.n_features
        A = 3 * R + N_DIST_BUCKETS
        expected = {
            "W_e": (R, D), "b_e": (R,),
            "W_m": (H, R), "b_m": (H,), "w_m2": (H,), "b_m2": (1,),
            "W_a": (H, A), "b_a": (H,), "w_a2": (H,), "b_a2": (1,),
            "w_g": (2 * R,), "b_g": (1,),
        }
        for key, shape in expected.items():
            if self.arrays[key].shape != shape:
                raise ValueError(
                    f"array {key} has shape {self.arrays[key].shape}, expected {shape}"
                )
            if not np.all(np.isfinite(self.arrays[key])):
                raise ValueError(f"array {key} has non-finite entries")

    @property
    def rep_dim(self) -> int:
        return self.hyper.rep_dim

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.arrays.items()},
            self.hyper,
            self.n_features,
            featurizer=self.featurizer,
        )

    def attach_featurizer(self, featurizer: SpanFeaturizer) -> None:
        if featurizer.n_features != self.n_features:
            raise ValueError(
                f"featurizer dimension {featurizer.n_features} does not match "
                f"model dimension {self.n_features}"
            )
        self.featurizer = featurizer

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


def init_params(n_features: int, hyper: Hyperparams, seed: int | None = None,
                featurizer: SpanFeaturizer | None = None) -> ModelParams:
    """Fresh random parameters; weights ~ N(0, 1/fan_in), biases zero."""
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    R, H, D = hyper.rep_dim, hyper.hidden_dim, n_features
    A = 3 * R + N_DIST_BUCKETS

    def w(rows, cols=None):
        if cols is None:
            return np.zeros(rows, dtype=np.float64)
        return rng.normal(0.0, 1.0 / math.sqrt(cols), size=(rows, cols))

    arrays = {
        "W_e": w(R, D), "b_e": w(R),
        "W_m": w(H, R), "b_m": w(H),
        "w_m2": rng.normal(0.0, 1.0 / math.sqrt(H), size=H), "b_m2": np.zeros(1),
        "W_a": w(H, A), "b_a": w(H),
        "w_a2": rng.normal(0.0, 1.0 / math.sqrt(H), size=H), "b_a2": np.zeros(1),
        "w_g": rng.normal(0.0, 1.0 / math.sqrt(2 * R), size=2 * R), "b_g": np.zeros(1),
    }
    return ModelParams(arrays, hyper, n_features, featurizer=featurizer)


# ---------------------------------------------------------------------------
# Forward/backward primitives.  Caches are tuples consumed by the matching
# backward function; grads accumulate into a dict keyed like ModelParams.arrays.

def _mask(rng: np.random.Generator | None, shape, dropout: float):
    if rng is None or dropout <= 0.0:
        return None
    return (rng.random(shape) >= dropout).astype(np.float64) / (1.0 - dropout)


def _embed_fwd(params: ModelParams, F):
    """F: (n, D) sparse or dense -> G: (n, R)."""
    Z = F @ params.arrays["W_e"].T
    if sp.issparse(Z):
        Z = np.asarray(Z.todense())
    G = np.tanh(Z + params.arrays["b_e"])
    return G, (F, G)


def _embed_bwd(params: ModelParams, cache, dG, grads) -> None:
    F, G = cache
    dZ = dG * (1.0 - G * G)
    if sp.issparse(F):
        grads["W_e"] += (F.T @ dZ).T
    else:
        grads["W_e"] += dZ.T @ F
    grads["b_e"] += dZ.sum(axis=0)


def _mlp_fwd(params: ModelParams, prefix: str, X: np.ndarray, mask):
    """One-hidden-layer tanh MLP to a scalar per row.  prefix: 'm' or 'a'."""
    W1, b1 = params.arrays[f"W_{prefix}"], params.arrays[f"b_{prefix}"]
    w2, b2 = params.arrays[f"w_{prefix}2"], params.arrays[f"b_{prefix}2"]
    pre = X @ W1.T + b1
    h = np.tanh(pre)
    hd = h if mask is None else h * mask
    s = hd @ w2 + b2[0]
    return s, (X, h, hd, mask)


def _mlp_bwd(params: ModelParams, prefix: str, cache, ds: np.ndarray, grads) -> np.ndarray:
    X, h, hd, mask = cache
    W1 = params.arrays[f"W_{prefix}"]
    w2 = params.arrays[f"w_{prefix}2"]
    d_hd = np.outer(ds, w2)
    dh = d_hd if mask is None else d_hd * mask
    dpre = dh * (1.0 - h * h)
    grads[f"W_{prefix}"] += dpre.T @ X
    grads[f"b_{prefix}"] += dpre.sum(axis=0)
    grads[f"w_{prefix}2"] += hd.T @ ds
    grads[f"b_{prefix}2"] += np.array([ds.sum()])
    return dpre @ W1


def _gate_fwd(params: ModelParams, g_c: np.ndarray, g_x: np.ndarray):
    cat = np.concatenate([g_c, g_x])
    u = float(params.arrays["w_g"] @ cat + params.arrays["b_g"][0])
    e = float(expit(u))
    return e, (cat, e)


def _gate_bwd(params: ModelParams, cache, de: float, grads):
    cat, e = cache
    du = de * e * (1.0 - e)
    grads["w_g"] += du * cat
    grads["b_g"] += np.array([du])
    R = len(cat) // 2
    dcat = du * params.arrays["w_g"]
    return dcat[:R], dcat[R:]


# ---------------------------------------------------------------------------
# Public scoring API (eval mode).

def _as_vector(features) -> np.ndarray:
    if isinstance(features, SpanFeatures):
        return features.vector
    return np.asarray(features, dtype=np.float64)


def mention_score(params: ModelParams, features) -> SpanScores:
    """Unary mention score and its logistic normalization."""
    vec = _as_vector(features)
    if vec.shape != (params.n_features,):
        raise ValueError(
            f"feature vector has shape {vec.shape}, expected ({params.n_features},)"
        )
    G, _ = _embed_fwd(params, vec[None, :])
    s, _ = _mlp_fwd(params, "m", G, None)
    s_m = float(s[0])
    return SpanScores(s_m=s_m, p_mention=float(expit(s_m)))


def _phi_onehot(bucket: int) -> np.ndarray:
    if not 0 <= bucket < N_DIST_BUCKETS:
        raise ValueError(f"distance bucket {bucket} out of range")
    phi = np.zeros(N_DIST_BUCKETS, dtype=np.float64)
    phi[bucket] = 1.0
    return phi


def pair_score(params: ModelParams, g_x: np.ndarray, g_c: np.ndarray,
               dist_bucket: int) -> float:
    """s(x, c) = s_m(x) + s_m(c) + s_a(x, c, d).  The dummy outcome is 0."""
    R = params.rep_dim
    if g_x.shape != (R,) or g_c.shape != (R,):
        raise ValueError(f"representations must have shape ({R},)")
    phi = _phi_onehot(dist_bucket)
    s_m_x, _ = _mlp_fwd(params, "m", g_x[None, :], None)
    s_m_c, _ = _mlp_fwd(params, "m", g_c[None, :], None)
    x_in = np.concatenate([g_x, g_c, g_x * g_c, phi])
    s_a, _ = _mlp_fwd(params, "a", x_in[None, :], None)
    return float(s_m_x[0] + s_m_c[0] + s_a[0])


def gate_value(params: ModelParams, g_c: np.ndarray, g_x: np.ndarray) -> float:
    """Update weight in [0, 1] for merging a span into a cluster."""
    e, _ = _gate_fwd(params, g_c, g_x)
    return e


def span_representations(params: ModelParams, doc: Document,
                         spans: list[Span]) -> tuple[np.ndarray, np.ndarray]:
    """(representations (n, R), mention scores (n,)) for spans, eval mode."""
    if not spans:
        R = params.rep_dim
        return np.zeros((0, R)), np.zeros(0)
    F = params.featurizer.featurize_batch(doc, spans)
    G, _ = _embed_fwd(params, F)
    s, _ = _mlp_fwd(params, "m", G, None)
    return G, s


def prune_spans(params: ModelParams, doc: Document,
                candidates: list[Span]) -> list[Span]:
    """Top ceil(prune_ratio * n_tokens) candidates by mention score.

    Ties break by (start, end); output is in document order.
    """
    if not candidates:
        return []
    n_keep = math.ceil(params.hyper.prune_ratio * doc.n_tokens)
    _, s = span_representations(params, doc, candidates)
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-s[i], candidates[i].start, candidates[i].end),
    )
    kept = [candidates[i] for i in order[:n_keep]]
    kept.sort(key=lambda sp_: (sp_.start, sp_.end))
    return kept


def retained_spans(params: ModelParams, doc: Document) -> list[Span]:
    return prune_spans(params, doc, enumerate_spans(doc, params.hyper.max_width))


# ---------------------------------------------------------------------------
# Training batches.

TRAIN, HELD = 0, 1

_SPLIT_KEY = b"holdout-split-v1"


def _held_fraction_hash(text: str) -> bool:
    digest = hashlib.blake2b(text.encode("utf-8"), key=_SPLIT_KEY, digest_size=8)
    return int.from_bytes(digest.digest(), "big") % 10 == 0


@dataclass
class DocBatch:
    """Per-document training inputs.

    ``F_bce``/``y_bce`` drive the mention binary cross-entropy.  Node arrays
    drive the teacher-forced incremental pass: nodes are in document order,
    ``node_comp`` gives the gold-consistent component of each node, and
    ``node_xe`` marks nodes that contribute a cluster-assignment loss term.
    """

    doc_id: str
    F_bce: sp.csr_matrix
    y_bce: np.ndarray
    bce_split: np.ndarray
    node_feats: np.ndarray
    node_comp: np.ndarray
    node_xe: np.ndarray
    node_split: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_comp)

    def has_terms(self, splits: frozenset) -> bool:
        bce = any(int(s) in splits for s in self.bce_split)
        xe = any(bool(x) and int(s) in splits
                 for x, s in zip(self.node_xe, self.node_split))
        return bce or xe


def build_full_gold_batches(params: ModelParams, corpus: list[Document],
                            doc_split: dict[str, int] | None = None) -> list[DocBatch]:
    """Supervision from gold clusters: BCE over every candidate span plus a
    teacher-forced pass over the gold mentions.

    The pass also interleaves hard-negative nodes, non-gold spans that share
    tokens with a gold mention, forced to the new-cluster outcome.  Without
    them the pair scorer never sees a query it should reject, and at
    inference near-miss spans attach themselves to real clusters.
    """
    featurizer = params.featurizer
    max_width = params.hyper.max_width
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(params.hyper.seed, 23))
    )
    batches = []
    for doc in corpus:
        split = TRAIN if doc_split is None else doc_split[doc.doc_id]
        candidates = enumerate_spans(doc, max_width)
        gold_index = doc.mention_cluster_index()
        y = np.array(
            [1.0 if (c.start, c.end) in gold_index else 0.0 for c in candidates]
        )
        mentions = sorted(gold_index)
        n_clusters = len(doc.gold_clusters)
        overlappers = [
            (c.start, c.end)
            for c in candidates
            if (c.start, c.end) not in gold_index
            and any(c.start < ge and gs < c.end for gs, ge in mentions)
        ]
        n_junk = min(len(overlappers), len(mentions))
        junk: list[tuple[int, int]] = []
        if n_junk:
            chosen = rng.choice(len(overlappers), size=n_junk, replace=False)
            junk = [overlappers[i] for i in sorted(chosen)]
        keys = sorted(
            [(m, gold_index[m]) for m in mentions]
            + [(j, n_clusters + i) for i, j in enumerate(junk)]
        )
        node_spans = [Span(doc.doc_id, s, e) for (s, e), _ in keys]
        comp = np.array([c for _, c in keys], dtype=np.int64)
        if node_spans:
            node_feats = np.stack(
                [featurizer.featurize(doc, s_).vector for s_ in node_spans]
            )
        else:
            node_feats = np.zeros((0, featurizer.n_features))
        batches.append(
            DocBatch(
                doc_id=doc.doc_id,
                F_bce=featurizer.featurize_batch(doc, candidates),
                y_bce=y,
                bce_split=np.full(len(candidates), split, dtype=np.int64),
                node_feats=node_feats,
                node_comp=comp,
                node_xe=np.ones(len(node_spans), dtype=bool),
                node_split=np.full(len(node_spans), split, dtype=np.int64),
            )
        )
    return batches


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def build_discrete_batches(params: ModelParams, corpus: list[Document],
                           labeled) -> list[DocBatch]:
    """Supervision from span-level annotations.

    BCE rows: every labeled span (positive unless marked not-a-mention) plus
    implied positives for antecedent targets that were never labeled
    themselves.  Nodes: positive query spans and their antecedent targets in
    document order; components come from union-find over antecedent links.
    Spans labeled not-a-mention also join the node sequence as singleton
    components, so the pair scorer is trained to keep them out of every
    cluster, which is exactly the claim the annotation makes.  Held-out
    split is a stable hash of the labeled span key.
    """
    featurizer = params.featurizer
    by_doc: dict[str, list] = {}
    for label in labeled.iter_labels():
        by_doc.setdefault(label.query.doc_id, []).append(label)
    docs_by_id = {d.doc_id: d for d in corpus}
    n_labels = sum(len(v) for v in by_doc.values())

    batches = []
    for doc_id in sorted(by_doc):
        if doc_id not in docs_by_id:
            raise ValueError(f"labeled document {doc_id!r} not in corpus")
        doc = docs_by_id[doc_id]
        labels = sorted(by_doc[doc_id], key=lambda l: (l.query.start, l.query.end))

        def label_split(label) -> int:
            if n_labels < 2:
                return TRAIN
            key = f"{label.query.doc_id}:{label.query.start}:{label.query.end}"
            return HELD if _held_fraction_hash(key) else TRAIN

        bce_spans: list[Span] = []
        bce_y: list[float] = []
        bce_split: list[int] = []
        labeled_keys = set()
        uf = _UnionFind()
        node_keys: dict[tuple[int, int], dict] = {}
        junk_keys: dict[tuple[int, int], int] = {}

        for label in labels:
            q = label.query
            qkey = (q.start, q.end)
            labeled_keys.add(qkey)
            positive = label.kind != "not_a_mention"
            bce_spans.append(q)
            bce_y.append(1.0 if positive else 0.0)
            bce_split.append(label_split(label))
            if not positive:
                junk_keys[qkey] = label_split(label)
                continue
            node = node_keys.setdefault(qkey, {"xe": False, "split": TRAIN})
            node["xe"] = True
            node["split"] = label_split(label)
            uf.find(qkey)
            if label.kind == "antecedent":
                akey = (label.antecedent.start, label.antecedent.end)
                node_keys.setdefault(akey, {"xe": False, "split": TRAIN})
                uf.union(akey, qkey)

        # A span marked not-a-mention but claimed as someone's antecedent is
        # contradictory human input; the antecedent reference wins.
        for key in [k for k in junk_keys if k in node_keys]:
            logger.warning(
                "doc %s span %s: not_a_mention label conflicts with an "
                "antecedent reference; keeping the reference", doc_id, key,
            )
            del junk_keys[key]

        # Antecedent targets never labeled directly still imply a positive
        # mention; they train the detector but are never held out.
        for key, node in sorted(node_keys.items()):
            if key not in labeled_keys:
                bce_spans.append(Span(doc_id, key[0], key[1]))
                bce_y.append(1.0)
                bce_split.append(TRAIN)

        ordered = sorted(set(node_keys) | set(junk_keys))
        comp_root = {k: uf.find(k) for k in node_keys}
        roots = sorted(set(comp_root.values()))
        root_id = {r: i for i, r in enumerate(roots)}
        comp_of: dict[tuple[int, int], int] = {}
        next_comp = len(roots)
        for key in ordered:
            if key in node_keys:
                comp_of[key] = root_id[comp_root[key]]
            else:
                comp_of[key] = next_comp
                next_comp += 1
        node_spans = [Span(doc_id, s, e) for s, e in ordered]
        if node_spans:
            node_feats = np.stack(
                [featurizer.featurize(doc, s_).vector for s_ in node_spans]
            )
        else:
            node_feats = np.zeros((0, featurizer.n_features))

        batches.append(
            DocBatch(
                doc_id=doc_id,
                F_bce=featurizer.featurize_batch(doc, bce_spans),
                y_bce=np.array(bce_y),
                bce_split=np.array(bce_split, dtype=np.int64),
                node_feats=node_feats,
                node_comp=np.array([comp_of[k] for k in ordered], dtype=np.int64),
                node_xe=np.array(
                    [node_keys[k]["xe"] if k in node_keys else True
                     for k in ordered],
                    dtype=bool,
                ),
                node_split=np.array(
                    [node_keys[k]["split"] if k in node_keys else junk_keys[k]
                     for k in ordered],
                    dtype=np.int64,
                ),
            )
        )
    return batches


# ---------------------------------------------------------------------------
# Loss and gradients.

def _doc_pass(params: ModelParams, batch: DocBatch, splits: frozenset,
              rng: np.random.Generator | None,
              grads: dict[str, np.ndarray] | None) -> float:
    """Loss for one document; accumulates gradients into ``grads`` if given.

    ``rng`` draws dropout masks; None means eval mode.  ``splits`` selects
    which supervision terms count toward the loss (the teacher-forced pass
    always runs over all nodes so cluster structure is split-independent).
    """
    hyper = params.hyper
    dropout = hyper.dropout
    loss = 0.0

    # Mention BCE over candidate/labeled spans.
    bce_active = np.array([int(s) in splits for s in batch.bce_split])
    bce_cache = None
    dsm_bce = None
    if batch.F_bce.shape[0] > 0:
        G_bce, emb_cache = _embed_fwd(params, batch.F_bce)
        mask = _mask(rng, G_bce.shape[0:1] + (hyper.hidden_dim,), dropout)
        s, mlp_cache = _mlp_fwd(params, "m", G_bce, mask)
        if bce_active.any():
            y = batch.y_bce
            per = np.logaddexp(0.0, s) - y * s
            weights = np.where(y > 0.5, hyper.bce_positive_weight, 1.0)
            weights = weights * bce_active
            loss += hyper.mention_loss_weight * float(np.sum(per * weights))
            if grads is not None:
                dsm_bce = hyper.mention_loss_weight * weights * (expit(s) - y)
                bce_cache = (emb_cache, mlp_cache)

    # Teacher-forced incremental pass over nodes.
    n_nodes = batch.n_nodes
    node_tape = []
    dsm_nodes = None
    node_emb_cache = node_mlp_cache = None
    if n_nodes > 0:
        G_nodes, node_emb_cache = _embed_fwd(params, batch.node_feats)
        mask = _mask(rng, (n_nodes, hyper.hidden_dim), dropout)
        s_nodes, node_mlp_cache = _mlp_fwd(params, "m", G_nodes, mask)
        dsm_nodes = np.zeros(n_nodes)

        # clusters: comp -> {"rep": current vector, "versions": int,
        #                    "last_pos": int, "cid": per-doc creation index}
        clusters: dict[int, dict] = {}
        creation: list[int] = []
        for i in range(n_nodes):
            comp = int(batch.node_comp[i])
            want_xe = bool(batch.node_xe[i]) and int(batch.node_split[i]) in splits

            if want_xe:
                outcome = []
                scores = []
                for cid in creation:
                    c = clusters[cid]
                    g_c = c["rep"]
                    cmask = _mask(rng, (1, hyper.hidden_dim), dropout)
                    s_c, cache_c = _mlp_fwd(params, "m", g_c[None, :], cmask)
                    bucket = distance_bucket(i - c["last_pos"] - 1)
                    x_in = np.concatenate(
                        [G_nodes[i], g_c, G_nodes[i] * g_c, _phi_onehot(bucket)]
                    )
                    amask = _mask(rng, (1, hyper.hidden_dim), dropout)
                    s_a, cache_a = _mlp_fwd(params, "a", x_in[None, :], amask)
                    scores.append(float(s_nodes[i] + s_c[0] + s_a[0]))
                    outcome.append((cid, c["versions"], g_c, cache_c, cache_a))
                target = creation.index(comp) if comp in clusters else len(scores)
                z = np.array(scores + [0.0])
                lse = float(logsumexp(z))
                loss += hyper.cluster_loss_weight * (lse - float(z[target]))
                if grads is not None:
                    probs = np.exp(z - lse)
                    dz = probs.copy()
                    dz[target] -= 1.0
                    dz *= hyper.cluster_loss_weight
                    node_tape.append(("score", i, outcome, dz[:-1]))

            # Forced assignment to the gold-consistent component cluster.
            if comp in clusters:
                c = clusters[comp]
                e, gcache = _gate_fwd(params, c["rep"], G_nodes[i])
                new_rep = e * c["rep"] + (1.0 - e) * G_nodes[i]
                node_tape.append(
                    ("update", i, comp, c["versions"], c["rep"], gcache, e)
                )
                c["rep"] = new_rep
                c["versions"] += 1
                c["last_pos"] = i
            else:
                clusters[comp] = {"rep": G_nodes[i], "versions": 0, "last_pos": i}
                creation.append(comp)
                node_tape.append(("new", i, comp))

    if not np.isfinite(loss):
        raise RuntimeError(f"non-finite loss on document {batch.doc_id!r}")
    if grads is None:
        return loss

    # Backward.
    if dsm_bce is not None:
        emb_cache, mlp_cache = bce_cache
        dG = _mlp_bwd(params, "m", mlp_cache, dsm_bce, grads)
        _embed_bwd(params, emb_cache, dG, grads)

    if n_nodes > 0:
        R = params.rep_dim
        adj_G = np.zeros((n_nodes, R))
        adj_rep: dict[tuple[int, int], np.ndarray] = {}

        def rep_adj(comp: int, version: int) -> np.ndarray:
            return adj_rep.setdefault((comp, version), np.zeros(R))

        for rec in reversed(node_tape):
            if rec[0] == "update":
                _, i, comp, version, g_c_old, gcache, e = rec
                a = adj_rep.pop((comp, version + 1), None)
                if a is None:
                    continue
                G_nodes = node_emb_cache[1]
                de = float(a @ (g_c_old - G_nodes[i]))
                dg_c, dg_x = _gate_bwd(params, gcache, de, grads)
                adj = rep_adj(comp, version)
                adj += e * a + dg_c
                adj_G[i] += (1.0 - e) * a + dg_x
            elif rec[0] == "new":
                _, i, comp = rec
                a = adj_rep.pop((comp, 0), None)
                if a is not None:
                    adj_G[i] += a
            else:
                _, i, outcome, dz = rec
                G_nodes = node_emb_cache[1]
                for (cid, version, g_c, cache_c, cache_a), ds in zip(outcome, dz):
                    if ds == 0.0:
                        continue
                    dsm_nodes[i] += ds
                    dg_c_m = _mlp_bwd(params, "m", cache_c, np.array([ds]), grads)
                    dx_in = _mlp_bwd(params, "a", cache_a, np.array([ds]), grads)[0]
                    adj = rep_adj(cid, version)
                    adj += dg_c_m[0]
                    adj += dx_in[R:2 * R] + dx_in[2 * R:3 * R] * G_nodes[i]
                    adj_G[i] += dx_in[:R] + dx_in[2 * R:3 * R] * g_c

        dG_nodes = _mlp_bwd(params, "m", node_mlp_cache, dsm_nodes, grads)
        _embed_bwd(params, node_emb_cache, adj_G + dG_nodes, grads)

    return loss


def batch_loss_and_grads(params: ModelParams, batches: list[DocBatch],
                         splits: frozenset = frozenset({TRAIN, HELD}),
                         rng: np.random.Generator | None = None,
                         with_grads: bool = True):
    """Summed loss over batches; gradients are the per-document sums.

    Each document's gradient is computed in isolation and then added, so a
    duplicated document contributes exactly twice.
    """
    if not with_grads:
        return sum(_doc_pass(params, b, splits, rng, None) for b in batches)
    total = params.zero_grads()
    loss = 0.0
    for batch in batches:
        doc_grads = params.zero_grads()
        loss += _doc_pass(params, batch, splits, rng, doc_grads)
        for key in _ARRAY_KEYS:
            total[key] += doc_grads[key]
    return loss, total


# ---------------------------------------------------------------------------
# Optimizer and training loop.

class _Adam:
    def __init__(self, params: ModelParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = params.zero_grads()
        self.v = params.zero_grads()

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for key in _ARRAY_KEYS:
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            mhat = self.m[key] / b1t
            vhat = self.v[key] / b2t
            params.arrays[key] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for key in grads:
            grads[key] *= scale


def _full_gold_doc_split(corpus: list[Document]) -> dict[str, int]:
    """Stable ~10% document holdout, at least one doc on each side."""
    split = {
        d.doc_id: (HELD if _held_fraction_hash(d.doc_id) else TRAIN) for d in corpus
    }
    if len(corpus) == 1:
        return {corpus[0].doc_id: TRAIN}
    ids = sorted(split)
    if all(split[i] == TRAIN for i in ids):
        split[ids[-1]] = HELD
    if all(split[i] == HELD for i in ids):
        split[ids[0]] = TRAIN
    return split


def train(source: ModelParams, labeled, corpus: list[Document],
          hyper: Hyperparams | None = None, mode: str = "discrete") -> ModelParams:
    """Continue training a copy of ``source``; the source is never mutated.

    ``mode="discrete"`` trains on a labeled pool of span annotations;
    ``mode="full_gold"`` trains on the corpus's gold clusters directly.
    Early stopping watches a stable held-out slice (labels in discrete mode,
    documents in full_gold mode) and the best parameters are returned.
    """
    if mode not in ("discrete", "full_gold"):
        raise ValueError(f"unknown training mode {mode!r}")
    hyper = hyper or source.hyper
    params = source.copy()
    if mode == "full_gold":
        if not any(doc.gold_clusters for doc in corpus):
            raise ValueError("full_gold training needs gold clusters in the corpus")
        batches = build_full_gold_batches(params, corpus,
                                          _full_gold_doc_split(corpus))
    else:
        if labeled is None or labeled.n_labels == 0:
            raise ValueError("discrete training needs a nonempty labeled pool")
        batches = build_discrete_batches(params, corpus, labeled)

    train_splits = frozenset({TRAIN})
    held_splits = frozenset({HELD})
    train_batches = [b for b in batches if b.has_terms(train_splits)]
    held_batches = [b for b in batches if b.has_terms(held_splits)]
    if not held_batches:
        # Degenerate pools (a single label) validate on the training terms.
        held_batches, held_splits = train_batches, train_splits
    if not train_batches:
        train_batches, train_splits = batches, frozenset({TRAIN, HELD})

    rng = np.random.default_rng(hyper.seed)
    adam = _Adam(params, hyper.learning_rate)
    best_loss = math.inf
    best_arrays = {k: v.copy() for k, v in params.arrays.items()}
    stale = 0

    for _epoch in range(hyper.max_epochs):
        order = rng.permutation(len(train_batches))
        for idx in order:
            grads = params.zero_grads()
            _doc_pass(params, train_batches[int(idx)], train_splits, rng, grads)
            _clip_global_norm(grads, hyper.grad_clip)
            adam.step(params, grads)
        val = batch_loss_and_grads(params, held_batches, held_splits,
                                   rng=None, with_grads=False)
        if val < best_loss:
            best_loss = val
            best_arrays = {k: v.copy() for k, v in params.arrays.items()}
            stale = 0
        else:
            stale += 1
            if stale >= hyper.early_stop_patience:
                break

    return ModelParams(best_arrays, hyper, params.n_features,
                       featurizer=params.featurizer)


def grad_check(params: ModelParams, batches: list[DocBatch],
               n_weights: int = 200, step: float = 1e-4,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in eval mode (no dropout).  Differences below 1e-7 in absolute value
    count as zero error so unused weights do not divide by noise.
    """
    splits = frozenset({TRAIN, HELD})
    _, grads = batch_loss_and_grads(params, batches, splits, rng=None)

    sizes = [(key, params.arrays[key].size) for key in _ARRAY_KEYS]
    total = sum(s for _, s in sizes)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(n_weights, total), replace=False)

    def locate(flat_idx: int):
        for key, size in sizes:
            if flat_idx < size:
                return key, flat_idx
            flat_idx -= size
        raise IndexError(flat_idx)

    max_err = 0.0
    for flat in sorted(int(c) for c in chosen):
        key, offset = locate(flat)
        arr = params.arrays[key]
        orig = arr.flat[offset]
        arr.flat[offset] = orig + step
        f_plus = batch_loss_and_grads(params, batches, splits, rng=None,
                                      with_grads=False)
        arr.flat[offset] = orig - step
        f_minus = batch_loss_and_grads(params, batches, splits, rng=None,
                                       with_grads=False)
        arr.flat[offset] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = grads[key].flat[offset]
        diff = abs(analytic - numeric)
        if diff < 1e-7:
            continue
        max_err = max(max_err, diff / max(abs(analytic), abs(numeric), 1e-12))
    return max_err


# ---------------------------------------------------------------------------
# Checkpoints.

def save_params(params: ModelParams, path: str) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_features": params.n_features,
        "hyper": params.hyper.to_dict(),
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **params.arrays)


def load_params(path: str) -> ModelParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {meta.get('version')} not supported"
            )
        arrays = {k: np.array(data[k]) for k in _ARRAY_KEYS}
    hyper = Hyperparams(**meta["hyper"])
    return ModelParams(arrays, hyper, int(meta["n_features"]))


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bit-exact array equality."""
    return all(np.array_equal(a.arrays[k], b.arrays[k]) for k in _ARRAY_KEYS)
