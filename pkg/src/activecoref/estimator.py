"""Estimator facade over the functional training and inference API.

``IncrementalCoreferenceResolver`` follows the familiar fit/predict shape:
``fit`` trains from gold clusters, ``predict`` returns span clusterings, and
``score`` reports the averaged coreference F1.  The functional modules stay
the primary API; this wrapper exists for pipeline-style callers.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import Document
from .clusterer import infer_document
from .features import SpanFeaturizer
from .loop import LabeledPool, evaluate_model
from .metrics import EvalResult
from .scorer import Hyperparams, ModelParams, init_params, load_params, save_params, train

__all__ = ["IncrementalCoreferenceResolver"]


def _validate_documents(X) -> list[Document]:
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("expected a nonempty list of Document objects")
    for item in X:
        if not isinstance(item, Document):
            raise TypeError(f"expected Document, got {type(item).__name__}")
    return list(X)


class IncrementalCoreferenceResolver(BaseEstimator):
    """Span clustering model with incremental inference.

    Parameters mirror the training configuration; see ``Hyperparams``.
    After ``fit`` the trained weights live in ``params_``.
    """

    def __init__(self, max_epochs: int = 50, early_stop_patience: int = 10,
                 prune_ratio: float = 0.4, dropout: float = 0.4,
                 grad_clip: float = 10.0, learning_rate: float = 1e-4,
                 seed: int = 0, max_width: int = 10, hash_dim: int = 512,
                 rep_dim: int = 64, hidden_dim: int = 64,
                 mention_threshold: float = 0.5,
                 mention_loss_weight: float = 1.0,
                 cluster_loss_weight: float = 1.0,
                 bce_positive_weight: float = 1.0):
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.prune_ratio = prune_ratio
        self.dropout = dropout
        self.grad_clip = grad_clip
        self.learning_rate = learning_rate
        self.seed = seed
        self.max_width = max_width
        self.hash_dim = hash_dim
        self.rep_dim = rep_dim
        self.hidden_dim = hidden_dim
        self.mention_threshold = mention_threshold
        self.mention_loss_weight = mention_loss_weight
        self.cluster_loss_weight = cluster_loss_weight
        self.bce_positive_weight = bce_positive_weight

    def _hyper(self) -> Hyperparams:
        return Hyperparams(
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            prune_ratio=self.prune_ratio,
            dropout=self.dropout,
            grad_clip=self.grad_clip,
            learning_rate=self.learning_rate,
            seed=self.seed,
            max_width=self.max_width,
            hash_dim=self.hash_dim,
            rep_dim=self.rep_dim,
            hidden_dim=self.hidden_dim,
            mention_threshold=self.mention_threshold,
            mention_loss_weight=self.mention_loss_weight,
            cluster_loss_weight=self.cluster_loss_weight,
            bce_positive_weight=self.bce_positive_weight,
        )

    def _check_fitted(self) -> ModelParams:
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "This IncrementalCoreferenceResolver instance is not fitted yet; "
                "call fit before using this estimator."
            )
        return self.params_

    def fit(self, X, y=None) -> "IncrementalCoreferenceResolver":
        """Train from the documents' gold clusters (full supervision)."""
        docs = _validate_documents(X)
        hyper = self._hyper()
        featurizer = SpanFeaturizer(hash_dim=hyper.hash_dim)
        h0 = init_params(featurizer.n_features, hyper, featurizer=featurizer)
        self.params_ = train(h0, None, docs, hyper, mode="full_gold")
        return self

    def continue_fit(self, X, pool: LabeledPool) -> "IncrementalCoreferenceResolver":
        """Retrain from the fitted weights on a labeled span pool."""
        docs = _validate_documents(X)
        source = self._check_fitted()
        self.params_ = train(source, pool, docs, source.hyper, mode="discrete")
        return self

    def predict(self, X) -> list:
        """Predicted clusters per document: tuples of Span tuples."""
        params = self._check_fitted()
        return [infer_document(params, doc)[0] for doc in _validate_documents(X)]

    def predict_traces(self, X) -> list:
        params = self._check_fitted()
        return [infer_document(params, doc)[1] for doc in _validate_documents(X)]

    def score(self, X, y=None) -> float:
        """Averaged coreference F1 against the documents' gold clusters."""
        params = self._check_fitted()
        result, _ = evaluate_model(params, _validate_documents(X))
        return result.avg_f1

    def evaluate(self, X) -> EvalResult:
        params = self._check_fitted()
        result, _ = evaluate_model(params, _validate_documents(X))
        return result

    def save(self, path: str) -> None:
        save_params(self._check_fitted(), path)

    @classmethod
    def from_checkpoint(cls, path: str) -> "IncrementalCoreferenceResolver":
        params = load_params(path)
        hyper = params.hyper
        est = cls(**{f: getattr(hyper, f) for f in (
            "max_epochs", "early_stop_patience", "prune_ratio", "dropout",
            "grad_clip", "learning_rate", "seed", "max_width", "hash_dim",
            "rep_dim", "hidden_dim", "mention_threshold",
            "mention_loss_weight", "cluster_loss_weight", "bce_positive_weight",
        )})
        est.params_ = params
        return est
