"""Scikit-learn style front door for the embedding model.

``UnifiedEmbedding`` wraps corpus preparation, training and encoding
behind the familiar fit / transform / predict surface so the model can sit
in pipelines and grid searches. X is always a ``(Corpus, FeatureSet)``
pair for ``fit`` and a list of caption records (or a Corpus) for the
text-side methods.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corpus import CaptionRecord, Corpus
from .model import ALL_FAMILIES, JointModel, ModelDims
from .objective import LossConfig, cosine_rows
from .trainkit import OptimConfig, train
from .vision import FeatureSet


def check_fit_input(X) -> tuple[Corpus, FeatureSet]:
    if not (isinstance(X, tuple) and len(X) == 2):
        raise TypeError("X must be a (Corpus, FeatureSet) pair")
    corpus, features = X
    if not isinstance(corpus, Corpus):
        raise TypeError(f"first element must be a Corpus, got {type(corpus).__name__}")
    if not isinstance(features, FeatureSet):
        raise TypeError(f"second element must be a FeatureSet, got {type(features).__name__}")
    if not corpus.records:
        raise ValueError("cannot fit on an empty corpus")
    return corpus, features


def as_records(X) -> list[CaptionRecord]:
    if isinstance(X, Corpus):
        return list(X.records)
    records = list(X)
    for r in records:
        if not isinstance(r, CaptionRecord):
            raise TypeError("expected CaptionRecord items or a Corpus")
    return records


class UnifiedEmbedding(TransformerMixin, BaseEstimator):
    """Trainable caption/image embedding with retrieval-flavored predict.

    After ``fit((corpus, features))``:

    * ``transform(records)`` returns caption embeddings, one row each;
    * ``encode_images(features)`` returns pooled image embeddings;
    * ``predict(records)`` returns, per caption, the id of the nearest
      image seen during fit;
    * ``score(records)`` is caption-to-image R@1 against the records' own
      image ids.
    """

    def __init__(self, embed_dim: int = 64, basic_dim: int = 32, modifier_dim: int = 16,
                 alpha: float = 0.75, margin: float = 0.2, hard_mining: bool = True,
                 lr: float = 5e-3, epochs: int = 30, batch_size: int = 32,
                 n_negatives: int = 8, algorithm: str = "adam", seed: int = 0,
                 out_dir: str | None = None):
        self.embed_dim = embed_dim
        self.basic_dim = basic_dim
        self.modifier_dim = modifier_dim
        self.alpha = alpha
        self.margin = margin
        self.hard_mining = hard_mining
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_negatives = n_negatives
        self.algorithm = algorithm
        self.seed = seed
        self.out_dir = out_dir

    def _optim_config(self) -> OptimConfig:
        return OptimConfig(
            algorithm=self.algorithm, lr=self.lr, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, alpha=self.alpha,
            n_negatives=self.n_negatives,
            loss=LossConfig(margin=self.margin, hard_mining=self.hard_mining),
        )

    def fit(self, X, y=None):
        import tempfile

        corpus, features = check_fit_input(X)
        dims = ModelDims(
            embed_dim=self.embed_dim, basic_dim=self.basic_dim,
            modifier_dim=self.modifier_dim,
            feature_depth=int(features.stack(features.image_ids[:1])[0].shape[-1]),
        )
        cfg = self._optim_config()
        if self.out_dir is not None:
            result = train(corpus, features, cfg, self.out_dir, dims=dims)
        else:
            with tempfile.TemporaryDirectory() as tmp:
                result = train(corpus, features, cfg, tmp, dims=dims)
        self.model_: JointModel = result.model
        self.metrics_ = result.metrics
        self.image_ids_ = list(features.by_id)
        with torch.no_grad():
            _, pooled = self.model_.encode_images(features, self.image_ids_)
        self.image_embeddings_ = pooled.numpy()
        return self

    def _check_fitted(self) -> JointModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("this UnifiedEmbedding instance is not fitted yet")
        return self.model_

    def transform(self, X, families: tuple[str, ...] = ALL_FAMILIES) -> np.ndarray:
        model = self._check_fitted()
        records = as_records(X)
        if not records:
            return np.zeros((0, self.embed_dim))
        with torch.no_grad():
            encodings = model.encode_records(records, alpha=self.alpha, families=families)
            return torch.stack([e.u_cap for e in encodings]).numpy()

    def encode_images(self, features: FeatureSet, image_ids: list[str] | None = None) -> np.ndarray:
        model = self._check_fitted()
        ids = image_ids if image_ids is not None else list(features.by_id)
        with torch.no_grad():
            _, pooled = model.encode_images(features, ids)
        return pooled.numpy()

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        embs = torch.from_numpy(self.transform(X))
        gallery = torch.from_numpy(self.image_embeddings_)
        sims = cosine_rows(embs, gallery).numpy()
        best = sims.argmax(axis=1)  # first maximum, so ties go to the lowest index
        return np.array([self.image_ids_[int(i)] for i in best])

    def score(self, X, y=None) -> float:
        records = as_records(X)
        predicted = self.predict(records)
        gold = [r.image_id for r in records]
        if y is not None:
            gold = list(y)
        hits = sum(1 for p, g in zip(predicted, gold) if p == g)
        return hits / len(records) if records else 0.0
