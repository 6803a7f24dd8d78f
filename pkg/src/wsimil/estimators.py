"""Scikit-learn style wrappers around the bag pipeline.

`BagNormalizer` is a transformer over bag collections; `MILBagClassifier`
fits one attention head end to end and predicts the six factor
probabilities per bag. Both follow the get_params/set_params contract so
they compose with sklearn tooling (clone, grid search over bag lists).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .attention import forward, load_checkpoint, save_checkpoint
from .bags import (
    FactorLabels,
    FeatureBag,
    NORM_EPS,
    compute_domain_stats,
    normalize_features,
    read_norm_stats,
    write_norm_stats,
)
from .loss import AslConfig, sigmoid
from .training import TrainConfig, train


class BagNormalizer(BaseEstimator, TransformerMixin):
    """Per-domain standardization fitted on the training split only."""

    def __init__(self, eps: float = NORM_EPS):
        self.eps = eps

    def fit(self, bags, y=None):
        self.stats_ = compute_domain_stats(bags)
        return self

    def transform(self, bags) -> list[FeatureBag]:
        if not hasattr(self, "stats_"):
            raise NotFittedError("BagNormalizer is not fitted")
        return normalize_features(bags, self.stats_, self.eps)


def _override_labels(bags, y) -> list[FeatureBag]:
    y = np.asarray(y)
    bags = list(bags)
    if y.shape != (len(bags), 6):
        raise ValueError(f"y must be (n_bags, 6), got {y.shape}")
    return [
        FeatureBag(b.wsi_id, b.instances, b.domains, FactorLabels.from_binary(row))
        for b, row in zip(bags, y)
    ]


class MILBagClassifier(BaseEstimator, ClassifierMixin):
    """Multi-label bag classifier over one attention head.

    fit() accepts a list of FeatureBag (labels taken from the bags unless an
    (n_bags, 6) binary `y` is passed) plus an optional validation list used
    for best-epoch selection; without one, selection runs on the training
    bags themselves.
    """

    def __init__(
        self,
        head: str = "mrl",
        hidden: int = 128,
        dropout_rate: float = 0.25,
        lr: float = 0.001,
        weight_decay: float = 0.001,
        clip: float = 0.08,
        epochs: int = 25,
        gamma_pos: float = 0.0,
        gamma_neg: float = 1.0,
        margin: float = 0.0,
        seed: int = 0,
        normalize: bool = True,
    ):
        self.head = head
        self.hidden = hidden
        self.dropout_rate = dropout_rate
        self.lr = lr
        self.weight_decay = weight_decay
        self.clip = clip
        self.epochs = epochs
        self.gamma_pos = gamma_pos
        self.gamma_neg = gamma_neg
        self.margin = margin
        self.seed = seed
        self.normalize = normalize

    def _config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            clip=self.clip,
            epochs=self.epochs,
            head=self.head,
            hidden=self.hidden,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
            asl=AslConfig(self.gamma_pos, self.gamma_neg, self.margin),
        )

    def fit(self, bags, y=None, val_bags=None):
        bags = _override_labels(bags, y) if y is not None else list(bags)
        if self.normalize:
            self.normalizer_ = BagNormalizer().fit(bags)
            train_bags = self.normalizer_.transform(bags)
            valid_bags = (
                self.normalizer_.transform(val_bags) if val_bags else train_bags
            )
        else:
            self.normalizer_ = None
            train_bags = bags
            valid_bags = list(val_bags) if val_bags else train_bags
        self.params_, self.history_ = train(train_bags, valid_bags, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("MILBagClassifier is not fitted")

    def _prepared(self, bags) -> list[FeatureBag]:
        bags = list(bags)
        if getattr(self, "normalizer_", None) is not None:
            return self.normalizer_.transform(bags)
        return bags

    def decision_function(self, bags) -> np.ndarray:
        self._check_fitted()
        rows = []
        for bag in self._prepared(bags):
            logits, _, _ = forward(self.head, bag.instances, self.params_)
            rows.append(logits)
        return np.stack(rows)

    def predict_proba(self, bags) -> np.ndarray:
        return sigmoid(self.decision_function(bags))

    def predict(self, bags) -> np.ndarray:
        return (self.predict_proba(bags) > 0.5).astype(np.uint8)

    def attention_scores(self, bag) -> np.ndarray:
        """Eval-mode instance scores for one bag (softmax weights or raw MRL)."""
        self._check_fitted()
        prepared = self._prepared([bag])[0]
        _, attn, _ = forward(self.head, prepared.instances, self.params_)
        return attn

    def save(self, checkpoint_path: str | Path) -> None:
        """Write the checkpoint plus a `.norm` sidecar when normalization is on."""
        self._check_fitted()
        save_checkpoint(checkpoint_path, self.head, self.params_)
        if getattr(self, "normalizer_", None) is not None:
            write_norm_stats(f"{checkpoint_path}.norm", self.normalizer_.stats_)

    @classmethod
    def from_checkpoint(cls, checkpoint_path: str | Path) -> "MILBagClassifier":
        head, params = load_checkpoint(checkpoint_path)
        model = cls(head=head, hidden=params.hidden)
        model.params_ = params
        sidecar = Path(f"{checkpoint_path}.norm")
        if sidecar.exists():
            normalizer = BagNormalizer()
            normalizer.stats_ = read_norm_stats(sidecar)
            model.normalizer_ = normalizer
        else:
            model.normalizer_ = None
            model.normalize = False
        model.history_ = []
        return model
