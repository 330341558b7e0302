"""Scikit-learn style wrapper around the training loop."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted

from .ascsim import ScatteringCenter
from .trainer import VARIANTS, LossWeights, TrainConfig, fit, prepare_data


def check_images(X, image_size: int | None = None) -> np.ndarray:
    """Validate a stack of square single-channel images, returning ``(n, H, W)`` float64."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError(f"expected images of shape (n, H, H) or (n, 1, H, H), got {X.shape}")
    if X.shape[1] % 16:
        raise ValueError(f"image side must be divisible by 16, got {X.shape[1]}")
    if image_size is not None and X.shape[1] != image_size:
        raise ValueError(f"estimator was fitted on {image_size}x{image_size} images, got {X.shape[1]}x{X.shape[2]}")
    return X


def check_source(source_centers, source_labels) -> tuple[list[list[ScatteringCenter]], np.ndarray]:
    """Validate scattering-center sets (objects or 8-tuples) and their labels."""
    if source_centers is None or source_labels is None:
        raise ValueError("source_centers and source_labels are both required for this variant")
    labels = np.asarray(source_labels)
    if labels.ndim != 1 or len(labels) != len(source_centers):
        raise ValueError(f"{len(source_centers)} source sets but {labels.size} labels")
    if len(labels) == 0:
        raise ValueError("empty source set")
    out = []
    for i, scs in enumerate(source_centers):
        if len(scs) == 0:
            raise ValueError(f"source sample {i} has no scattering centers")
        out.append([sc if isinstance(sc, ScatteringCenter) else ScatteringCenter(*sc) for sc in scs])
    return out, labels


class MHKTClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier trained with auxiliary scattering-center supervision.

    ``fit(X, y, source_centers=..., source_labels=...)`` trains on labeled
    target images ``X`` plus the source sets; ``variant="target_only"``
    needs no source. Hyperparameters mirror :class:`~mhkt.trainer.TrainConfig`.
    """

    def __init__(
        self,
        variant: str = "mhkt",
        tais: bool = True,
        tgkt: bool = True,
        crkt: bool = True,
        lambda1: float = 1.0,
        lambda2: float = 2.0,
        alpha: float = 0.06,
        beta: float = 1e-3,
        batch_size: int = 24,
        epochs: int = 100,
        lr: float = 1e-3,
        steps_per_epoch: int | None = None,
        image_channels: Sequence[int] = (16, 32, 64, 64),
        dtype: str = "float32",
        random_state: int = 0,
    ):
        self.variant = variant
        self.tais = tais
        self.tgkt = tgkt
        self.crkt = crkt
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.alpha = alpha
        self.beta = beta
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.steps_per_epoch = steps_per_epoch
        self.image_channels = image_channels
        self.dtype = dtype
        self.random_state = random_state

    def _config(self, image_size: int) -> TrainConfig:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        return TrainConfig(
            variant=self.variant, tais=self.tais, tgkt=self.tgkt, crkt=self.crkt,
            weights=LossWeights(self.lambda1, self.lambda2, self.beta, self.alpha),
            batch_size=self.batch_size, epochs=self.epochs, lr=self.lr, steps_per_epoch=self.steps_per_epoch,
            image_size=image_size, image_channels=tuple(self.image_channels), dtype=self.dtype,
            seed=int(self.random_state), labeled_per_class=0,
        )

    def fit(self, X, y, source_centers=None, source_labels=None):
        X = check_images(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"{len(X)} images but {y.size} labels")
        check_classification_targets(y)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        cfg = self._config(X.shape[1])
        centers, ys = None, None
        if cfg.uses_source:
            centers, ys = check_source(source_centers, source_labels)
            unknown = set(np.unique(ys)) - set(self.classes_)
            if unknown:
                raise ValueError(f"source labels {sorted(unknown)} do not occur in y")
            ys = self.label_encoder_.transform(ys)
        data = prepare_data(cfg, centers, ys, X, self.label_encoder_.transform(y), n_classes=len(self.classes_))
        result = fit(cfg, data)
        self.config_ = cfg
        self.model_ = result.state.model
        self.history_ = result.history
        self.image_size_ = X.shape[1]
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_images(X, self.image_size_)
        images = torch.as_tensor(X, dtype=self.config_.torch_dtype).unsqueeze(1)
        self.model_.eval()
        logits = self.model_.predict_logits(images)
        self.model_.train()
        return logits.double().numpy()

    def predict_proba(self, X) -> np.ndarray:
        return torch.softmax(torch.as_tensor(self.decision_function(X)), dim=1).numpy()

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
