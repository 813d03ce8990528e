"""Scikit-learn compatible front end for the semi-supervised trainer.

Follows the sklearn semi-supervised convention: pass -1 in ``y`` for
unlabeled rows. All hyperparameters are constructor arguments, so the
estimator composes with ``GridSearchCV``-style tooling via get_params /
set_params.
"""

from __future__ import annotations

import tempfile

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .data import DatasetSplit, ImageSample, UnlabeledSample
from .errors import ConfigError, DataError
from .trainer import fit


class EnergyGatedSSLClassifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised image classifier with energy-gated pseudo-labeling.

    Parameters mirror TrainConfig; see that class for semantics. ``fit``
    expects X of shape (n, H, W) with square images scaled to [0, 1] and
    integer y with -1 marking unlabeled rows.
    """

    def __init__(
        self,
        total_iters=1000,
        lr=0.03,
        momentum=0.9,
        weight_decay=1e-3,
        lr_schedule="cosine",
        batch_size=16,
        unlabeled_ratio=7,
        tau_e=-9.0,
        temperature=1.0,
        baseline_mode="off",
        tau_c=0.95,
        lambda_margin=0.5,
        prior_decay=0.99,
        triplet_margin=0.3,
        lambda_u=1.0,
        lambda_ahtl=1.5,
        model_ema_decay=0.99,
        eval_interval=200,
        seed=0,
    ):
        self.total_iters = total_iters
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.batch_size = batch_size
        self.unlabeled_ratio = unlabeled_ratio
        self.tau_e = tau_e
        self.temperature = temperature
        self.baseline_mode = baseline_mode
        self.tau_c = tau_c
        self.lambda_margin = lambda_margin
        self.prior_decay = prior_decay
        self.triplet_margin = triplet_margin
        self.lambda_u = lambda_u
        self.lambda_ahtl = lambda_ahtl
        self.model_ema_decay = model_ema_decay
        self.eval_interval = eval_interval
        self.seed = seed

    def _validate_images(self, X):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3 or X.shape[1] != X.shape[2]:
            raise DataError(f"X must have shape (n, S, S); got {X.shape}")
        if not np.isfinite(X).all():
            raise DataError("X contains non-finite pixels")
        if X.min() < 0.0 or X.max() > 1.0:
            raise DataError("pixels must lie in [0, 1]")
        return X

    def fit(self, X, y):
        X = self._validate_images(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise DataError("X and y lengths differ")
        labeled_mask = y != -1
        if not labeled_mask.any():
            raise DataError("at least one labeled sample (y != -1) is required")
        classes = np.unique(y[labeled_mask])
        if classes.min() < 0:
            raise DataError("labels must be non-negative ints, with -1 for unlabeled")
        self.classes_ = classes
        num_classes = int(classes.max()) + 1
        if num_classes < 2:
            raise ConfigError("need at least 2 classes")

        cfg = TrainConfig(
            num_classes=num_classes,
            image_size=int(X.shape[1]),
            total_iters=self.total_iters,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_schedule=self.lr_schedule,
            batch_size=self.batch_size,
            unlabeled_ratio=self.unlabeled_ratio,
            tau_e=self.tau_e,
            temperature=self.temperature,
            baseline_mode=self.baseline_mode,
            tau_c=self.tau_c,
            lambda_margin=self.lambda_margin,
            prior_decay=self.prior_decay,
            triplet_margin=self.triplet_margin,
            lambda_u=self.lambda_u,
            lambda_ahtl=self.lambda_ahtl,
            model_ema_decay=self.model_ema_decay,
            eval_interval=self.eval_interval,
            seed=self.seed,
        )
        labeled = [
            ImageSample(id=i, pixels=X[i], label=int(y[i]))
            for i in np.flatnonzero(labeled_mask)
        ]
        unlabeled = [
            UnlabeledSample(id=i, pixels=X[i]) for i in np.flatnonzero(~labeled_mask)
        ]
        split = DatasetSplit(
            labeled=labeled, unlabeled=unlabeled, test=[], num_classes=num_classes
        )
        with tempfile.TemporaryDirectory() as tmp:
            state, _ = fit(cfg, split, tmp)
        self.config_ = cfg
        self.model_ = state.ema.build_model(state.model)
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = self._validate_images(X)
        if X.shape[1] != self.config_.image_size:
            raise DataError(
                f"image size {X.shape[1]} does not match fitted size "
                f"{self.config_.image_size}"
            )
        with torch.no_grad():
            logits, _ = self.model_(torch.from_numpy(X))
        return logits

    def predict(self, X):
        return self._logits(X).argmax(dim=-1).numpy()

    def predict_proba(self, X):
        return torch.softmax(self._logits(X), dim=-1).numpy()
