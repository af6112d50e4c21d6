"""scikit-learn style wrappers around the segmentation models and QuFeX."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .harness import IOU_THRESHOLD, fit_arrays, mean_iou
from .models import ModelConfig, build_model
from .qufex import N_THETA, QuFeX, QuFeXLayer
from . import nn
from .validation import check_feature_maps, check_images, check_masks


class QuNetSegmenter(BaseEstimator):
    """Binary segmenter: U-Net or a Qu-Net variant trained with Adam on BCE.

    ``X`` is (N, 3, H, W) in [0, 1] and ``y`` is (N, 1, H, W) or (N, H, W)
    with values in {0, 1}. The input size is taken from ``X`` at fit time.
    ``score`` is the per-image IoU averaged over the batch.
    """

    def __init__(self, variant="unet", scale="tiny", epochs=10, batch_size=64, lr=1e-3,
                 random_state=0, threshold=IOU_THRESHOLD):
        self.variant = variant
        self.scale = scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state
        self.threshold = threshold

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X)
        config = ModelConfig(self.variant, self.scale, input_size=X.shape[2])
        self.model_ = build_model(config, seed=self.random_state)
        self.loss_curve_ = fit_arrays(self.model_, X, y, self.epochs, self.batch_size, self.lr,
                                      shuffle_seed=self.random_state)
        self.input_size_ = X.shape[2]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X, size=self.input_size_)
        return self.model_.predict_proba(X, self.batch_size)

    def predict(self, X):
        return (self.predict_proba(X) >= self.threshold).astype(np.int64)

    def score(self, X, y):
        X = check_images(X, size=getattr(self, "input_size_", None))
        y = check_masks(y, X)
        return mean_iou(self.predict_proba(X), y, self.threshold)


class QuFeXTransformer(TransformerMixin, BaseEstimator):
    """Residual QuFeX block as a stateless feature transformer: ``Q(x) + x``.

    ``layout="8-1"`` is one 8-qubit layer over channel pairs;
    ``layout="4-2"`` is two 4-qubit layers summed and merged by a
    ``merge_kernel`` convolution (a fresh Glorot draw if not given).
    Angles are drawn from ``random_state`` unless ``theta`` is supplied as
    one 4-vector per layer. Nothing is learned in ``fit``.
    """

    def __init__(self, layout="4-2", theta=None, merge_kernel=None, random_state=0):
        self.layout = layout
        self.theta = theta
        self.merge_kernel = merge_kernel
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_feature_maps(X)
        rng = np.random.default_rng(self.random_state)
        n_layers = {"8-1": 1, "4-2": 2}.get(self.layout)
        if n_layers is None:
            raise ValueError(f"layout must be '8-1' or '4-2', got {self.layout!r}")
        thetas = self.theta
        if thetas is None:
            thetas = [rng.uniform(0, 2 * np.pi, N_THETA) for _ in range(n_layers)]
        thetas = np.asarray(thetas, dtype=np.float64).reshape(n_layers, N_THETA)
        c = X.shape[1]
        if n_layers == 1:
            layers = [QuFeXLayer(8, 1, thetas[0], group_size=2)]
            merge = None
        else:
            layers = [QuFeXLayer(4, 1, thetas[0]), QuFeXLayer(4, 2, thetas[1])]
            merge = self.merge_kernel
            if merge is None:
                merge = nn.glorot_uniform((c, c, 3, 3), 9 * c, 9 * c, rng)
        self.block_ = QuFeX(layers, None if merge is None else np.asarray(merge, dtype=np.float64))
        self.n_channels_ = c
        return self

    def transform(self, X):
        check_is_fitted(self, "block_")
        X = check_feature_maps(X)
        return self.block_.forward(X)
