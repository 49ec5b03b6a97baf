"""Estimator facade: the CNN pipeline behind a fit/predict interface.

CNNClassifier takes raw uint8 pixel arrays, runs the preprocessing
pipeline (resize, histogram equalization, normalization), trains the
reference architecture, and predicts class labels.  It follows the
standard estimator conventions: constructor arguments are stored
verbatim, fitted state lives in trailing-underscore attributes, and
``get_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .architecture import reference_cnn_config
from .data import DISPLAY_NAMES, ArrayDataset, ClassCatalog
from .exceptions import DataError
from .model import init_params, predict_proba
from .preprocessing import AugmentRanges
from .training import TrainConfig, train


def check_image_array(x, name="X"):
    """Validate a (n_samples, height, width, 3) uint8 pixel array."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[3] != 3:
        raise DataError(
            "%s must be (n_samples, height, width, 3) pixels, got %r" % (name, x.shape)
        )
    if x.dtype != np.uint8:
        raise DataError("%s must be uint8 pixels in [0, 255], got %s" % (name, x.dtype))
    if x.shape[0] == 0:
        raise DataError("%s is empty" % (name,))
    return x


def check_labels(y, n_samples, name="y"):
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise DataError(
            "%s must hold one label per sample (%d), got shape %r"
            % (name, n_samples, y.shape)
        )
    return y


class CNNClassifier(BaseEstimator, ClassifierMixin):
    """CNN classifier over lesion-style RGB images.

    Labels may be diagnosis-code strings (then the fitted class catalog
    carries their display names) or plain integers.  ``width`` scales
    the layer sizes of the reference architecture for small runs;
    ``augment`` enables the rotation/shift/zoom training augmentation.
    Validation metrics in ``history_`` are measured on the training
    data; this estimator does not hold out a split on its own.
    """

    def __init__(self, input_side=32, epochs=10, batch_size=32, lr=1e-3,
                 dropout_rate=0.5, freeze_fraction=None, width=1.0,
                 augment=False, equalize_mode="per-channel", seed=0):
        self.input_side = input_side
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.dropout_rate = dropout_rate
        self.freeze_fraction = freeze_fraction
        self.width = width
        self.augment = augment
        self.equalize_mode = equalize_mode
        self.seed = seed

    def _catalog(self, num_classes):
        classes = self.classes_
        if classes.dtype.kind in ("U", "S", "O") and all(
            str(c) in DISPLAY_NAMES for c in classes
        ):
            return ClassCatalog(tuple(str(c) for c in classes))
        return ClassCatalog.subset(num_classes)

    def fit(self, X, y):
        X = check_image_array(X)
        y = check_labels(y, X.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise DataError("fit needs at least two distinct classes")
        if self.classes_.size > len(DISPLAY_NAMES):
            raise DataError(
                "fit supports at most %d classes, got %d"
                % (len(DISPLAY_NAMES), self.classes_.size)
            )
        catalog = self._catalog(self.classes_.size)
        dataset = ArrayDataset(X, encoded, catalog, input_side=self.input_side,
                               equalize_mode=self.equalize_mode)
        config = reference_cnn_config(
            self.input_side,
            num_classes=self.classes_.size,
            dropout_rate=self.dropout_rate,
            width=self.width,
        )
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
            freeze_fraction=self.freeze_fraction,
            augment=AugmentRanges() if self.augment else None,
        )
        model = init_params(config, self.seed, classes=catalog)
        self.model_, self.history_ = train(model, dataset, dataset, cfg)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this CNNClassifier instance is not fitted yet; call fit first"
            )

    def _tensors(self, X):
        X = check_image_array(X)
        dataset = ArrayDataset(
            X,
            np.zeros(X.shape[0], dtype=np.int64),
            self.model_.classes,
            input_side=self.input_side,
            equalize_mode=self.equalize_mode,
        )
        return np.concatenate([inputs for inputs, _ in dataset.batches(64)])

    def predict_proba(self, X):
        """Class probabilities, columns ordered like ``classes_``."""
        self._require_fitted()
        return predict_proba(self.model_, self._tensors(X))

    def predict(self, X):
        """Predicted labels from the fitted label space."""
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
