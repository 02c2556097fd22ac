"""Estimator-style front door: constructor holds hyperparameters, ``fit``
learns from a labeled source set plus unlabeled target images, ``predict``
classifies either domain.  Mirrors the scikit-learn parameter protocol
(get_params/set_params, trailing-underscore fitted attributes) without
depending on scikit-learn."""

from __future__ import annotations

import inspect

import numpy as np

from .data import DomainDataset
from .trainer import TrainConfig, fit as _fit, predict as _predict


def check_image_array(x, name: str = "X") -> np.ndarray:
    """Validate a (n, c, h, w) float image array with pixels in [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4-D (n, channels, height, width), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one image")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} pixel values must lie in [0, 1]")
    return arr


def check_labels(y, n: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(int)):
            raise ValueError("y must contain integer class indices")
        arr = arr.astype(int)
    if arr.min() < 0:
        raise ValueError(f"class indices must be non-negative, got {arr.min()}")
    return arr


class SwapGraphClassifier:
    """Domain-adaptive classifier: disentangled per-domain autoencoders feed
    batch instance graphs, and the graph embeddings are aligned across
    domains adversarially while a linear head learns the source labels."""

    def __init__(
        self,
        lambda_swap: float = 0.9,
        lambda_str: float = 1.2,
        lambda_adv: float = 1.3,
        learning_rate: float = 1e-3,
        gen_lr: float | None = None,
        dom_lr: float | None = None,
        epochs: int = 15,
        batch_size: int = 8,
        d_tex: int = 32,
        c_str: int = 1,
        gcn_hidden: int = 32,
        gcn_out: int = 16,
        dom_hidden: int = 16,
        seed: int = 0,
        disable_str: bool = False,
        disable_swap: bool = False,
        source_only: bool = False,
        rec_loss: str = "l1",
        eval_batch: int | None = None,
    ):
        for name in self._param_names():
            setattr(self, name, locals()[name])

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "SwapGraphClassifier":
        valid = self._param_names()
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters are {valid}"
                )
            setattr(self, key, value)
        return self

    def fit(self, X, y, X_target=None) -> "SwapGraphClassifier":
        """Learn from labeled source images and (optionally) unlabeled target
        images.  Without target images, training falls back to source-only
        mode — no adaptation, useful as a baseline."""
        X = check_image_array(X, "X")
        y = check_labels(y, X.shape[0])
        n, c, h, w = X.shape
        if h != w:
            raise ValueError(f"images must be square, got {h}x{w}")
        source_only = self.source_only or X_target is None
        if X_target is None:
            X_target = X  # placeholder stream; never touched in source-only mode
        else:
            X_target = check_image_array(X_target, "X_target")
            if X_target.shape[1:] != (c, h, w):
                raise ValueError(
                    f"X_target images have shape {X_target.shape[1:]}, expected {(c, h, w)}"
                )
        classes = np.unique(y)
        config = TrainConfig(
            lambda_swap=self.lambda_swap,
            lambda_str=self.lambda_str,
            lambda_adv=self.lambda_adv,
            learning_rate=self.learning_rate,
            gen_lr=self.gen_lr,
            dom_lr=self.dom_lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            image_size=h,
            in_channels=c,
            d_tex=self.d_tex,
            c_str=self.c_str,
            gcn_hidden=self.gcn_hidden,
            gcn_out=self.gcn_out,
            dom_hidden=self.dom_hidden,
            n_classes=int(classes.max()) + 1,
            seed=self.seed,
            disable_str=self.disable_str,
            disable_swap=self.disable_swap,
            source_only=source_only,
            rec_loss=self.rec_loss,
            eval_batch=self.eval_batch,
        )
        source = DomainDataset(images=X, labels=y, domain_tag="source")
        target = DomainDataset(images=X_target, labels=None, domain_tag="target")
        self.bundle_, self.history_ = _fit(config, source, target)
        self.classes_ = classes
        return self

    def _check_fitted(self):
        if not hasattr(self, "bundle_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def predict_proba(self, X, domain: str = "target") -> np.ndarray:
        self._check_fitted()
        return _predict(self.bundle_, check_image_array(X), domain=domain)

    def predict(self, X, domain: str = "target") -> np.ndarray:
        return self.predict_proba(X, domain=domain).argmax(axis=1)

    def transform(self, X, domain: str = "target") -> np.ndarray:
        """Graph embeddings for a batch of images (the classifier's input
        space), chunked the same way as prediction."""
        self._check_fitted()
        from .graph import build_graph, gcn_forward
        from .autodiff import Tensor

        arr = check_image_array(X)
        cfg = self.bundle_.config
        side = "S" if (domain == "source" or cfg.source_only) else "T"
        chunk = cfg.eval_batch or cfg.batch_size
        out = []
        for start in range(0, arr.shape[0], chunk):
            code = self.bundle_.fdn.encode(side, Tensor(arr[start : start + chunk]))
            out.append(gcn_forward(self.bundle_.gcn, build_graph(code)).data)
        return np.concatenate(out, axis=0)

    def score(self, X, y, domain: str = "target") -> float:
        from .metrics import accuracy

        preds = self.predict(X, domain=domain)
        return accuracy(preds, check_labels(np.asarray(y), preds.shape[0]))
