"""Scikit-learn compatible wrapper around the enhancement pipeline.

``LowLightEnhancer`` exposes fit/transform with get_params/set_params so the
model composes with sklearn tooling (grid search over beta or training
budget, pipelines, cloning). ``fit`` expects a dataset directory in the
low/high/fpe layout; ``transform`` takes (EncodedRaster, FpeMap) pairs.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import RunConfig, load_run_config
from .pipeline import enhance_image
from .train import model_from_checkpoint, pretrain_denoiser, train_main


class LowLightEnhancer(BaseEstimator, TransformerMixin):
    """Trainable low-light enhancer driven by temporal-mapping event maps."""

    def __init__(self, iters_pretrain=500, iters_main=2000, patch_size=64,
                 batch_size=8, seed=0, beta=0.0, use_ire=True, config_path=None):
        self.iters_pretrain = iters_pretrain
        self.iters_main = iters_main
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.seed = seed
        self.beta = beta
        self.use_ire = use_ire
        self.config_path = config_path

    def _run_config(self, train_dir) -> RunConfig:
        overrides = {
            "data": {"train_dir": str(train_dir)},
            "model": {"use_ire": self.use_ire},
            "train": {
                "iters_pretrain": self.iters_pretrain,
                "iters_main": self.iters_main,
                "patch_size": self.patch_size,
                "batch_size": self.batch_size,
                "seed": self.seed,
            },
        }
        return load_run_config(self.config_path, overrides)

    def fit(self, X, y=None):
        """Train on a dataset directory containing low/, high/, and fpe/."""
        cfg = self._run_config(X)
        ckpt = pretrain_denoiser(cfg) if cfg.train.iters_pretrain > 0 else None
        ckpt = train_main(cfg, init=ckpt)
        self.config_ = cfg
        self.checkpoint_ = ckpt
        self.model_ = model_from_checkpoint(ckpt, cfg)
        return self

    def transform(self, X):
        """Enhance a list of (EncodedRaster, FpeMap) pairs; returns a list of
        (h, w, 3) float arrays in [0, 1]."""
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before transform")
        return [enhance_image(self.model_, low, fpe, beta=self.beta)["s_hat"]
                for low, fpe in X]

    def predict(self, X):
        return self.transform(X)
