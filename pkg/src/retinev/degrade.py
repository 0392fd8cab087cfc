"""Low-light degradation model for training-data synthesis.

Two stages: spatial degradations on the ground-truth image (Gaussian blur,
downsample/upsample, Poisson-Gaussian noise) followed by temporal
degradations on the simulated FPE map (latency, dead pixels, contrast
threshold jitter). Degradation parameters are sampled per training sample
from configured ranges and the sub-steps within each stage run in a
randomly shuffled order. Everything is a pure function of
(inputs, cfg.seed, sample_index) so samples can be synthesized in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .events import DEFAULT_EPS_E, FpeMap, SensorConstants, simulate_fpe_map
from .raster import EncodedRaster, LinearRaster, gamma_decode


@dataclass(frozen=True)
class DegradationConfig:
    """Sampling ranges for the spatial and temporal degradation stages.

    A Poisson scale of 0 disables shot noise (identity); otherwise it is the
    effective photon count at full scale. Ranges are inclusive (low, high).
    """

    blur_sigma_range: tuple[float, float] = (0.0, 1.5)
    downsample_factors: tuple[int, ...] = (1, 2)
    poisson_scale_range: tuple[float, float] = (50.0, 500.0)
    gauss_sigma_range: tuple[float, float] = (0.0, 0.03)
    latency_alpha_range: tuple[float, float] = (0.0, 0.2)
    dead_pixel_max_prob: float = 0.05
    threshold_mu: float = 0.2
    threshold_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_sigma_range", "poisson_scale_range", "gauss_sigma_range",
                     "latency_alpha_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 0 <= low <= high, got ({lo}, {hi})")
        if any(f < 1 for f in self.downsample_factors):
            raise ValueError("downsample factors must be >= 1")
        if not 0.0 <= self.dead_pixel_max_prob <= 1.0:
            raise ValueError("dead_pixel_max_prob must be in [0, 1]")
        if self.threshold_mu <= 0:
            raise ValueError("threshold_mu must be > 0")
        if self.threshold_sigma < 0:
            raise ValueError("threshold_sigma must be >= 0")

    @classmethod
    def identity(cls, seed: int = 0) -> "DegradationConfig":
        """Config whose every degradation degenerates to a no-op."""
        return cls(
            blur_sigma_range=(0.0, 0.0),
            downsample_factors=(1,),
            poisson_scale_range=(0.0, 0.0),
            gauss_sigma_range=(0.0, 0.0),
            latency_alpha_range=(0.0, 0.0),
            dead_pixel_max_prob=0.0,
            threshold_sigma=0.0,
            seed=seed,
        )


def derive_rng(seed: int, sample_index: int) -> np.random.Generator:
    """Independent RNG stream for one sample; order-independent across samples."""
    return np.random.default_rng(np.random.SeedSequence([seed, sample_index]))


def sample_threshold_field(
    shape: tuple[int, int], mu: float, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Per-pixel contrast thresholds ~ N(mu, sigma) truncated strictly positive."""
    c = rng.normal(mu, sigma, size=shape) if sigma > 0 else np.full(shape, mu)
    floor = 1e-3 * mu
    return np.maximum(c, floor)


def degrade_spatial(gt: LinearRaster, cfg: DegradationConfig, rng: np.random.Generator) -> LinearRaster:
    """Blur + downsample/upsample + Poisson-Gaussian noise in shuffled order."""
    x = gt.data.astype(np.float64)

    def blur(img):
        sigma = rng.uniform(*cfg.blur_sigma_range)
        if sigma == 0.0:
            return img
        return gaussian_filter(img, sigma=(sigma, sigma, 0), mode="nearest")

    def resample(img):
        factor = int(rng.choice(cfg.downsample_factors))
        if factor == 1:
            return img
        h, w = img.shape[:2]
        small = cv2.resize(img, (max(1, w // factor), max(1, h // factor)),
                           interpolation=cv2.INTER_AREA)
        up = cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR)
        return up.reshape(img.shape)

    def noise(img):
        scale = rng.uniform(*cfg.poisson_scale_range)
        sigma = rng.uniform(*cfg.gauss_sigma_range)
        out = img
        if scale > 0.0:
            out = rng.poisson(out * scale).astype(np.float64) / scale
        if sigma > 0.0:
            out = out + rng.normal(0.0, sigma, size=out.shape)
        return out

    steps = [blur, resample, noise]
    rng.shuffle(steps)
    for step in steps:
        x = step(x)
    return LinearRaster(np.clip(x, 0.0, 1.0).astype(np.float32))


def degrade_temporal(m: FpeMap, cfg: DegradationConfig, rng: np.random.Generator) -> FpeMap:
    """Latency, dead pixels, and threshold jitter in shuffled order.

    Latency and the dead-pixel probability both grow with the timestamp:
    darker pixels fire later and degrade more.
    """
    t = m.t_fpe.copy()

    def latency(tt):
        alpha = rng.uniform(*cfg.latency_alpha_range)
        t_max = np.nanmax(tt) if np.any(~np.isnan(tt)) else None
        if alpha == 0.0 or t_max is None or t_max == 0:
            return tt
        return tt * (1.0 + alpha * tt / t_max)

    def dead_pixels(tt):
        if cfg.dead_pixel_max_prob == 0.0 or not np.any(~np.isnan(tt)):
            return tt
        t_max = np.nanmax(tt)
        prob = cfg.dead_pixel_max_prob * np.nan_to_num(tt / t_max, nan=0.0)
        kill = rng.random(tt.shape) < prob
        out = tt.copy()
        out[kill] = np.nan
        return out

    def threshold_jitter(tt):
        if cfg.threshold_sigma == 0.0:
            return tt
        c_new = sample_threshold_field(tt.shape, cfg.threshold_mu, cfg.threshold_sigma, rng)
        return tt * (c_new / cfg.threshold_mu)

    steps = [latency, dead_pixels, threshold_jitter]
    rng.shuffle(steps)
    for step in steps:
        t = step(t)
    return FpeMap(t)


def synthesize_training_sample(
    gt: EncodedRaster,
    sensor: SensorConstants,
    cfg: DegradationConfig,
    sample_index: int,
    eps_E: float = DEFAULT_EPS_E,
) -> tuple[FpeMap, LinearRaster]:
    """Full synthesis chain: one degraded FPE map plus the clean linear GT.

    linearize -> degrade_spatial -> luminance -> simulate FPE with Gaussian
    per-pixel thresholds -> degrade_temporal.
    """
    rng = derive_rng(cfg.seed, sample_index)
    gt_linear = gamma_decode(gt)
    degraded = degrade_spatial(gt_linear, cfg, rng)
    thresholds = sample_threshold_field(
        (gt.height, gt.width), cfg.threshold_mu, cfg.threshold_sigma, rng
    )
    fpe = simulate_fpe_map(degraded, sensor, thresholds, eps_E=eps_E)
    fpe = degrade_temporal(fpe, cfg, rng)
    return fpe, gt_linear
