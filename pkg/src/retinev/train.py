"""Two-stage training: denoiser pretraining under the degradation model,
then joint training of the full pipeline; deterministic checkpointing.

All per-sample randomness (pair choice, crop, augmentation, degradations)
derives from (seed, stream, sample_index) so a resumed run consumes exactly
the same data as an uninterrupted one and two runs with the same seed
produce bit-identical checkpoints on CPU.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .degrade import (degrade_spatial, degrade_temporal, sample_threshold_field,
                      synthesize_training_sample)
from .evaluation import load_paired_dataset
from .events import SensorConstants, simulate_fpe_map
from .losses import FeaturePyramid, LossWeights, perceptual_loss, recon_loss, \
    reflectance_loss, total_loss
from .model import RetinevModel
from .raster import EncodedRaster, LinearRaster, gamma_decode, gamma_encode, load_image
from .t2i import beta_normalize

CHECKPOINT_VERSION = 1

# stream tags keeping the pretrain/main data RNG domains disjoint
_STREAM_PRETRAIN = 1
_STREAM_MAIN = 2


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """lr(0) = lr_max, lr(total) = lr_min, monotone non-increasing."""
    if total <= 0:
        return lr_max
    frac = min(max(step / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(ckpt, tmp)
    tmp.replace(path)


def load_checkpoint(path, expected_hash: str | None = None) -> dict:
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ValueError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    if expected_hash is not None and ckpt["config_hash"] != expected_hash:
        raise ValueError(
            f"checkpoint {path} was produced with a different config "
            f"(hash {ckpt['config_hash'][:12]} != {expected_hash[:12]})")
    return ckpt


def _make_checkpoint(cfg: RunConfig, model, optimizer, iteration: int,
                     stage: str) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.config_hash(),
        "model_config": dataclasses.asdict(cfg.model),
        "stage": stage,
        "iteration": iteration,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
    }


# ---------------------------------------------------------------------------
# Data synthesis
# ---------------------------------------------------------------------------


class _ImageCache:
    def __init__(self):
        self._cache: dict[Path, EncodedRaster] = {}

    def get(self, path: Path) -> EncodedRaster:
        if path not in self._cache:
            self._cache[path] = load_image(path)
        return self._cache[path]


def _crop(data: np.ndarray, y0: int, x0: int, size: int) -> np.ndarray:
    return data[y0:y0 + size, x0:x0 + size]


def _augment(data: np.ndarray, flip_h: bool, flip_v: bool, rot_k: int) -> np.ndarray:
    if flip_h:
        data = data[:, ::-1]
    if flip_v:
        data = data[::-1, :]
    if rot_k:
        data = np.rot90(data, rot_k)
    return np.ascontiguousarray(data)


def _darken_patch(gt_linear: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    scale = rng.uniform(0.05, 0.3)
    photons = rng.uniform(100.0, 800.0)
    x = rng.poisson(gt_linear * scale * photons) / photons
    x = x + rng.normal(0.0, 0.01, size=x.shape)
    return np.clip(x, 0.0, 1.0)


def _sample_pair(cfg: RunConfig, pairs, cache: _ImageCache, sample_index: int,
                 sensor: SensorConstants):
    """One training triple (s_low, s_normal, t_norm) as (c, h, w) arrays."""
    rng = _rng(cfg.train.seed, _STREAM_MAIN, sample_index)
    pair_idx = int(rng.integers(len(pairs)))
    low_path, high_path = pairs[pair_idx]
    normal = cache.get(high_path)
    ps = cfg.train.patch_size
    if normal.height < ps or normal.width < ps:
        raise ValueError(f"patch_size {ps} exceeds image size of {high_path}")
    y0 = int(rng.integers(normal.height - ps + 1))
    x0 = int(rng.integers(normal.width - ps + 1))
    flip_h, flip_v = bool(rng.integers(2)), bool(rng.integers(2))
    rot_k = int(rng.integers(4))

    s_normal = _augment(_crop(normal.data, y0, x0, ps), flip_h, flip_v, rot_k)
    if cfg.data.synthetic_low:
        gt_linear = gamma_decode(EncodedRaster(s_normal, gamma=normal.gamma)).data
        low_lin = _darken_patch(gt_linear.astype(np.float64), rng)
        s_low = gamma_encode(LinearRaster(low_lin.astype(np.float32))).data
    else:
        low = cache.get(low_path)
        s_low = _augment(_crop(low.data, y0, x0, ps), flip_h, flip_v, rot_k)

    patch = EncodedRaster(s_normal, gamma=normal.gamma)
    fpe, _ = synthesize_training_sample(patch, sensor, cfg.lldm,
                                        sample_index=sample_index)
    t_norm = beta_normalize(fpe, 0.0).t_norm
    return (s_low.transpose(2, 0, 1), s_normal.transpose(2, 0, 1),
            t_norm[None].astype(np.float32))


def _batch(cfg: RunConfig, pairs, cache, iteration: int, sensor) -> tuple:
    lows, normals, norms = [], [], []
    for slot in range(cfg.train.batch_size):
        idx = iteration * cfg.train.batch_size + slot
        lo, no, tn = _sample_pair(cfg, pairs, cache, idx, sensor)
        lows.append(lo)
        normals.append(no)
        norms.append(tn)
    to = lambda arrs: torch.from_numpy(np.stack(arrs).astype(np.float32))
    return to(lows), to(normals), to(norms)


# ---------------------------------------------------------------------------
# Stage 1: denoiser pretraining
# ---------------------------------------------------------------------------


def _denoiser_pair(cfg: RunConfig, paths, cache: _ImageCache, sample_index: int,
                   sensor: SensorConstants):
    """(degraded E map, clean E map) pair for denoiser supervision."""
    rng = _rng(cfg.train.seed, _STREAM_PRETRAIN, sample_index)
    img = cache.get(paths[int(rng.integers(len(paths)))])
    ps = cfg.train.patch_size
    y0 = int(rng.integers(img.height - ps + 1))
    x0 = int(rng.integers(img.width - ps + 1))
    patch = _augment(_crop(img.data, y0, x0, ps), bool(rng.integers(2)),
                     bool(rng.integers(2)), int(rng.integers(4)))
    enc = EncodedRaster(patch, gamma=img.gamma)
    fpe_deg, gt_linear = synthesize_training_sample(
        enc, sensor, cfg.lldm, sample_index=sample_index)
    clean_c = np.full((ps, ps), cfg.lldm.threshold_mu)
    fpe_clean = simulate_fpe_map(gt_linear, sensor, clean_c)

    def to_E(fpe):
        t = beta_normalize(fpe, 0.0).t_norm
        E = 1.0 / np.maximum(t, 1e-6)
        return (E / max(E.max(), 1e-12)).astype(np.float32)

    return to_E(fpe_deg)[None], to_E(fpe_clean)[None]


def pretrain_denoiser(cfg: RunConfig, log_file=None) -> dict:
    """Train the T2I denoiser on degraded->clean illuminance map pairs."""
    train_root = Path(cfg.data.train_dir)
    high_root = train_root / cfg.data.high_dir
    paths = sorted(p for p in high_root.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise ValueError(f"no training images found in {high_root}")
    sensor = SensorConstants()
    cache = _ImageCache()
    torch.manual_seed(cfg.train.seed)
    model = RetinevModel(cfg.model)
    optimizer = torch.optim.Adam(model.denoiser_parameters(), lr=cfg.train.lr_main)
    log = open(log_file, "w") if log_file else None
    try:
        for it in range(cfg.train.iters_pretrain):
            noisy, clean = [], []
            for slot in range(cfg.train.batch_size):
                idx = it * cfg.train.batch_size + slot
                n, c = _denoiser_pair(cfg, paths, cache, idx, sensor)
                noisy.append(n)
                clean.append(c)
            x = torch.from_numpy(np.stack(noisy))
            y = torch.from_numpy(np.stack(clean))
            pred = model.t2i.denoiser(x)
            loss = torch.mean(torch.abs(pred - y))
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite pretrain loss at iteration {it}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if log:
                log.write(f"{it}\t{float(loss.detach()):.6f}\n")
    finally:
        if log:
            log.close()
    return _make_checkpoint(cfg, model, optimizer, cfg.train.iters_pretrain,
                            stage="pretrain")


# ---------------------------------------------------------------------------
# Stage 2: joint training
# ---------------------------------------------------------------------------


def train_main(cfg: RunConfig, init: dict | None = None,
               log_file=None, checkpoint_path=None) -> dict:
    """Joint training of the full pipeline; optionally resumed or initialized
    from a pretrain checkpoint."""
    dataset = load_paired_dataset(cfg.data.train_dir, cfg.data.low_dir,
                                  cfg.data.high_dir)
    sensor = SensorConstants()
    cache = _ImageCache()
    torch.manual_seed(cfg.train.seed)
    model = RetinevModel(cfg.model)
    model.train()
    extractor = FeaturePyramid(seed=cfg.extractor_seed)
    optimizer = torch.optim.Adam([
        {"params": model.main_parameters(), "lr": cfg.train.lr_main},
        {"params": model.denoiser_parameters(),
         "lr": cfg.train.lr_main * cfg.train.lr_denoiser_scale},
    ])
    start_iter = 0
    if init is not None:
        if init["config_hash"] != cfg.config_hash():
            raise ValueError("checkpoint/config hash mismatch; refusing to resume")
        model.load_state_dict(init["model_state"])
        if init["stage"] == "main":
            optimizer.load_state_dict(init["optimizer_state"])
            start_iter = init["iteration"]
            torch.set_rng_state(init["torch_rng"])

    log = open(log_file, "a") if log_file else None
    ckpt = None
    try:
        for it in range(start_iter, cfg.train.iters_main):
            lr = cosine_lr(it, cfg.train.iters_main, cfg.train.lr_main,
                           cfg.train.lr_min)
            optimizer.param_groups[0]["lr"] = lr
            optimizer.param_groups[1]["lr"] = lr * cfg.train.lr_denoiser_scale

            s_low, s_normal, t_norm = _batch(cfg, dataset.pairs, cache, it, sensor)
            out = model(s_low, s_normal, t_norm)
            l_rec = recon_loss(out["i_hat"], out["r_hat"], out["r_normal"], s_normal)
            l_ref = reflectance_loss(out["r_low"], out["r_hat"], out["r_normal"])
            l_per = perceptual_loss(out["s_hat"], s_normal, extractor)
            loss, report = total_loss(l_rec, l_ref, l_per, cfg.loss)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at iteration {it}: recon={report.recon} "
                    f"reflectance={report.reflectance} perceptual={report.perceptual}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            optimizer.step()
            if log:
                log.write(f"{it}\t{report.recon:.6f}\t{report.reflectance:.6f}"
                          f"\t{report.perceptual:.6f}\t{report.total:.6f}\n")
            done = it + 1
            if checkpoint_path and (done % cfg.train.checkpoint_every == 0
                                    or done == cfg.train.iters_main):
                ckpt = _make_checkpoint(cfg, model, optimizer, done, stage="main")
                save_checkpoint(ckpt, checkpoint_path)
    finally:
        if log:
            log.close()
    if ckpt is None or ckpt["iteration"] != cfg.train.iters_main:
        ckpt = _make_checkpoint(cfg, model, optimizer,
                                max(start_iter, cfg.train.iters_main), stage="main")
    return ckpt


def model_from_checkpoint(ckpt: dict, cfg: RunConfig | None = None) -> RetinevModel:
    from .model import ModelConfig

    model_cfg = cfg.model if cfg is not None else ModelConfig(**ckpt["model_config"])
    model = RetinevModel(model_cfg)
    model.load_state_dict(ckpt["model_state"])
    model.eval()
    return model
