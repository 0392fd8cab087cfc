"""Whole-image inference and dataset evaluation on top of a trained model."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .evaluation import MetricReport, fpe_path_for, load_paired_dataset, psnr, ssim
from .events import FpeMap, load_fpe
from .model import RetinevModel
from .raster import EncodedRaster, load_image
from .t2i import beta_normalize


def enhance_image(model: RetinevModel, low: EncodedRaster, fpe: FpeMap,
                  beta: float = 0.0) -> dict:
    """Enhance one low-light image; returns numpy arrays i_hat, r_low, r_hat,
    s_hat (all in [0, 1], s_hat gamma-encoded like the input)."""
    if (low.height, low.width) != (fpe.height, fpe.width):
        raise ValueError(
            f"image size {(low.height, low.width)} != FPE map size "
            f"{(fpe.height, fpe.width)}")
    t_norm = beta_normalize(fpe, beta).t_norm
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model.enhance(
            torch.from_numpy(low.data.transpose(2, 0, 1)[None].copy()),
            torch.from_numpy(t_norm[None, None].astype(np.float32)),
        )
    model.train(was_training)
    return {k: v[0].numpy().transpose(1, 2, 0) for k, v in out.items()}


def evaluate_dataset(model: RetinevModel, data_dir, beta: float = 0.0,
                     low_dir: str = "low", high_dir: str = "high") -> MetricReport:
    """Per-image and aggregate PSNR/SSIM of enhanced outputs vs ground truth."""
    dataset = load_paired_dataset(data_dir, low_dir, high_dir, split="test")
    rows = []
    for low_path, high_path in dataset.pairs:
        fpe_file = fpe_path_for(low_path)
        if not fpe_file.is_file():
            raise FileNotFoundError(f"missing FPE map for {low_path.name}: {fpe_file}")
        low = load_image(low_path)
        high = load_image(high_path)
        out = enhance_image(model, low, load_fpe(fpe_file), beta=beta)
        rows.append((low_path.stem,
                     psnr(out["s_hat"], high.data),
                     ssim(out["s_hat"], high.data)))
    return MetricReport(rows=tuple(rows))


def input_baseline(data_dir, low_dir: str = "low", high_dir: str = "high") -> MetricReport:
    """PSNR/SSIM of the raw low-light inputs against ground truth."""
    dataset = load_paired_dataset(data_dir, low_dir, high_dir, split="test")
    rows = []
    for low_path, high_path in dataset.pairs:
        low = load_image(low_path)
        high = load_image(high_path)
        rows.append((low_path.stem, psnr(low.data, high.data),
                     ssim(low.data, high.data)))
    return MetricReport(rows=tuple(rows))
