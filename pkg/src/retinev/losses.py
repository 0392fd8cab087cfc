"""Training objective: reconstruction, invariant reflectance, and perceptual
losses with a weighted total.

    L_recon = ||I_hat * R_hat_low - S_normal||_1 + ||I_hat * R_normal - S_normal||_1
    L_R     = ||R_low - R_normal||_1 + ||R_hat_low - R_normal||_1
    L_final = lambda1 * L_recon + lambda2 * L_R + lambda3 * L_percep

All reductions are means so magnitudes are resolution-independent. The
perceptual extractor is a frozen, seeded 3-stage convolutional pyramid so
training never depends on downloaded weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.1

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    recon: float
    reflectance: float
    perceptual: float
    total: float


def recon_loss(i_hat, r_hat_low, r_normal, s_normal):
    return (torch.mean(torch.abs(i_hat * r_hat_low - s_normal))
            + torch.mean(torch.abs(i_hat * r_normal - s_normal)))


def reflectance_loss(r_low, r_hat_low, r_normal):
    return (torch.mean(torch.abs(r_low - r_normal))
            + torch.mean(torch.abs(r_hat_low - r_normal)))


class FeaturePyramid(nn.Module):
    """Fixed random 3-stage conv feature extractor; parameters never train."""

    STAGE_WIDTHS = (16, 32, 64)

    def __init__(self, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        stages = []
        cin = 3
        for cout in self.STAGE_WIDTHS:
            conv1 = nn.Conv2d(cin, cout, 3, padding=1)
            conv2 = nn.Conv2d(cout, cout, 3, stride=2, padding=1)
            for conv in (conv1, conv2):
                nn.init.kaiming_normal_(conv.weight, generator=gen)
                nn.init.zeros_(conv.bias)
            stages.append(nn.Sequential(conv1, nn.ReLU(), conv2, nn.ReLU()))
            cin = cout
        self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def perceptual_loss(pred, target, extractor: FeaturePyramid):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    loss = pred.new_zeros(())
    for fp, ft in zip(extractor(pred), extractor(target)):
        loss = loss + torch.mean(torch.abs(fp - ft))
    return loss


def total_loss(recon, reflectance, perceptual, w: LossWeights):
    """Weighted sum; returns (total tensor, LossReport of detached values)."""
    total = w.lambda1 * recon + w.lambda2 * reflectance + w.lambda3 * perceptual
    report = LossReport(
        recon=float(recon.detach()),
        reflectance=float(reflectance.detach()),
        perceptual=float(perceptual.detach()),
        total=float(total.detach()),
    )
    return total, report
