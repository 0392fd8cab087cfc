"""Time-to-Illumination: FPE timestamps -> enhanced single-channel illumination.

Pipeline: beta-normalize timestamps -> invert to illuminance E = k / t_norm
-> rescale E to [0, 1] by its max -> learned denoiser -> pixelwise MLP ->
gamma encode -> clamp to [eps_I, 1]. The brightness manipulation coefficient
beta shifts the normalization:

    t_norm = (t_fpe + beta) / (max(t_fpe) + beta)

so larger beta compresses timestamps toward 1 and brightens the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .events import FpeMap
from .raster import DEFAULT_GAMMA

#: illumination floor keeping the downstream division S / I well-behaved
EPS_I = 1e-2


@dataclass(frozen=True)
class NormalizedFpeMap:
    """Beta-normalized timestamps in (0, 1]; max over non-missing pixels is 1."""

    t_norm: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.t_norm, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"normalized map must be 2-D, got {t.shape}")
        if not np.all(np.isfinite(t)) or t.min() <= 0 or t.max() > 1:
            raise ValueError("normalized timestamps must lie in (0, 1]")
        t.setflags(write=False)
        object.__setattr__(self, "t_norm", t)


def beta_normalize(m: FpeMap, beta: float = 0.0) -> NormalizedFpeMap:
    """Normalize timestamps with the brightness coefficient beta.

    MISSING pixels are filled with 1.0 (darkest) so the denoiser can inpaint
    them downstream.
    """
    if not (np.isfinite(beta) and beta >= 0):
        raise ValueError(f"beta must be >= 0, got {beta}")
    valid = ~m.missing
    if not np.any(valid):
        raise ValueError("cannot normalize an all-missing FPE map")
    t_max = m.t_fpe[valid].max()
    t_norm = (m.t_fpe + beta) / (t_max + beta)
    t_norm[~valid] = 1.0
    return NormalizedFpeMap(t_norm)


def smooth_clamp(x: torch.Tensor, lo: float, hi: float, beta: float = 10.0) -> torch.Tensor:
    """Saturation into [lo, hi] with non-vanishing gradients.

    Values are exactly clamped; gradients come from a softplus approximation
    so out-of-range activations keep a restoring gradient during training.
    """
    y = lo + F.softplus(x - lo, beta=beta)
    y = hi - F.softplus(hi - y, beta=beta)
    return y + (y.clamp(lo, hi) - y).detach()


class DenoiseNet(nn.Module):
    """3-scale encoder-decoder with skip connections, residual output."""

    def __init__(self, base_width: int = 16):
        super().__init__()
        w = base_width
        self.enc1 = self._block(1, w)
        self.enc2 = self._block(w, 2 * w)
        self.enc3 = self._block(2 * w, 4 * w)
        self.dec2 = self._block(4 * w + 2 * w, 2 * w)
        self.dec1 = self._block(2 * w + w, w)
        self.out = nn.Conv2d(w, 1, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    @staticmethod
    def _block(cin, cout):
        return nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([F.interpolate(e3, scale_factor=2, mode="nearest"), e2], dim=1))
        d1 = self.dec1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), e1], dim=1))
        return x + self.out(d1)


class PixelMLP(nn.Module):
    """Pixelwise nonlinear mapping: two 1x1 layers, residual, zero-init output."""

    def __init__(self, hidden: int = 16):
        super().__init__()
        self.fc1 = nn.Conv2d(1, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, 1, 1)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x):
        return x + self.fc2(F.gelu(self.fc1(x)))


class T2INet(nn.Module):
    """Learned part of the T2I pipeline operating on normalized timestamps.

    Input: t_norm as a (b, 1, h, w) tensor in (0, 1]. Output: illumination
    estimate in [eps_I, 1]. Pass ``identity=True`` to bypass the learned
    denoiser and MLP (useful for analytic checks).
    """

    def __init__(self, base_width: int = 16, mlp_hidden: int = 16,
                 gamma: float = DEFAULT_GAMMA, identity: bool = False):
        super().__init__()
        self.gamma = gamma
        self.identity = identity
        if not identity:
            self.denoiser = DenoiseNet(base_width)
            self.mlp = PixelMLP(mlp_hidden)

    def forward(self, t_norm: torch.Tensor) -> torch.Tensor:
        # conversion function: E = k / t_norm with k absorbed by the rescale
        E = 1.0 / t_norm.clamp_min(1e-6)
        E = E / E.amax(dim=(2, 3), keepdim=True).clamp_min(1e-12)
        if not self.identity:
            E = self.denoiser(E)
            E = self.mlp(E)
        if self.training:
            E = smooth_clamp(E, 0.0, 1.0)
        else:
            E = E.clamp(0.0, 1.0)
        I_hat = E.clamp_min(1e-12) ** (1.0 / self.gamma)
        if self.training:
            return smooth_clamp(I_hat, EPS_I, 1.0)
        return I_hat.clamp(EPS_I, 1.0)


def estimate_illumination(
    m: FpeMap, net: T2INet, beta: float = 0.0, device: str = "cpu"
) -> np.ndarray:
    """Run the full T2I pipeline on an FPE map; returns (h, w) in [eps_I, 1]."""
    norm = beta_normalize(m, beta)
    dtype = next(net.parameters()).dtype if any(True for _ in net.parameters()) else torch.float32
    x = torch.from_numpy(norm.t_norm[None, None].copy()).to(device=device, dtype=dtype)
    was_training = net.training
    net.eval()
    with torch.no_grad():
        out = net(x)
    net.train(was_training)
    return out[0, 0].cpu().numpy()
