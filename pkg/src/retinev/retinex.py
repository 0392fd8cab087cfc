"""Retinex decomposition, illumination-aided reflectance enhancement, and
reconstruction.

The observed image factors as S = R * I. A shared-weight convolutional net
predicts reflectance from an image plus the event-derived illumination
estimate. Reflectance is then refined with channel-transposed cross-modal
attention: queries come from the reflectance features, keys/values from the
illumination features, and the attention matrix is (c/heads) x (c/heads)
per head instead of (hw) x (hw):

    Attention(Q, K, V) = V . softmax(Q^T K / sqrt(d_k))

so memory stays O(c^2) regardless of image size. The final enhanced image
is the elementwise product I_hat * R_hat.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .t2i import smooth_clamp


def channel_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                      heads: int, return_attn: bool = False):
    """Channel-transposed multi-head attention core.

    q, k, v: (b, c, h, w) with c divisible by heads. The per-head attention
    matrix A = softmax(Q^T K / sqrt(d)) is d x d (d = c/heads) with each
    column summing to 1; the output is V @ A reshaped back to (b, c, h, w).
    """
    b, c, h, w = q.shape
    if c % heads != 0:
        raise ValueError(f"channels {c} not divisible by heads {heads}")
    d = c // heads

    def split(x):
        return x.reshape(b, heads, d, h * w).transpose(2, 3)  # (b, heads, hw, d)

    qh, kh, vh = split(q), split(k), split(v)
    logits = torch.einsum("bhnd,bhne->bhde", qh, kh) / d**0.5  # Q^T K, (b, heads, d, d)
    attn = torch.softmax(logits, dim=-2)  # columns sum to 1
    out = torch.einsum("bhnd,bhde->bhne", vh, attn)  # V @ A
    out = out.transpose(2, 3).reshape(b, c, h, w)
    if return_attn:
        return out, attn
    return out


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel dimension of (b, c, h, w) tensors."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        y = x.permute(0, 2, 3, 1)
        y = F.layer_norm(y, (x.shape[1],), self.weight, self.bias, eps=1e-5)
        return y.permute(0, 3, 1, 2)


class IREAttention(nn.Module):
    """Cross-modal attention: Q from reflectance features, K/V from illumination."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm_r = ChannelLayerNorm(channels)
        self.norm_i = ChannelLayerNorm(channels)
        self.to_q = nn.Conv2d(channels, channels, 1)
        self.to_k = nn.Conv2d(channels, channels, 1)
        self.to_v = nn.Conv2d(channels, channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, r_feat, i_feat):
        q = self.to_q(self.norm_r(r_feat))
        kn = self.norm_i(i_feat)
        k, v = self.to_k(kn), self.to_v(kn)
        out = channel_attention(q, k, v, self.heads)
        return r_feat + self.proj(out)


class GatedFeedForward(nn.Module):
    def __init__(self, channels: int, expansion: int = 2):
        super().__init__()
        hidden = channels * expansion
        self.norm = ChannelLayerNorm(channels)
        self.inner = nn.Conv2d(channels, 2 * hidden, 1)
        self.outer = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        a, g = self.inner(self.norm(x)).chunk(2, dim=1)
        return x + self.outer(a * F.gelu(g))


class IREBlock(nn.Module):
    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.attn = IREAttention(channels, heads)
        self.ffn = GatedFeedForward(channels)

    def forward(self, r_feat, i_feat):
        return self.ffn(self.attn(r_feat, i_feat))


class DecomNet(nn.Module):
    """Reflectance predictor: 5 conv layers on concat(image, illumination).

    One weight set serves both the low-light and normal-light branches.
    """

    def __init__(self, width: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(4, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 3, 3, padding=1),
        )

    def forward(self, s: torch.Tensor, i_hat: torch.Tensor) -> torch.Tensor:
        if s.shape[-2:] != i_hat.shape[-2:]:
            raise ValueError(f"image {tuple(s.shape)} and illumination "
                             f"{tuple(i_hat.shape)} spatial sizes differ")
        return torch.sigmoid(self.body(torch.cat([s, i_hat], dim=1)))


class IRENet(nn.Module):
    """Residual reflectance refinement driven by the illumination estimate.

    The output head is zero-initialized so training starts from the identity
    R_hat = R_low.
    """

    def __init__(self, channels: int = 32, heads: int = 4, blocks: int = 2,
                 fusion: bool = True):
        super().__init__()
        self.fusion = fusion
        self.embed_r = nn.Conv2d(3, channels, 3, padding=1)
        self.embed_i = nn.Conv2d(1, channels, 3, padding=1)
        self.blocks = nn.ModuleList(IREBlock(channels, heads) for _ in range(blocks))
        self.head = nn.Conv2d(channels, 3, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, r_low: torch.Tensor, i_hat: torch.Tensor) -> torch.Tensor:
        if r_low.shape[-2:] != i_hat.shape[-2:]:
            raise ValueError(f"reflectance {tuple(r_low.shape)} and illumination "
                             f"{tuple(i_hat.shape)} spatial sizes differ")
        r_feat = self.embed_r(r_low)
        i_feat = self.embed_i(i_hat)
        for block in self.blocks:
            # no-fusion ablation: keys/values from the reflectance features
            # themselves, same capacity, no illumination information
            r_feat = block(r_feat, i_feat if self.fusion else r_feat)
        out = r_low + self.head(r_feat)
        if self.training:
            return smooth_clamp(out, 0.0, 1.0)
        return out.clamp(0.0, 1.0)


def reconstruct(i_hat: torch.Tensor, r_hat: torch.Tensor) -> torch.Tensor:
    """Final image: exact elementwise product, illumination broadcast over RGB."""
    if i_hat.shape[-2:] != r_hat.shape[-2:]:
        raise ValueError(f"illumination {tuple(i_hat.shape)} and reflectance "
                         f"{tuple(r_hat.shape)} spatial sizes differ")
    return i_hat * r_hat
