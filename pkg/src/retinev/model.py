"""Full enhancement model: T2I + shared decomposition + optional IRE."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .retinex import DecomNet, IRENet, reconstruct
from .t2i import T2INet


@dataclass(frozen=True)
class ModelConfig:
    denoiser_width: int = 16
    mlp_hidden: int = 16
    decom_width: int = 32
    ire_channels: int = 32
    ire_heads: int = 4
    ire_blocks: int = 2
    use_ire: bool = True
    #: cross-modal fusion switch: False keeps the refinement blocks but feeds
    #: the attention keys/values from the reflectance features (the
    #: capacity-matched no-fusion ablation)
    ire_fusion: bool = True

    def __post_init__(self):
        if self.ire_channels % self.ire_heads != 0:
            raise ValueError("ire_channels must be divisible by ire_heads")


class RetinevModel(nn.Module):
    """Enhancement pipeline over (low-light image, normalized FPE map) pairs.

    With ``use_ire=False`` the reflectance passes through unrefined; this is
    the no-fusion ablation variant.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.t2i = T2INet(base_width=cfg.denoiser_width, mlp_hidden=cfg.mlp_hidden)
        self.decom = DecomNet(width=cfg.decom_width)
        self.ire = IRENet(cfg.ire_channels, cfg.ire_heads, cfg.ire_blocks,
                          fusion=cfg.ire_fusion) if cfg.use_ire else None

    def enhance(self, s_low: torch.Tensor, t_norm: torch.Tensor) -> dict:
        """Inference path: returns i_hat, r_low, r_hat, s_hat."""
        i_hat = self.t2i(t_norm)
        r_low = self.decom(s_low, i_hat)
        r_hat = self.ire(r_low, i_hat) if self.ire is not None else r_low
        return {"i_hat": i_hat, "r_low": r_low, "r_hat": r_hat,
                "s_hat": reconstruct(i_hat, r_hat)}

    def forward(self, s_low: torch.Tensor, s_normal: torch.Tensor,
                t_norm: torch.Tensor) -> dict:
        """Training path: runs both branches through the shared decomposer."""
        out = self.enhance(s_low, t_norm)
        out["r_normal"] = self.decom(s_normal, out["i_hat"])
        return out

    def denoiser_parameters(self):
        return list(self.t2i.denoiser.parameters())

    def main_parameters(self):
        denoiser_ids = {id(p) for p in self.t2i.denoiser.parameters()}
        return [p for p in self.parameters() if id(p) not in denoiser_ids]
