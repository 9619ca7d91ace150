"""Full dual-view tracker: encoder -> prompts -> adapter -> per-view heads."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from vlunitrack.config import TrackerConfig, ViewId, check_config
from vlunitrack.encoder import JointFeatures, UnifiedEncoder, slice_view
from vlunitrack.heads import CenterHead, decode_boxes
from vlunitrack.losses import confidence
from vlunitrack.pcva import PCVA, AdaptedFeatures
from vlunitrack.vlgp import VLGP


@dataclass
class ViewOutput:
    score: torch.Tensor     # [B, H, W]
    offsets: torch.Tensor   # [B, 2, H, W]
    sizes: torch.Tensor     # [B, 2, H, W]
    features: torch.Tensor  # [B, H, W, D] search features fed to the head

    @property
    def confidence(self) -> torch.Tensor:
        return confidence(self.score)

    def decode(self) -> torch.Tensor:
        return decode_boxes(self.score, self.offsets, self.sizes)


@dataclass
class ModelOutput:
    uav: ViewOutput
    ground: ViewOutput
    joint: JointFeatures
    adapted: AdaptedFeatures | None
    prompts: dict

    def view(self, v: ViewId) -> ViewOutput:
        return self.uav if ViewId(v) is ViewId.UAV else self.ground


class VLUniTrack(nn.Module):
    """With ``use_pcva=False`` and ``vlgp_mode='off'`` this is a plain
    shared-encoder tracker with two independent heads."""

    def __init__(self, cfg: TrackerConfig, frozen_encoder: nn.Module | None = None):
        super().__init__()
        self.cfg = check_config(cfg)
        self.encoder = UnifiedEncoder(cfg)
        self.vlgp = VLGP(cfg, frozen_encoder) if cfg.vlgp_mode != "off" else None
        self.pcva = PCVA(cfg) if cfg.use_pcva else None
        self.head_uav = CenterHead(cfg.embed_dim, cfg.feat_size)
        self.head_ground = CenterHead(cfg.embed_dim, cfg.feat_size)

    def prompts(self, z_u: torch.Tensor, z_g: torch.Tensor):
        if self.vlgp is None:
            return None, None
        return self.vlgp(ViewId.UAV, z_u), self.vlgp(ViewId.GROUND, z_g)

    def forward(self, z_u, x_u, z_g, x_g) -> ModelOutput:
        """Images ``[B, 3, h, w]`` in ``[0, 1]``."""
        joint = self.encoder(z_u, x_u, z_g, x_g)
        p_u, p_g = self.prompts(z_u, z_g)
        adapted = None
        if self.pcva is not None:
            adapted = self.pcva(joint, p_u, p_g)
            src_u, src_g = adapted.branch(ViewId.UAV), adapted.branch(ViewId.GROUND)
        else:
            src_u = src_g = joint
        outs = []
        s = self.cfg.feat_size
        for view, src, head in ((ViewId.UAV, src_u, self.head_uav),
                                (ViewId.GROUND, src_g, self.head_ground)):
            tokens = slice_view(src, view, "search")
            score, offsets, sizes = head(tokens)
            feats = tokens.reshape(tokens.shape[0], s, s, tokens.shape[-1])
            outs.append(ViewOutput(score, offsets, sizes, feats))
        return ModelOutput(outs[0], outs[1], joint, adapted, {"uav": p_u, "ground": p_g})

    def trainable_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]
