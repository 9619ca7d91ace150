"""Prompt-guided cross-view adapter.

Two untied branches.  Each adds its own global view token to the full joint
sequence and layer-normalizes it; the branch then queries the *other*
branch's base features, with its own prompt token prepended to the keys and
values, and closes with an FFN and a residual to its own base features.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from vlunitrack.config import TrackerConfig, ViewId
from vlunitrack.encoder import Attention, JointFeatures, Layout, Mlp, TokenSequence


@dataclass
class AdaptedFeatures:
    f_uav: torch.Tensor
    f_ground: torch.Tensor
    layout: Layout

    def branch(self, view: ViewId) -> TokenSequence:
        t = self.f_uav if ViewId(view) is ViewId.UAV else self.f_ground
        return TokenSequence(t, self.layout)


class CrossViewBranch(nn.Module):
    """Norm for the base features plus MHCA and a pre-norm FFN."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.base_norm = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = Mlp(dim, int(dim * mlp_ratio))

    def ffn_block(self, x):
        return self.ffn(self.ffn_norm(x))


def base_features(feats: torch.Tensor, global_token: torch.Tensor, norm: nn.Module) -> torch.Tensor:
    """``Norm(F + g)`` with ``g`` broadcast over every token."""
    if feats.shape[-1] != global_token.shape[-1]:
        raise ValueError(f"feature width {feats.shape[-1]} != global token width "
                         f"{global_token.shape[-1]}")
    return norm(feats + global_token)


def cross_view_attend(q_base: torch.Tensor, kv_base: torch.Tensor, prompt: torch.Tensor | None,
                      branch: CrossViewBranch) -> torch.Tensor:
    """``FFN(MHCA(q_base, [prompt; kv_base])) + q_base``.

    Shapes: ``q_base``/``kv_base`` ``[B, N, D]``, ``prompt`` ``[B, D]`` or None
    (prompt-free ablation).
    """
    if prompt is not None:
        if prompt.shape[-1] != kv_base.shape[-1]:
            raise ValueError(f"prompt width {prompt.shape[-1]} != feature width {kv_base.shape[-1]}")
        kv = torch.cat([prompt.unsqueeze(1), kv_base], dim=1)
    else:
        kv = kv_base
    return branch.ffn_block(branch.attn(q_base, kv)) + q_base


class PCVA(nn.Module):
    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        D = cfg.embed_dim
        self.global_uav = nn.Parameter(torch.zeros(D))
        self.global_ground = nn.Parameter(torch.zeros(D))
        nn.init.trunc_normal_(self.global_uav, std=0.02)
        nn.init.trunc_normal_(self.global_ground, std=0.02)
        self.branch_uav = CrossViewBranch(D, cfg.attn_heads)
        self.branch_ground = CrossViewBranch(D, cfg.attn_heads)

    def forward(self, joint: JointFeatures, prompt_uav: torch.Tensor | None,
                prompt_ground: torch.Tensor | None) -> AdaptedFeatures:
        F = joint.tokens
        base_u = base_features(F, self.global_uav, self.branch_uav.base_norm)
        base_g = base_features(F, self.global_ground, self.branch_ground.base_norm)
        f_u = cross_view_attend(base_u, base_g, prompt_uav, self.branch_uav)
        f_g = cross_view_attend(base_g, base_u, prompt_ground, self.branch_ground)
        return AdaptedFeatures(f_u, f_g, joint.layout)
