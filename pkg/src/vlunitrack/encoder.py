"""Shared one-stream encoder over both views.

Each view contributes ``[template patches ; search patches] + pos`` and the
two view sequences are concatenated and run through one stack of dense
self-attention blocks, so every token can attend to every other token of
both views at every layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from vlunitrack.config import VIEWS, TrackerConfig, ViewId

ROLES = ("template", "search")


@dataclass(frozen=True)
class Segment:
    view: ViewId
    role: str
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class Layout:
    segments: tuple[Segment, ...]

    @property
    def length(self) -> int:
        return sum(s.length for s in self.segments)

    def find(self, view: ViewId, role: str) -> Segment:
        for s in self.segments:
            if s.view == view and s.role == role:
                return s
        raise KeyError(f"no segment ({view}, {role}) in layout")

    def shifted(self, offset: int) -> "Layout":
        return Layout(tuple(Segment(s.view, s.role, s.start + offset, s.length)
                            for s in self.segments))

    def __add__(self, other: "Layout") -> "Layout":
        return Layout(self.segments + other.shifted(self.length).segments)


def view_layout(view: ViewId, n_template: int, n_search: int) -> Layout:
    return Layout((Segment(view, "template", 0, n_template),
                   Segment(view, "search", n_template, n_search)))


def joint_layout(n_template: int, n_search: int) -> Layout:
    return view_layout(ViewId.UAV, n_template, n_search) + view_layout(ViewId.GROUND, n_template, n_search)


@dataclass
class TokenSequence:
    """Tokens ``[..., N, D]`` plus the segment layout describing them."""

    tokens: torch.Tensor
    layout: Layout

    def __post_init__(self):
        if self.tokens.shape[-2] != self.layout.length:
            raise ValueError(f"layout covers {self.layout.length} tokens, "
                             f"tensor has {self.tokens.shape[-2]}")


JointFeatures = TokenSequence


def slice_view(feats: TokenSequence, view: ViewId, role: str) -> torch.Tensor:
    if role not in ROLES:
        raise KeyError(f"unknown role {role!r}")
    seg = feats.layout.find(ViewId(view), role)
    return feats.tokens[..., seg.start:seg.stop, :]


class PatchEmbed(nn.Module):
    """Linear projection of flattened, row-major ``p x p x 3`` patches."""

    def __init__(self, patch_size: int, embed_dim: int, in_chans: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size * in_chans, embed_dim)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        # img: [B, C, H, W] -> [B, (H/p)*(W/p), D]
        p = self.patch_size
        B, C, H, W = img.shape
        if H % p or W % p:
            raise ValueError(f"image {H}x{W} not divisible by patch size {p}")
        x = img.reshape(B, C, H // p, p, W // p, p)
        x = x.permute(0, 2, 4, 3, 5, 1).reshape(B, (H // p) * (W // p), p * p * C)
        return self.proj(x)


class Attention(nn.Module):
    """Multi-head attention with separate query and key/value inputs."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError("dim not divisible by num_heads")
        self.num_heads = num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x_q: torch.Tensor, x_kv: torch.Tensor) -> torch.Tensor:
        B, Nq, D = x_q.shape
        Nk = x_kv.shape[1]
        h = self.num_heads
        q = self.q(x_q).reshape(B, Nq, h, D // h).transpose(1, 2)
        k = self.k(x_kv).reshape(B, Nk, h, D // h).transpose(1, 2)
        v = self.v(x_kv).reshape(B, Nk, h, D // h).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) * (D // h) ** -0.5
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, Nq, D))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y)
        return x + self.mlp(self.norm2(x))


class UnifiedEncoder(nn.Module):
    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.embed_dim
        self.patch_embed = PatchEmbed(cfg.patch_size, D)
        self.n_template = cfg.template_tokens
        self.n_search = cfg.search_tokens
        # one table shared by both views, indexed by within-view position
        self.pos_embed = nn.Parameter(torch.zeros(self.n_template + self.n_search, D))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(Block(D, cfg.attn_heads) for _ in range(cfg.encoder_depth))

    def build_view_sequence(self, template: torch.Tensor, search: torch.Tensor,
                            view: ViewId = ViewId.UAV) -> TokenSequence:
        cfg = self.cfg
        if template.shape[-2:] != (cfg.template_size, cfg.template_size):
            raise ValueError(f"template must be {cfg.template_size}x{cfg.template_size}, "
                             f"got {tuple(template.shape[-2:])}")
        if search.shape[-2:] != (cfg.search_size, cfg.search_size):
            raise ValueError(f"search must be {cfg.search_size}x{cfg.search_size}, "
                             f"got {tuple(search.shape[-2:])}")
        z = self.patch_embed(template)
        x = self.patch_embed(search)
        tokens = torch.cat([z, x], dim=1) + self.pos_embed
        return TokenSequence(tokens, view_layout(view, self.n_template, self.n_search))

    def joint_forward(self, seq_u: TokenSequence, seq_g: TokenSequence) -> JointFeatures:
        expected_u = view_layout(ViewId.UAV, self.n_template, self.n_search)
        expected_g = view_layout(ViewId.GROUND, self.n_template, self.n_search)
        if seq_u.layout != expected_u or seq_g.layout != expected_g:
            raise ValueError("view sequences do not match the configured layout")
        x = torch.cat([seq_u.tokens, seq_g.tokens], dim=1)
        for blk in self.blocks:
            x = blk(x)
        return TokenSequence(x, seq_u.layout + seq_g.layout)

    def forward(self, z_u, x_u, z_g, x_g) -> JointFeatures:
        seq_u = self.build_view_sequence(z_u, x_u, ViewId.UAV)
        seq_g = self.build_view_sequence(z_g, x_g, ViewId.GROUND)
        return self.joint_forward(seq_u, seq_g)


__all__ = ["Attention", "Block", "JointFeatures", "Layout", "Mlp", "PatchEmbed", "Segment",
           "TokenSequence", "UnifiedEncoder", "VIEWS", "joint_layout", "slice_view",
           "view_layout"]
