"""Per-view center heads and box decoding."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from vlunitrack.config import Box


def conv_block(cin: int, cout: int) -> nn.Sequential:
    # replicate padding keeps the head translation-equivariant on constant inputs
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1, padding_mode="replicate"), nn.GELU())


class CenterHead(nn.Module):
    """Search tokens ``[B, H*W, D]`` -> score logits, center offsets, box sizes.

    Offsets are displacements of the box center from the cell center, in cell
    units.  Sizes are ``(w, h)`` as fractions of the search crop.
    """

    def __init__(self, dim: int, feat_size: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.feat_size = feat_size
        self.tower = nn.Sequential(conv_block(dim, hidden), conv_block(hidden, hidden))
        self.score = nn.Conv2d(hidden, 1, 1)
        self.offset = nn.Conv2d(hidden, 2, 1)
        self.size = nn.Conv2d(hidden, 2, 1)

    def forward(self, tokens: torch.Tensor):
        B, N, D = tokens.shape
        s = self.feat_size
        if N != s * s:
            side = math.isqrt(N)
            hint = "" if side * side == N else " (not a perfect square)"
            raise ValueError(f"{N} search tokens do not fill a {s}x{s} grid{hint}")
        x = tokens.transpose(1, 2).reshape(B, D, s, s)
        x = self.tower(x)
        score = self.score(x)[:, 0]
        offsets = self.offset(x)
        sizes = torch.sigmoid(self.size(x))
        return score, offsets, sizes


def boxes_at(cells: torch.Tensor, offsets: torch.Tensor, sizes: torch.Tensor) -> torch.Tensor:
    """Box ``[B, 4]`` (cx, cy, w, h, crop-normalized) read off flat cell indices ``[B]``."""
    B, _, H, W = offsets.shape
    row = torch.div(cells, W, rounding_mode="floor")
    col = cells % W
    idx = torch.arange(B, device=cells.device)
    off = offsets[idx, :, row, col]
    wh = sizes[idx, :, row, col]
    cx = (col.to(off.dtype) + 0.5 + off[:, 0]) / W
    cy = (row.to(off.dtype) + 0.5 + off[:, 1]) / H
    return torch.stack([cx, cy, wh[:, 0], wh[:, 1]], dim=-1)


def clamp_boxes(boxes: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    x1 = (boxes[:, 0] - boxes[:, 2] / 2).clamp(0, 1 - eps)
    y1 = (boxes[:, 1] - boxes[:, 3] / 2).clamp(0, 1 - eps)
    x2 = torch.maximum((boxes[:, 0] + boxes[:, 2] / 2).clamp(0, 1), x1 + eps)
    y2 = torch.maximum((boxes[:, 1] + boxes[:, 3] / 2).clamp(0, 1), y1 + eps)
    return torch.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], dim=-1)


def decode_boxes(score: torch.Tensor, offsets: torch.Tensor, sizes: torch.Tensor) -> torch.Tensor:
    """Batched argmax decoding; ties go to the first cell in row-major order."""
    cells = score.flatten(1).argmax(dim=1)
    return clamp_boxes(boxes_at(cells, offsets, sizes))


def decode_box(score: torch.Tensor, offsets: torch.Tensor, sizes: torch.Tensor) -> Box:
    """Single-map decoding: ``score [H, W]``, ``offsets/sizes [2, H, W]``."""
    if score.shape != offsets.shape[-2:] or score.shape != sizes.shape[-2:]:
        raise ValueError("score, offset and size maps must share [H, W]")
    b = decode_boxes(score[None], offsets[None], sizes[None])[0]
    return Box(*(float(v) for v in b))


def center_cell(boxes: torch.Tensor, feat_size: int) -> torch.Tensor:
    """Flat index of the grid cell containing each box center."""
    col = (boxes[:, 0] * feat_size).floor().clamp(0, feat_size - 1).long()
    row = (boxes[:, 1] * feat_size).floor().clamp(0, feat_size - 1).long()
    return row * feat_size + col


def gaussian_target(boxes: torch.Tensor, feat_size: int, sigma: float = 1.0) -> torch.Tensor:
    """Gaussian bump ``[B, H, W]`` peaking at exactly 1 on each center cell."""
    cells = center_cell(boxes, feat_size)
    row = torch.div(cells, feat_size, rounding_mode="floor").to(boxes.dtype)
    col = (cells % feat_size).to(boxes.dtype)
    grid = torch.arange(feat_size, dtype=boxes.dtype, device=boxes.device)
    dy = (grid[None, :] - row[:, None]) ** 2
    dx = (grid[None, :] - col[:, None]) ** 2
    return torch.exp(-(dy[:, :, None] + dx[:, None, :]) / (2 * sigma ** 2))
