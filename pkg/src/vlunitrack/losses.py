"""Tracking losses, confidence-switched mutual distillation, and the total loss."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from vlunitrack.config import LossWeights

AREA_EPS = 1e-8

# distillation directions, as logged
U_TO_G = "u->g"
G_TO_U = "g->u"
NONE = "none"
DIRECTIONS = (U_TO_G, G_TO_U, NONE)


def cxcywh_to_xyxy(b: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = b.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def _area(b):
    return (b[..., 2] - b[..., 0]).clamp_min(0) * (b[..., 3] - b[..., 1]).clamp_min(0)


def iou_and_giou(pred: torch.Tensor, gt: torch.Tensor):
    """IoU and GIoU of center-format boxes ``[..., 4]``."""
    p, g = cxcywh_to_xyxy(pred), cxcywh_to_xyxy(gt)
    lt = torch.maximum(p[..., :2], g[..., :2])
    rb = torch.minimum(p[..., 2:], g[..., 2:])
    inter = (rb - lt).clamp_min(0).prod(-1)
    union = (_area(p) + _area(g) - inter).clamp_min(AREA_EPS)
    iou = inter / union
    elt = torch.minimum(p[..., :2], g[..., :2])
    erb = torch.maximum(p[..., 2:], g[..., 2:])
    enclose = (erb - elt).clamp_min(0).prod(-1).clamp_min(AREA_EPS)
    return iou, iou - (enclose - union) / enclose


def giou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean ``1 - GIoU`` over the leading dims; in ``[0, 2)``."""
    return (1 - iou_and_giou(pred, gt)[1]).mean()


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return (pred - gt).abs().mean()


def classification_loss(logits: torch.Tensor, target: torch.Tensor,
                        gamma: float = 2.0, beta: float = 4.0) -> torch.Tensor:
    """Penalty-reduced focal loss on ``sigmoid(logits)`` against a Gaussian center map.

    Cells with target exactly 1 are positives; every other cell is a negative
    down-weighted by ``(1 - target) ** beta``.  Normalized by the positive
    count per map, averaged over the batch.
    """
    if logits.shape != target.shape:
        raise ValueError(f"logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    if logits.dim() == 2:
        logits, target = logits[None], target[None]
    p = torch.sigmoid(logits)
    log_p = F.logsigmoid(logits)
    log_1mp = F.logsigmoid(-logits)
    pos = (target == 1).to(logits.dtype)
    pos_term = -((1 - p) ** gamma) * log_p * pos
    neg_term = -((1 - target) ** beta) * (p ** gamma) * log_1mp * (1 - pos)
    per_map = (pos_term + neg_term).flatten(1).sum(1) / pos.flatten(1).sum(1).clamp_min(1)
    return per_map.mean()


def confidence(score: torch.Tensor) -> torch.Tensor:
    """Peak sigmoid response; per map for ``[B, H, W]``, scalar for ``[H, W]``."""
    return torch.sigmoid(score.flatten(-2).amax(-1))


def cmd_loss(f_u: torch.Tensor, f_g: torch.Tensor, c_u, c_g) -> torch.Tensor:
    """Confidence-switched distillation between the two views' search features.

    Features are ``[H, W, D]`` (or batched ``[B, H, W, D]`` with per-sample
    confidences ``[B]``).  The more confident view is a stop-gradient teacher;
    the loss is the squared feature distance summed over cells and channels,
    divided by ``H * W``.  Equal confidences give zero.  A batch is averaged.
    """
    if f_u.shape != f_g.shape:
        raise ValueError(f"feature shapes differ: {tuple(f_u.shape)} vs {tuple(f_g.shape)}")
    batched = f_u.dim() == 4
    if not batched:
        f_u, f_g = f_u[None], f_g[None]
    H, W = f_u.shape[1:3]
    c_u = torch.as_tensor(c_u, dtype=f_u.dtype, device=f_u.device).detach().reshape(-1)
    c_g = torch.as_tensor(c_g, dtype=f_u.dtype, device=f_u.device).detach().reshape(-1)
    u_teaches = (c_u > c_g).to(f_u.dtype)
    g_teaches = (c_g > c_u).to(f_u.dtype)
    ground_student = ((f_g - f_u.detach()) ** 2).flatten(1).sum(1)
    uav_student = ((f_u - f_g.detach()) ** 2).flatten(1).sum(1)
    per_sample = (u_teaches * ground_student + g_teaches * uav_student) / (H * W)
    return per_sample.mean() if batched else per_sample[0]


def distill_directions(c_u: torch.Tensor, c_g: torch.Tensor) -> list[str]:
    c_u, c_g = c_u.reshape(-1).tolist(), c_g.reshape(-1).tolist()
    return [U_TO_G if a > b else G_TO_U if b > a else NONE for a, b in zip(c_u, c_g)]


@dataclass
class ViewPrediction:
    """Per-view quantities needed by the total loss (batched)."""

    score: torch.Tensor      # [B, H, W] logits
    box: torch.Tensor        # [B, 4] predicted box, crop-normalized
    features: torch.Tensor   # [B, H, W, D] search features for distillation


@dataclass
class ViewTarget:
    box: torch.Tensor        # [B, 4]
    center_map: torch.Tensor  # [B, H, W]


def total_loss(pred_u: ViewPrediction, pred_g: ViewPrediction, tgt_u: ViewTarget,
               tgt_g: ViewTarget, weights: LossWeights, gamma: float = 2.0,
               beta: float = 4.0):
    """Weighted sum of per-view L1, GIoU and focal terms plus distillation.

    Returns ``(total, breakdown)`` where ``breakdown`` maps component names to
    detached floats and carries the per-sample confidences and directions.
    """
    l1 = l1_loss(pred_u.box, tgt_u.box) + l1_loss(pred_g.box, tgt_g.box)
    giou = giou_loss(pred_u.box, tgt_u.box) + giou_loss(pred_g.box, tgt_g.box)
    loc = (classification_loss(pred_u.score, tgt_u.center_map, gamma, beta)
           + classification_loss(pred_g.score, tgt_g.center_map, gamma, beta))
    c_u = confidence(pred_u.score).detach()
    c_g = confidence(pred_g.score).detach()
    cmd = cmd_loss(pred_u.features, pred_g.features, c_u, c_g)
    total = (weights.lambda_cls * l1 + weights.lambda_giou * giou
             + weights.lambda_loc * loc + weights.lambda_cmd * cmd)
    breakdown = {
        "total": float(total.detach()),
        "l1": float(l1.detach()),
        "giou": float(giou.detach()),
        "loc": float(loc.detach()),
        "cmd": float(cmd.detach()),
        "c_u": c_u.tolist(),
        "c_g": c_g.tolist(),
        "directions": distill_directions(c_u, c_g),
    }
    return total, breakdown
