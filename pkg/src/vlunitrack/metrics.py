"""Center-location error, IoU, precision/success rates and report assembly."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from vlunitrack.config import VIEWS, Box, ViewId, box_to_corners

AREA_EPS = 1e-8
PR_THRESHOLD_PX = 20.0
SR_THRESHOLD = 0.5
CLE_GRID = np.arange(0, 51, 1, dtype=float)
IOU_GRID = np.round(np.arange(0, 21) * 0.05, 10)


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    view: ViewId
    pred: Box
    gt: Box
    image_w: int
    image_h: int


def cle(pred: Box, gt: Box, image_w: float, image_h: float) -> float:
    return math.hypot((pred.cx - gt.cx) * image_w, (pred.cy - gt.cy) * image_h)


def iou(pred: Box, gt: Box) -> float:
    px1, py1, px2, py2 = box_to_corners(pred)
    gx1, gy1, gx2, gy2 = box_to_corners(gt)
    iw = max(0.0, min(px2, gx2) - max(px1, gx1))
    ih = max(0.0, min(py2, gy2) - max(py1, gy1))
    inter = iw * ih
    union = max(pred.w * pred.h + gt.w * gt.h - inter, AREA_EPS)
    return inter / union


def _frame_cle(f: FrameResult) -> float:
    return cle(f.pred, f.gt, f.image_w, f.image_h)


def precision_rate(frames: list[FrameResult], threshold: float = PR_THRESHOLD_PX) -> float:
    """Fraction of frames whose CLE is strictly below ``threshold`` pixels."""
    if not frames:
        raise ValueError("precision_rate of an empty frame list")
    return sum(_frame_cle(f) < threshold for f in frames) / len(frames)


def success_rate(frames: list[FrameResult], threshold: float = SR_THRESHOLD) -> float:
    """Fraction of frames whose IoU strictly exceeds ``threshold``."""
    if not frames:
        raise ValueError("success_rate of an empty frame list")
    return sum(iou(f.pred, f.gt) > threshold for f in frames) / len(frames)


@dataclass
class ViewMetrics:
    pr: float
    sr: float
    mean_cle_px: float
    mean_iou: float
    num_frames: int


@dataclass
class EvalReport:
    views: dict[str, ViewMetrics]
    average: dict[str, float]
    precision_curve: dict[str, list[list[float]]] = field(default_factory=dict)
    success_curve: dict[str, list[list[float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "views": {k: asdict(v) for k, v in self.views.items()},
            "average": dict(self.average),
            "precision_curve": self.precision_curve,
            "success_curve": self.success_curve,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls({k: ViewMetrics(**v) for k, v in d["views"].items()}, d["average"],
                   d.get("precision_curve", {}), d.get("success_curve", {}))

    def save(self, path: str | Path) -> None:
        """Write the JSON report and, next to it, one curve CSV per view and kind."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        stem = path.with_suffix("")
        for kind, curves in (("precision", self.precision_curve), ("success", self.success_curve)):
            for view, rows in curves.items():
                with open(f"{stem}_{kind}_{view}.csv", "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["threshold", "value"])
                    w.writerows(rows)


def _view_metrics(frames: list[FrameResult]):
    cles = np.array([_frame_cle(f) for f in frames])
    ious = np.array([iou(f.pred, f.gt) for f in frames])
    n = len(frames)
    m = ViewMetrics(pr=float(np.count_nonzero(cles < PR_THRESHOLD_PX) / n),
                    sr=float(np.count_nonzero(ious > SR_THRESHOLD) / n),
                    mean_cle_px=float(cles.mean()), mean_iou=float(ious.mean()), num_frames=n)
    prec = [[float(t), float(np.count_nonzero(cles < t) / n)] for t in CLE_GRID]
    succ = [[float(t), float(np.count_nonzero(ious > t) / n)] for t in IOU_GRID]
    return m, prec, succ


def build_report(frames_by_view: dict) -> EvalReport:
    """Per-view metrics, their unweighted cross-view mean, and threshold sweeps.

    ``frames_by_view`` maps each view to its frame list; the two lists must be
    the same length since the views are synchronized.
    """
    lists = {ViewId(v): fs for v, fs in frames_by_view.items()}
    if set(lists) != set(VIEWS):
        raise ValueError("report needs frames for both views")
    if len(lists[ViewId.UAV]) != len(lists[ViewId.GROUND]):
        raise ValueError(f"view frame counts differ: {len(lists[ViewId.UAV])} "
                         f"vs {len(lists[ViewId.GROUND])}")
    if not lists[ViewId.UAV]:
        raise ValueError("empty frame lists")
    views, prec, succ = {}, {}, {}
    for v in VIEWS:
        views[v.value], prec[v.value], succ[v.value] = _view_metrics(lists[v])
    average = {
        "pr": (views["uav"].pr + views["ground"].pr) / 2,
        "sr": (views["uav"].sr + views["ground"].sr) / 2,
    }
    return EvalReport(views, average, prec, succ)
