"""Training loop, sequential tracking and evaluation."""
from __future__ import annotations

import json
import math
import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from vlunitrack.checkpoint import Checkpoint, make_checkpoint, restore_model
from vlunitrack.config import VIEWS, Box, TrackerConfig, ViewId, check_config
from vlunitrack.heads import boxes_at, center_cell, gaussian_target
from vlunitrack.losses import DIRECTIONS, ViewPrediction, ViewTarget, total_loss
from vlunitrack.metrics import EvalReport, FrameResult, build_report
from vlunitrack.model import VLUniTrack
from vlunitrack.synthdata import (DatasetError, SequencePair, crop_region, crop_side)


class TrainingError(RuntimeError):
    pass


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True)


def to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    """HWC float images -> ``[B, 3, H, W]``."""
    return torch.from_numpy(np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2)))


# -- sampling -------------------------------------------------------------------

@dataclass
class Batch:
    z: dict[ViewId, torch.Tensor]
    x: dict[ViewId, torch.Tensor]
    gt: dict[ViewId, torch.Tensor]  # crop-normalized (cx, cy, w, h)

    def __len__(self):
        return self.gt[ViewId.UAV].shape[0]


def sample_batch(pairs: Sequence[SequencePair], rng: np.random.Generator, cfg: TrackerConfig,
                 batch_size: int) -> Batch:
    """Template and search frames drawn from one sequence with gap <= ``max_frame_gap``.

    Both views use the same frame indices.  The search crop is centered on a
    jittered gt center with a jittered scale, as a stand-in for the previous
    frame's prediction.
    """
    z = {v: [] for v in VIEWS}
    x = {v: [] for v in VIEWS}
    gt = {v: [] for v in VIEWS}
    for _ in range(batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        T = pair.num_frames
        i = int(rng.integers(T))
        lo, hi = max(0, i - cfg.max_frame_gap), min(T - 1, i + cfg.max_frame_gap)
        j = int(rng.integers(lo, hi + 1))
        W, H = pair.image_size
        for v in VIEWS:
            tb, sb = pair.box(v, i), pair.box(v, j)
            zi, _ = crop_region(pair.frames[v][i], (tb.cx * W, tb.cy * H),
                                crop_side(tb, cfg.template_factor, W, H), cfg.template_size)
            extent = math.sqrt(sb.w * W * sb.h * H)
            shift = rng.uniform(-1, 1, 2) * cfg.center_jitter * extent
            scale = math.exp(rng.uniform(-1, 1) * cfg.scale_jitter)
            xi, tf = crop_region(pair.frames[v][j], (sb.cx * W + shift[0], sb.cy * H + shift[1]),
                                 crop_side(sb, cfg.search_factor, W, H) * scale, cfg.search_size)
            z[v].append(zi)
            x[v].append(xi)
            gt[v].append(tf.to_crop(sb).as_tuple())
    return Batch({v: to_tensor(z[v]) for v in VIEWS}, {v: to_tensor(x[v]) for v in VIEWS},
                 {v: torch.tensor(gt[v], dtype=torch.float32) for v in VIEWS})


def compute_loss(model: VLUniTrack, batch: Batch, cfg: TrackerConfig):
    out = model(batch.z[ViewId.UAV], batch.x[ViewId.UAV], batch.z[ViewId.GROUND], batch.x[ViewId.GROUND])
    preds, targets = [], []
    for v in VIEWS:
        vo, gt = out.view(v), batch.gt[v]
        # regression is read at the gt center cell during training
        box = boxes_at(center_cell(gt, cfg.feat_size), vo.offsets, vo.sizes)
        preds.append(ViewPrediction(vo.score, box, vo.features))
        targets.append(ViewTarget(gt, gaussian_target(gt, cfg.feat_size, cfg.gaussian_sigma)))
    return total_loss(preds[0], preds[1], targets[0], targets[1], cfg.loss_weights,
                      cfg.focal_gamma, cfg.focal_beta)


# -- training -------------------------------------------------------------------

@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    running: dict[str, float] = field(default_factory=dict)
    directions: Counter = field(default_factory=lambda: Counter({d: 0 for d in DIRECTIONS}))

    def update(self, breakdown: dict, momentum: float = 0.98) -> None:
        for k in ("total", "l1", "giou", "loc", "cmd"):
            prev = self.running.get(k)
            self.running[k] = breakdown[k] if prev is None else momentum * prev + (1 - momentum) * breakdown[k]
        self.directions.update(breakdown["directions"])


def build_optimizer(model: VLUniTrack, cfg: TrackerConfig):
    opt_cfg = cfg.optimizer
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=opt_cfg.learning_rate, weight_decay=opt_cfg.weight_decay)
    total = opt_cfg.total_steps
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: 0.5 * (1 + math.cos(math.pi * min(s, total) / total)))
    return opt, sched


def train(cfg: TrackerConfig, pairs: Sequence[SequencePair], steps: int | None = None,
          log: Callable[[dict], None] | None = None, model: VLUniTrack | None = None,
          batch_source: Callable[[int], Batch] | None = None):
    """Train from scratch (or continue ``model``) and return ``(checkpoint, model, state)``.

    ``steps`` defaults to ``epochs * samples_per_epoch / batch_size``.  ``log``
    receives one record per step.  ``batch_source(step)`` overrides sampling.
    """
    check_config(cfg)
    if not pairs and batch_source is None:
        raise DatasetError("no training sequences")
    seed_everything(cfg.seed)
    model = model or VLUniTrack(cfg)
    model.train()
    rng = np.random.default_rng([cfg.seed, 1])
    opt, sched = build_optimizer(model, cfg)
    total_steps = steps if steps is not None else cfg.optimizer.total_steps
    per_epoch = max(1, cfg.optimizer.samples_per_epoch // cfg.optimizer.batch_size)
    state = TrainState()
    for step in range(total_steps):
        batch = (batch_source(step) if batch_source is not None
                 else sample_batch(pairs, rng, cfg, cfg.optimizer.batch_size))
        loss, breakdown = compute_loss(model, batch, cfg)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}: "
                                + json.dumps({k: breakdown[k] for k in ("l1", "giou", "loc", "cmd")}))
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optimizer.grad_clip)
        opt.step()
        sched.step()
        state.step = step + 1
        state.epoch = state.step // per_epoch
        state.update(breakdown)
        if log is not None:
            counts = Counter(breakdown["directions"])
            log({"step": step, "lr": opt.param_groups[0]["lr"],
                 **{k: breakdown[k] for k in ("total", "l1", "giou", "loc", "cmd")},
                 "c_u": breakdown["c_u"], "c_g": breakdown["c_g"],
                 "directions": {d: counts.get(d, 0) for d in DIRECTIONS}})
    ckpt = make_checkpoint(model, opt, cfg, state.step,
                           {"directions": {d: state.directions[d] for d in DIRECTIONS}})
    return ckpt, model, state


def jsonl_logger(stream=None) -> Callable[[dict], None]:
    stream = stream or sys.stdout

    def _log(rec: dict) -> None:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")
    return _log


def model_from_checkpoint(ckpt: Checkpoint) -> VLUniTrack:
    cfg = check_config(ckpt.config)
    torch.manual_seed(cfg.seed)
    model = VLUniTrack(cfg)
    restore_model(ckpt, model)
    return model.eval()


# -- tracking -------------------------------------------------------------------

Predictions = dict  # ViewId -> np.ndarray [T, 4] frame-normalized boxes


class ModelTracker:
    """Sequential dual-view tracker.

    Templates are cropped once from frame 0 around the initial boxes and kept
    fixed.  Each later frame is searched around the previous prediction.
    Sequences are processed in lock-step batches.
    """

    def __init__(self, model: VLUniTrack, batch_size: int = 32):
        self.model = model.eval()
        self.cfg = model.cfg
        self.batch_size = batch_size

    @torch.no_grad()
    def __call__(self, pairs: Sequence[SequencePair], init: Sequence[dict] | None = None) -> list[Predictions]:
        results: list[Predictions] = []
        for k in range(0, len(pairs), self.batch_size):
            chunk = pairs[k:k + self.batch_size]
            inits = init[k:k + self.batch_size] if init is not None else [
                {v: p.box(v, 0) for v in VIEWS} for p in chunk]
            results.extend(self._track_chunk(chunk, inits))
        return results

    def _track_chunk(self, pairs, inits):
        cfg = self.cfg
        n = len(pairs)
        templates = {v: [] for v in VIEWS}
        prev = [{v: inits[i][v] for v in VIEWS} for i in range(n)]
        out = [{v: np.empty((p.num_frames, 4)) for v in VIEWS} for p in pairs]
        for i, p in enumerate(pairs):
            W, H = p.image_size
            for v in VIEWS:
                b = prev[i][v]
                zi, _ = crop_region(p.frames[v][0], (b.cx * W, b.cy * H),
                                    crop_side(b, cfg.template_factor, W, H), cfg.template_size)
                templates[v].append(zi)
                out[i][v][0] = b.as_tuple()
        z = {v: to_tensor(templates[v]) for v in VIEWS}
        T_max = max(p.num_frames for p in pairs)
        for t in range(1, T_max):
            active = [i for i, p in enumerate(pairs) if t < p.num_frames]
            crops = {v: [] for v in VIEWS}
            tfs = {v: [] for v in VIEWS}
            for i in active:
                p = pairs[i]
                W, H = p.image_size
                for v in VIEWS:
                    b = prev[i][v]
                    xi, tf = crop_region(p.frames[v][t], (b.cx * W, b.cy * H),
                                         crop_side(b, cfg.search_factor, W, H), cfg.search_size)
                    crops[v].append(xi)
                    tfs[v].append(tf)
            idx = torch.tensor(active)
            res = self.model(z[ViewId.UAV][idx], to_tensor(crops[ViewId.UAV]),
                             z[ViewId.GROUND][idx], to_tensor(crops[ViewId.GROUND]))
            for v in VIEWS:
                boxes = res.view(v).decode().double().numpy()
                for j, i in enumerate(active):
                    b = tfs[v][j].to_frame(Box(*boxes[j])).clamped()
                    prev[i][v] = b
                    out[i][v][t] = b.as_tuple()
        return out


class OracleTracker:
    """Returns the ground truth; a test hook for the evaluation path."""

    def __call__(self, pairs, init=None):
        return [{v: p.boxes[v].copy() for v in VIEWS} for p in pairs]


def frame_results(pairs: Sequence[SequencePair], preds: Sequence[Predictions]) -> dict:
    frames = {v: [] for v in VIEWS}
    for p, pr in zip(pairs, preds):
        W, H = p.image_size
        for v in VIEWS:
            for t in range(p.num_frames):
                frames[v].append(FrameResult(t, v, Box(*pr[v][t]), p.box(v, t), W, H))
    return frames


def check_geometry(pairs: Sequence[SequencePair]) -> None:
    for p in pairs:
        sizes = {p.frames[v].shape[1:] for v in VIEWS}
        if len(sizes) != 1 or next(iter(sizes))[-1] != 3:
            raise DatasetError(f"geometry mismatch in sequence {p.name}: frame shapes {sizes}")
        if not all(np.isfinite(p.boxes[v]).all() for v in VIEWS):
            raise DatasetError(f"sequence {p.name} lacks ground truth")


def evaluate(pairs: Sequence[SequencePair], tracker: Callable | None = None,
             model: VLUniTrack | None = None) -> EvalReport:
    """Track every pair and build the report.  Pass ``model`` or a ``tracker``."""
    if not pairs:
        raise DatasetError("no sequences to evaluate")
    check_geometry(pairs)
    if tracker is None:
        if model is None:
            raise ValueError("need a model or a tracker")
        tracker = ModelTracker(model)
    preds = tracker(pairs)
    return build_report(frame_results(pairs, preds))


def evaluate_checkpoint(ckpt: Checkpoint, pairs: Sequence[SequencePair]) -> EvalReport:
    return evaluate(pairs, model=model_from_checkpoint(ckpt))
