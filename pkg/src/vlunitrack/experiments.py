"""Small end-to-end experiments shared by the scripts and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from vlunitrack.config import TrackerConfig
from vlunitrack.metrics import EvalReport
from vlunitrack.synthdata import SceneSpec, generate_dataset
from vlunitrack.trainer import evaluate, train


def steps_config(cfg: TrackerConfig, steps: int) -> TrackerConfig:
    """Config whose cosine schedule spans exactly ``steps`` optimizer steps."""
    b = cfg.optimizer.batch_size
    return cfg.replace(epochs=1, samples_per_epoch=steps * b)


@dataclass
class OverfitResult:
    seed: int
    report: EvalReport
    first_loss: float
    final_loss: float
    seconds: float

    @property
    def success(self) -> bool:
        return all(m.pr >= 0.9 and m.sr >= 0.9 for m in self.report.views.values())


def overfit_run(seed: int, steps: int = 1000, num_pairs: int = 4,
                cfg: TrackerConfig | None = None) -> OverfitResult:
    """Train on a few pairs and evaluate on the same pairs."""
    t0 = time.perf_counter()
    pairs = generate_dataset(SceneSpec(num_frames=60, seed=100 * seed), num_pairs)
    cfg = steps_config((cfg or TrackerConfig()).replace(seed=seed), steps)
    losses = []
    _, model, _ = train(cfg, pairs, log=lambda r: losses.append(r["total"]))
    report = evaluate(pairs, model=model)
    tail = losses[-min(50, len(losses)):]
    return OverfitResult(seed, report, losses[0], float(np.mean(tail)), time.perf_counter() - t0)


BASELINE = dict(use_pcva=False, vlgp_mode="off", lambda_cmd=0.0)


@dataclass
class AblationResult:
    full_sr: list[float] = field(default_factory=list)
    base_sr: list[float] = field(default_factory=list)
    full_pr: list[float] = field(default_factory=list)
    base_pr: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def full_mean(self) -> float:
        return float(np.mean(self.full_sr))

    @property
    def base_mean(self) -> float:
        return float(np.mean(self.base_sr))


def ablation_scene(seed: int, occlusion_prob: float = 0.05) -> SceneSpec:
    return SceneSpec(num_frames=60, occlusion_prob=occlusion_prob, occlusion_max_frames=8,
                     num_distractors=2, seed=seed)


def ablation_run(seeds=(0, 1, 2), steps: int = 1000, train_pairs: int = 16, test_pairs: int = 20,
                 cfg: TrackerConfig | None = None, log=None) -> AblationResult:
    """Full model vs. the plain shared-encoder baseline on held-out occluded pairs.

    Train and test scenes come from disjoint seed ranges; each training seed
    also seeds the model.
    """
    t0 = time.perf_counter()
    base_cfg = cfg or TrackerConfig()
    test = generate_dataset(ablation_scene(10_000), test_pairs)
    res = AblationResult()
    for seed in seeds:
        pairs = generate_dataset(ablation_scene(1_000 * (seed + 1)), train_pairs)
        for name, overrides in (("full", {}), ("baseline", BASELINE)):
            c = steps_config(base_cfg.replace(seed=seed, **overrides), steps)
            _, model, _ = train(c, pairs)
            rep = evaluate(test, model=model)
            (res.full_sr if name == "full" else res.base_sr).append(rep.average["sr"])
            (res.full_pr if name == "full" else res.base_pr).append(rep.average["pr"])
            if log is not None:
                log(f"seed {seed} {name}: SR={rep.average['sr']:.4f} PR={rep.average['pr']:.4f}")
    res.seconds = time.perf_counter() - t0
    return res

