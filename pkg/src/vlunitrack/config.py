"""Core value types and the run configuration.

Boxes are stored center-normalized ``(cx, cy, w, h)`` in the unit square;
corners are computed on demand.  The configuration is a frozen dataclass that
round-trips through a flat ``key=value`` text file.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration (or spec) file violates its invariants."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ViewId(str, enum.Enum):
    UAV = "uav"
    GROUND = "ground"

    @property
    def other(self) -> "ViewId":
        return ViewId.GROUND if self is ViewId.UAV else ViewId.UAV


VIEWS = (ViewId.UAV, ViewId.GROUND)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, center format, normalized to the image size."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be positive, got w={self.w}, h={self.h}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def clamped(self) -> "Box":
        """Clip to the unit square, keeping a tiny positive extent."""
        x1, y1, x2, y2 = box_to_corners(self)
        x1, x2 = min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)
        y1, y2 = min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)
        eps = 1e-6
        if x2 - x1 < eps:
            x1, x2 = min(x1, 1.0 - eps), min(x1, 1.0 - eps) + eps
        if y2 - y1 < eps:
            y1, y2 = min(y1, 1.0 - eps), min(y1, 1.0 - eps) + eps
        return corners_to_box(x1, y1, x2, y2)

    def to_pixels(self, image_w: float, image_h: float) -> tuple[float, float, float, float]:
        """Corner-format ``(x, y, w, h)`` in pixels."""
        x1, y1, _, _ = box_to_corners(self)
        return (x1 * image_w, y1 * image_h, self.w * image_w, self.h * image_h)

    @classmethod
    def from_pixels(cls, x: float, y: float, w: float, h: float,
                    image_w: float, image_h: float) -> "Box":
        return cls((x + w / 2) / image_w, (y + h / 2) / image_h, w / image_w, h / image_h)


def box_to_corners(b: Box) -> tuple[float, float, float, float]:
    return (b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2)


def corners_to_box(x1: float, y1: float, x2: float, y2: float) -> Box:
    return Box((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 5.0   # weights the L1 box term
    lambda_giou: float = 2.0
    lambda_loc: float = 1.0   # weights the focal center-map term
    lambda_cmd: float = 0.5


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 80
    samples_per_epoch: int = 10_000
    grad_clip: float = 5.0

    @property
    def total_steps(self) -> int:
        return max(1, math.ceil(self.epochs * self.samples_per_epoch / self.batch_size))


DEFAULT_UAV_TEXTS = ("top-down view", "aerial view")
DEFAULT_GROUND_TEXTS = ("ground view", "eye-level perspective")
VLGP_MODES = ("full", "text", "visual", "off")


@dataclass(frozen=True)
class TrackerConfig:
    patch_size: int = 16
    template_size: int = 64
    search_size: int = 128
    embed_dim: int = 64
    encoder_depth: int = 2
    attn_heads: int = 4
    frozen_embed_dim: int = 64
    prompt_texts_uav: tuple[str, ...] = DEFAULT_UAV_TEXTS
    prompt_texts_ground: tuple[str, ...] = DEFAULT_GROUND_TEXTS
    frozen_encoder: str = "stub"
    alpha_init: float = 0.5
    # ablation switches
    use_pcva: bool = True
    vlgp_mode: str = "full"
    # targets / cropping / sampling
    template_factor: float = 2.0
    search_factor: float = 4.0
    gaussian_sigma: float = 1.0
    focal_gamma: float = 2.0
    focal_beta: float = 4.0
    max_frame_gap: int = 30
    center_jitter: float = 0.75
    scale_jitter: float = 0.2
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0

    @property
    def feat_size(self) -> int:
        return self.search_size // self.patch_size

    @property
    def template_tokens(self) -> int:
        return (self.template_size // self.patch_size) ** 2

    @property
    def search_tokens(self) -> int:
        return self.feat_size ** 2

    def replace(self, **changes: Any) -> "TrackerConfig":
        """``dataclasses.replace`` that also accepts flat nested keys."""
        lw = {k: changes.pop(k) for k in list(changes) if k in _LOSS_KEYS}
        opt = {k: changes.pop(k) for k in list(changes) if k in _OPT_KEYS}
        if lw:
            changes["loss_weights"] = dataclasses.replace(self.loss_weights, **lw)
        if opt:
            changes["optimizer"] = dataclasses.replace(self.optimizer, **opt)
        return dataclasses.replace(self, **changes)


_LOSS_KEYS = {f.name: f for f in dataclasses.fields(LossWeights)}
_OPT_KEYS = {f.name: f for f in dataclasses.fields(OptimizerConfig)}
_TOP_KEYS = {f.name: f for f in dataclasses.fields(TrackerConfig)
             if f.name not in ("loss_weights", "optimizer")}


def validate_config(c: TrackerConfig) -> list[str]:
    """Return one diagnostic per violated invariant (empty when valid)."""
    problems = []
    for name in ("patch_size", "template_size", "search_size", "embed_dim", "attn_heads",
                 "frozen_embed_dim"):
        if getattr(c, name) <= 0:
            problems.append(f"{name} must be positive")
    if c.encoder_depth < 0:
        problems.append("encoder_depth must be non-negative")
    if c.patch_size > 0:
        if c.template_size % c.patch_size:
            problems.append("template_size not divisible by patch_size")
        if c.search_size % c.patch_size:
            problems.append("search_size not divisible by patch_size")
    if c.attn_heads > 0 and c.embed_dim % c.attn_heads:
        problems.append("embed_dim not divisible by attn_heads")
    if not c.prompt_texts_uav:
        problems.append("empty prompt set: prompt_texts_uav")
    if not c.prompt_texts_ground:
        problems.append("empty prompt set: prompt_texts_ground")
    if c.vlgp_mode not in VLGP_MODES:
        problems.append(f"vlgp_mode must be one of {VLGP_MODES}")
    if not (c.frozen_encoder == "stub" or c.frozen_encoder.startswith("external:")):
        problems.append("frozen_encoder must be 'stub' or 'external:<path>'")
    for name, val in dataclasses.asdict(c.loss_weights).items():
        if not (val >= 0):
            problems.append(f"{name} must be >= 0")
    opt = c.optimizer
    if not (opt.learning_rate >= 0):
        problems.append("learning_rate must be >= 0")
    if opt.weight_decay < 0:
        problems.append("weight_decay must be >= 0")
    if opt.batch_size <= 0 or opt.epochs <= 0 or opt.samples_per_epoch <= 0:
        problems.append("batch_size, epochs and samples_per_epoch must be positive")
    if c.template_factor <= 0 or c.search_factor <= 0:
        problems.append("crop factors must be positive")
    if c.max_frame_gap < 0:
        problems.append("max_frame_gap must be non-negative")
    return problems


def check_config(c: TrackerConfig) -> TrackerConfig:
    problems = validate_config(c)
    if problems:
        raise ConfigError(problems)
    return c


# -- flat key=value text format ------------------------------------------------

def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " | ".join(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, raw: str, typ: Any) -> Any:
    typ = str(typ)
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ.startswith("tuple"):
            return tuple(s.strip() for s in raw.split("|") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_flat(text: str, known: dict[str, Any]) -> dict[str, Any]:
    """Parse ``key=value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out: dict[str, Any] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            out[key] = _parse_value(key, raw, known[key])
        except ConfigError as e:
            problems.extend(e.problems)
    if problems:
        raise ConfigError(problems)
    return out


def config_to_text(c: TrackerConfig) -> str:
    lines = []
    for name in _TOP_KEYS:
        lines.append(f"{name} = {_format_value(getattr(c, name))}")
    for name in _LOSS_KEYS:
        lines.append(f"{name} = {_format_value(getattr(c.loss_weights, name))}")
    for name in _OPT_KEYS:
        lines.append(f"{name} = {_format_value(getattr(c.optimizer, name))}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> TrackerConfig:
    known = {name: f.type for name, f in {**_TOP_KEYS, **_LOSS_KEYS, **_OPT_KEYS}.items()}
    values = parse_flat(text, known)
    return TrackerConfig().replace(**values)


def load_config(path: str | Path) -> TrackerConfig:
    """Read and validate a config file, raising ``ConfigError`` on any problem."""
    return check_config(config_from_text(Path(path).read_text(encoding="utf-8")))


def save_config(c: TrackerConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(c), encoding="utf-8")
