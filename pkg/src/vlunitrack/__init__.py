"""Dual-view (UAV + ground) single-object tracker with a shared encoder,
language/visual view prompts, a cross-view adapter and confidence-switched
mutual distillation."""

from vlunitrack.config import (
    Box,
    ConfigError,
    LossWeights,
    OptimizerConfig,
    TrackerConfig,
    ViewId,
    box_to_corners,
    corners_to_box,
    load_config,
    validate_config,
)

__all__ = [
    "Box",
    "ConfigError",
    "LossWeights",
    "OptimizerConfig",
    "TrackerConfig",
    "ViewId",
    "box_to_corners",
    "corners_to_box",
    "load_config",
    "validate_config",
]

__version__ = "0.1.0"
