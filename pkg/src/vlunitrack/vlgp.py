"""View prompts from frozen text/image encoders.

Text descriptions of each view are encoded and averaged into a text prior,
the template is encoded into a visual context vector, both are L2-normalized,
fused with a learnable balance ``alpha`` and projected to the tracker width.
"""
from __future__ import annotations

import hashlib
import importlib.util
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from vlunitrack.config import ConfigError, TrackerConfig, ViewId

NORM_EPS = 1e-8
STUB_SEED = 0x5EED


class FrozenEncoderPair(Protocol):
    embed_dim: int

    def text_encode(self, text: str) -> torch.Tensor: ...

    def image_encode(self, images: torch.Tensor) -> torch.Tensor: ...


@dataclass(frozen=True)
class TextPromptBank:
    uav_texts: tuple[str, ...]
    ground_texts: tuple[str, ...]

    def __post_init__(self):
        if not self.uav_texts or not self.ground_texts:
            raise ConfigError("empty prompt set")

    def texts(self, view: ViewId) -> tuple[str, ...]:
        return self.uav_texts if ViewId(view) is ViewId.UAV else self.ground_texts

    @classmethod
    def from_config(cls, cfg: TrackerConfig) -> "TextPromptBank":
        return cls(tuple(cfg.prompt_texts_uav), tuple(cfg.prompt_texts_ground))


class StubFrozenEncoder(nn.Module):
    """Deterministic stand-in for a pretrained text/image encoder pair.

    Text: a string hashes to a seed that draws a fixed unit-variance vector.
    Image: 16x16 grayscale area-downsample, then a fixed random affine map.
    Everything lives in buffers, so nothing here is ever trainable.
    """

    grid = 16

    def __init__(self, embed_dim: int = 64, seed: int = STUB_SEED):
        super().__init__()
        self.embed_dim = embed_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        n_in = self.grid * self.grid
        weight = rng.standard_normal((embed_dim, n_in)) / np.sqrt(n_in)
        bias = 0.1 * rng.standard_normal(embed_dim)
        self.register_buffer("weight", torch.from_numpy(weight).float(), persistent=False)
        self.register_buffer("bias", torch.from_numpy(bias).float(), persistent=False)

    def text_encode(self, text: str) -> torch.Tensor:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest[:8], "little")])
        return torch.from_numpy(rng.standard_normal(self.embed_dim)).to(self.weight.dtype)

    def image_encode(self, images: torch.Tensor) -> torch.Tensor:
        # images: [3, H, W] or [B, 3, H, W], values in [0, 1]
        single = images.dim() == 3
        if single:
            images = images.unsqueeze(0)
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected [B, 3, H, W] images, got {tuple(images.shape)}")
        luma = images.new_tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1)
        gray = (images * luma).sum(dim=1, keepdim=True)
        small = F.adaptive_avg_pool2d(gray, self.grid).flatten(1)
        out = F.linear(small, self.weight.to(small.dtype), self.bias.to(small.dtype))
        return out[0] if single else out


class ExternalFrozenEncoder(nn.Module):
    """Adapter for a user-supplied encoder module file.

    The file must define ``embed_dim: int``, ``text_encode(str) -> vector[C]``
    and ``image_encode(image[3, H, W] in [0, 1]) -> vector[C]``.
    """

    def __init__(self, path: str):
        super().__init__()
        spec = importlib.util.spec_from_file_location("vlunitrack_external_encoder", path)
        if spec is None or spec.loader is None:
            raise ConfigError(f"cannot load external encoder from {path}")
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)
        for attr in ("embed_dim", "text_encode", "image_encode"):
            if not hasattr(mod, attr):
                raise ConfigError(f"external encoder {path} lacks {attr!r}")
        self.embed_dim = int(mod.embed_dim)
        self._text: Callable = mod.text_encode
        self._image: Callable = mod.image_encode

    def text_encode(self, text: str) -> torch.Tensor:
        return torch.as_tensor(np.asarray(self._text(text)), dtype=torch.float32)

    def image_encode(self, images: torch.Tensor) -> torch.Tensor:
        single = images.dim() == 3
        batch = images.unsqueeze(0) if single else images
        out = torch.stack([torch.as_tensor(np.asarray(self._image(im.detach().cpu().numpy())),
                                           dtype=torch.float32) for im in batch])
        return out[0] if single else out


def build_frozen_encoder(cfg: TrackerConfig) -> nn.Module:
    if cfg.frozen_encoder == "stub":
        return StubFrozenEncoder(cfg.frozen_embed_dim)
    if cfg.frozen_encoder.startswith("external:"):
        enc = ExternalFrozenEncoder(cfg.frozen_encoder[len("external:"):])
        if enc.embed_dim != cfg.frozen_embed_dim:
            raise ConfigError(f"external encoder declares C={enc.embed_dim}, "
                              f"config has frozen_embed_dim={cfg.frozen_embed_dim}")
        return enc
    raise ConfigError(f"unknown frozen_encoder {cfg.frozen_encoder!r}")


def l2_normalize(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)


def text_prior(texts: Sequence[str], enc: FrozenEncoderPair) -> torch.Tensor:
    if not texts:
        raise ConfigError("empty prompt set")
    with torch.no_grad():
        return torch.stack([enc.text_encode(t) for t in texts]).mean(dim=0)


def visual_context(template: torch.Tensor, enc: FrozenEncoderPair) -> torch.Tensor:
    with torch.no_grad():
        return enc.image_encode(template)


def fuse_prompt(text_vec: torch.Tensor | None, vis_vec: torch.Tensor | None,
                alpha: torch.Tensor, proj: nn.Module) -> torch.Tensor:
    """``proj(Norm(text) + alpha * Norm(vis))``; either input may be dropped."""
    if text_vec is None and vis_vec is None:
        raise ValueError("need at least one of text_vec, vis_vec")
    if vis_vec is None:
        fused = l2_normalize(text_vec)
    elif text_vec is None:
        fused = l2_normalize(vis_vec)
    else:
        fused = l2_normalize(text_vec) + alpha * l2_normalize(vis_vec)
    return proj(fused)


class VLGP(nn.Module):
    """Produces one prompt token per view, recomputed from the current templates."""

    def __init__(self, cfg: TrackerConfig, encoder: nn.Module | None = None):
        super().__init__()
        self.mode = cfg.vlgp_mode
        self.bank = TextPromptBank.from_config(cfg)
        self.frozen = encoder if encoder is not None else build_frozen_encoder(cfg)
        self.frozen.requires_grad_(False)
        self.alpha = nn.Parameter(torch.tensor(float(cfg.alpha_init)))
        self.proj = nn.Linear(cfg.frozen_embed_dim, cfg.embed_dim)
        for view in ViewId:
            self.register_buffer(f"text_prior_{view.value}",
                                 text_prior(self.bank.texts(view), self.frozen).float(),
                                 persistent=False)

    def text_vector(self, view: ViewId) -> torch.Tensor:
        return getattr(self, f"text_prior_{ViewId(view).value}")

    def forward(self, view: ViewId, template: torch.Tensor) -> torch.Tensor:
        """template ``[B, 3, h, w]`` -> prompt tokens ``[B, D]``."""
        t = self.text_vector(view) if self.mode in ("full", "text") else None
        v = visual_context(template, self.frozen) if self.mode in ("full", "visual") else None
        if t is not None:
            t = t.to(template.dtype).expand(template.shape[0], -1)
        if v is not None:
            v = v.to(template.dtype)
        return fuse_prompt(t, v, self.alpha, self.proj)


def make_prompt(view: ViewId, template: torch.Tensor, alpha: torch.Tensor, proj: nn.Module,
                bank: TextPromptBank, enc: FrozenEncoderPair) -> torch.Tensor:
    """Stand-alone prompt construction (no module state)."""
    t = text_prior(bank.texts(view), enc).to(template.dtype)
    v = visual_context(template, enc).to(template.dtype)
    return fuse_prompt(t, v, alpha, proj)
