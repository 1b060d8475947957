"""Miniature ViT-style visual encoder with a per-layer interception hook.

The encoder is never trained: weights come from seeded QR-orthogonalized
Gaussians, so every forward is a pure function of (image, config,
interceptor). An interceptor, when supplied, rewrites the token sequence at
the *input* of each layer, which is what the background-token replacement
strategy hooks into.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import TransformerBlock, orthogonal
from .seeding import keyed_rng

# Sub-stream tags so the patch projection, CLS vector, positional table and
# per-layer blocks draw from independent streams of the same seed.
_TAG_PATCH = 1
_TAG_CLS = 2
_TAG_POS = 3
_TAG_BLOCK = 4

Interceptor = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 12
    embed_dim: int = 64
    num_heads: int = 4
    patch_size: int = 14
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 2:
            raise ConfigError("num_layers must be >= 2")
        if self.embed_dim <= 0 or self.num_heads <= 0 or self.patch_size <= 0:
            raise ConfigError("embed_dim, num_heads and patch_size must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )


@dataclass
class LayerFeatures:
    """Spatial token grid and [CLS] vector output by one encoder layer (1-based)."""

    layer_index: int
    spatial: np.ndarray  # (gh, gw, C)
    cls: np.ndarray  # (C,)


def validate_image(image: np.ndarray, patch_size: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h % patch_size != 0 or w % patch_size != 0:
        raise ShapeError(
            f"image dims {h}x{w} not divisible by patch size {patch_size}"
        )
    if not np.isfinite(image).all():
        raise ShapeError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ShapeError("image values must lie in [0, 1]")
    return image


class ToyEncoder:
    """Patch embedding + L pre-norm transformer layers, fully seeded."""

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        c = cfg.embed_dim
        p = cfg.patch_size
        self.patch_proj = orthogonal(keyed_rng(cfg.seed, _TAG_PATCH), p * p * 3, c)
        self.cls_vec = keyed_rng(cfg.seed, _TAG_CLS).standard_normal(c) * 0.02
        self.blocks = [
            TransformerBlock(keyed_rng(cfg.seed, _TAG_BLOCK, i), c, cfg.num_heads)
            for i in range(1, cfg.num_layers + 1)
        ]

    def _positional(self, gh: int, gw: int) -> np.ndarray:
        rng = keyed_rng(self.cfg.seed, _TAG_POS, gh, gw)
        return rng.standard_normal((1 + gh * gw, self.cfg.embed_dim)) * 0.02

    def grid_shape(self, image: np.ndarray) -> tuple[int, int]:
        p = self.cfg.patch_size
        return image.shape[0] // p, image.shape[1] // p

    def patch_embed(self, image: np.ndarray) -> np.ndarray:
        """Image -> (1 + gh*gw, C) token sequence; token 0 is [CLS]."""
        image = validate_image(image, self.cfg.patch_size)
        p = self.cfg.patch_size
        gh, gw = self.grid_shape(image)
        patches = (
            image.reshape(gh, p, gw, p, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh * gw, p * p * 3)
        )
        tokens = np.vstack([self.cls_vec[None, :], patches @ self.patch_proj])
        return tokens + self._positional(gh, gw)

    def forward(
        self,
        image: np.ndarray,
        interceptor: Optional[Interceptor] = None,
        trace: dict | None = None,
    ) -> List[LayerFeatures]:
        """Run all layers, returning per-layer spatial/[CLS] features.

        ``interceptor(layer_index, tokens) -> tokens`` is applied to the
        input of each layer (1-based); it must preserve the token shape.
        """
        tokens = self.patch_embed(image)
        gh, gw = self.grid_shape(image)
        c = self.cfg.embed_dim
        feats: List[LayerFeatures] = []
        for i, block in enumerate(self.blocks, start=1):
            if interceptor is not None:
                new = np.asarray(interceptor(i, tokens), dtype=np.float64)
                if new.shape != tokens.shape:
                    raise ShapeError(
                        f"interceptor at layer {i} returned shape {new.shape}, "
                        f"expected {tokens.shape}"
                    )
                tokens = new
            tokens = block(tokens, trace)
            feats.append(
                LayerFeatures(
                    layer_index=i,
                    spatial=tokens[1:].reshape(gh, gw, c).copy(),
                    cls=tokens[0].copy(),
                )
            )
        return feats


def patch_embed(image: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    return ToyEncoder(cfg).patch_embed(image)


def forward(
    image: np.ndarray,
    cfg: EncoderConfig,
    interceptor: Optional[Interceptor] = None,
    trace: dict | None = None,
) -> List[LayerFeatures]:
    return ToyEncoder(cfg).forward(image, interceptor, trace)
