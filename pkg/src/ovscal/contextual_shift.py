"""Background-token replacement during the masked sub-image forward pass.

A proposal's sub-image is built by masking the background, cropping the
tight foreground bounding box, padding to square and resizing. During the
encoder forward, at each selected layer a seeded random fraction of the
background patch tokens in the layer *input* is overwritten with the [CLS]
embedding the unmodified encoder produced for the original full image at
the previous layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .encoder import LayerFeatures, ToyEncoder
from .errors import ConfigError, EmptyMaskError, ShapeError
from .seeding import keyed_rng


@dataclass
class MaskProposal:
    mask: np.ndarray  # (H, W) in {0, 1}
    proposal_id: int


@dataclass
class CSConfig:
    idx: Sequence[int] = (1, 3, 5, 7, 9)
    alpha: float = 0.30
    bg_threshold: float = 0.5
    sub_image_size: int = 56
    fill_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.bg_threshold <= 1.0:
            raise ConfigError(f"bg_threshold must be in (0, 1], got {self.bg_threshold}")
        if self.sub_image_size <= 0:
            raise ConfigError("sub_image_size must be positive")


@dataclass
class CleanContext:
    """Per-layer [CLS] vectors of the original full image, unmodified encoder.

    cls_per_layer[0] is the post-patch-embed [CLS]; cls_per_layer[i] for
    i >= 1 is the [CLS] output of layer i. Length equals the layer count.
    """

    cls_per_layer: List[np.ndarray]


def build_clean_context(encoder: ToyEncoder, image: np.ndarray) -> CleanContext:
    cls0 = encoder.patch_embed(image)[0].copy()
    feats = encoder.forward(image)
    per_layer = [cls0] + [f.cls for f in feats[:-1]]
    return CleanContext(cls_per_layer=per_layer)


def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of (H, W) or (H, W, C) arrays."""
    in_h, in_w = arr.shape[:2]
    r = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    c = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    r0 = np.clip(np.floor(r).astype(int), 0, in_h - 1)
    c0 = np.clip(np.floor(c).astype(int), 0, in_w - 1)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = np.clip(r - r0, 0.0, 1.0)[:, None]
    fc = np.clip(c - c0, 0.0, 1.0)[None, :]
    if arr.ndim == 3:
        fr = fr[:, :, None]
        fc = fc[:, :, None]
    a = arr[np.ix_(r0, c0)]
    b = arr[np.ix_(r0, c1)]
    d = arr[np.ix_(r1, c0)]
    e = arr[np.ix_(r1, c1)]
    top = a * (1 - fc) + b * fc
    bot = d * (1 - fc) + e * fc
    return top * (1 - fr) + bot * fr


def crop_and_mask(
    image: np.ndarray, proposal: MaskProposal, cfg: CSConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Mask the background, crop the tight foreground bbox, pad square,
    resize to cfg.sub_image_size. Returns (sub_image, sub_mask).

    Every sub-image pixel whose resampled mask is 0 equals fill_value
    exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(proposal.mask)
    if mask.shape != image.shape[:2]:
        raise ShapeError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    fg_rows, fg_cols = np.nonzero(mask)
    if fg_rows.size == 0:
        raise EmptyMaskError(f"proposal {proposal.proposal_id} has an empty mask")

    masked = image.copy()
    masked[mask == 0] = cfg.fill_value
    r0, r1 = fg_rows.min(), fg_rows.max() + 1
    c0, c1 = fg_cols.min(), fg_cols.max() + 1
    crop = masked[r0:r1, c0:c1]
    mcrop = mask[r0:r1, c0:c1].astype(np.float64)

    h, w = crop.shape[:2]
    side = max(h, w)
    pad_t = (side - h) // 2
    pad_l = (side - w) // 2
    sq = np.full((side, side, 3), cfg.fill_value, dtype=np.float64)
    sq[pad_t : pad_t + h, pad_l : pad_l + w] = crop
    msq = np.zeros((side, side), dtype=np.float64)
    msq[pad_t : pad_t + h, pad_l : pad_l + w] = mcrop

    s = cfg.sub_image_size
    sub = _resize_bilinear(sq, s, s)
    sub_mask = (_resize_bilinear(msq, s, s) >= 0.5).astype(np.uint8)
    sub[sub_mask == 0] = cfg.fill_value
    return np.clip(sub, 0.0, 1.0), sub_mask


def background_patches(
    resampled_mask: np.ndarray, patch_size: int, bg_threshold: float
) -> np.ndarray:
    """Flat (row-major) grid indices of patches whose foreground fraction
    is strictly below bg_threshold."""
    mask = np.asarray(resampled_mask, dtype=np.float64)
    h, w = mask.shape
    if h % patch_size != 0 or w % patch_size != 0:
        raise ShapeError(f"mask dims {h}x{w} not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    frac = mask.reshape(gh, patch_size, gw, patch_size).mean(axis=(1, 3))
    return np.flatnonzero(frac.reshape(-1) < bg_threshold)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def replacement_plan(
    bg_indices: np.ndarray, alpha: float, layer: int, proposal_id: int, seed: int
) -> np.ndarray:
    """Sorted subset of bg_indices of size round-half-up(alpha * |bg|),
    sampled without replacement from a stream keyed by
    (seed, proposal_id, layer)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    bg_indices = np.asarray(bg_indices, dtype=np.int64)
    count = round_half_up(alpha * bg_indices.size)
    if count == 0:
        return np.empty(0, dtype=np.int64)
    rng = keyed_rng(seed, proposal_id, layer)
    chosen = rng.choice(bg_indices, size=count, replace=False)
    return np.sort(chosen)


@dataclass
class LayerReplacement:
    """Audit of one layer's interception: chosen spatial indices and the
    token sequences just before/after the overwrite."""

    layer: int
    chosen: np.ndarray
    before: np.ndarray
    after: np.ndarray


@dataclass
class CSForwardResult:
    cls_final: np.ndarray
    layer_features: List[LayerFeatures]
    replacements: List[LayerReplacement] = field(default_factory=list)
    bg_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def cs_forward(
    sub_image: np.ndarray,
    sub_mask: np.ndarray,
    clean: CleanContext,
    cfg: CSConfig,
    encoder: ToyEncoder,
    proposal_id: int = 0,
    trace: dict | None = None,
) -> CSForwardResult:
    """Encoder forward on the sub-image with background-token replacement.

    For each layer i in cfg.idx, the planned background spatial tokens of
    the layer input are overwritten with clean.cls_per_layer[i - 1]. With
    idx empty or alpha = 0 this is bitwise the vanilla forward.
    """
    num_layers = encoder.cfg.num_layers
    for i in cfg.idx:
        if not 1 <= i <= num_layers:
            raise ConfigError(f"replacement layer {i} outside [1..{num_layers}]")
    if len(clean.cls_per_layer) != num_layers:
        raise ConfigError(
            f"clean context has {len(clean.cls_per_layer)} entries, "
            f"expected {num_layers}"
        )

    bg = background_patches(sub_mask, encoder.cfg.patch_size, cfg.bg_threshold)
    plans: Dict[int, np.ndarray] = {
        i: replacement_plan(bg, cfg.alpha, i, proposal_id, cfg.seed)
        for i in sorted(set(cfg.idx))
    }
    result = CSForwardResult(
        cls_final=np.empty(0), layer_features=[], bg_indices=bg
    )

    def interceptor(layer: int, tokens: np.ndarray) -> np.ndarray:
        chosen = plans.get(layer)
        if chosen is None or chosen.size == 0:
            return tokens
        before = tokens.copy()
        out = tokens.copy()
        out[1 + chosen] = clean.cls_per_layer[layer - 1]
        result.replacements.append(
            LayerReplacement(layer=layer, chosen=chosen, before=before, after=out.copy())
        )
        return out

    feats = encoder.forward(sub_image, interceptor, trace)
    result.layer_features = feats
    result.cls_final = feats[-1].cls
    return result
