"""Semantic integration of encoder features into proposal embeddings.

Three stages: a low-frequency spectral enhancement of selected layers'
spatial tokens, cross-attention that injects them into the proposal
embeddings, and a gamma-scaled fusion with the final [CLS] vector followed
by one self-attention encoder block.

The spectral filter keeps the DC bin at index (0, 0) (no fftshift); the
coefficient map is zero at the spatial center of the unshifted spectrum,
i.e. at the highest frequencies, and rises toward 1 with distance from it.
The per-frequency "conv" is a shared 2x2 linear map over the (real, imag)
channel pair. Both it and the attention output projections default to zero,
so the whole untrained module is exactly the identity on the proposal
embeddings when gamma = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .encoder import LayerFeatures
from .errors import ConfigError, ShapeError
from .nn import AttentionWeights, TransformerBlock, multi_head_attention
from .seeding import keyed_rng

_TAG_XATTN = 11
_TAG_FUSED = 12


@dataclass(frozen=True)
class FrequencyKernel:
    """Coefficient map over an h x w spectrum with cutoff sigma."""

    coeffs: np.ndarray  # (h, w), values in [0, 1], 0 at the center
    sigma: float

    @property
    def center(self) -> tuple[int, int]:
        return self.coeffs.shape[0] // 2, self.coeffs.shape[1] // 2


def make_frequency_kernel(h: int, w: int, sigma: float) -> FrequencyKernel:
    """Gaussian-shaped coefficient map: 1 - exp(-d^2 / (2 sigma^2)).

    d is the Euclidean distance from (h//2, w//2); the center value is
    exactly 0 and values increase monotonically with distance.
    """
    if h < 1 or w < 1:
        raise ConfigError(f"kernel dims must be >= 1, got {h}x{w}")
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    rows = np.arange(h)[:, None] - h // 2
    cols = np.arange(w)[None, :] - w // 2
    d2 = rows.astype(np.float64) ** 2 + cols.astype(np.float64) ** 2
    coeffs = 1.0 - np.exp(-d2 / (2.0 * sigma * sigma))
    return FrequencyKernel(coeffs=coeffs, sigma=float(sigma))


def low_frequency_enhance(
    spatial: np.ndarray,
    kernel: FrequencyKernel,
    conv_weights: np.ndarray,
    apply_relu: bool = True,
) -> np.ndarray:
    """Filter a (h, w, C) token grid in the frequency domain, residually.

    Per channel: DFT, elementwise product with the kernel, the shared 2x2
    linear map over (real, imag) with elementwise ReLU, inverse DFT (real
    part), plus the original grid. With conv_weights = 0 this is exactly
    the identity.
    """
    spatial = np.asarray(spatial, dtype=np.float64)
    if spatial.ndim != 3:
        raise ShapeError(f"expected (h, w, C) grid, got shape {spatial.shape}")
    if kernel.coeffs.shape != spatial.shape[:2]:
        raise ShapeError(
            f"kernel {kernel.coeffs.shape} does not match grid {spatial.shape[:2]}"
        )
    conv_weights = np.asarray(conv_weights, dtype=np.float64)
    if conv_weights.shape != (2, 2):
        raise ShapeError(f"conv_weights must be 2x2, got {conv_weights.shape}")

    spec = np.fft.fft2(spatial, axes=(0, 1)) * kernel.coeffs[:, :, None]
    re = conv_weights[0, 0] * spec.real + conv_weights[0, 1] * spec.imag
    im = conv_weights[1, 0] * spec.real + conv_weights[1, 1] * spec.imag
    if apply_relu:
        re = np.maximum(re, 0.0)
        im = np.maximum(im, 0.0)
    filtered = np.fft.ifft2(re + 1j * im, axes=(0, 1)).real
    return filtered + spatial


def _zeros22() -> np.ndarray:
    return np.zeros((2, 2))


@dataclass
class SIMConfig:
    selected_layers: Sequence[int] = (6, 9, 12)
    sigmas: Sequence[float] = (9.0, 7.0, 3.0)
    gamma: float = 0.1
    heads: int = 4
    conv_weights: np.ndarray = field(default_factory=_zeros22)
    seed: int = 0
    # Scale of the attention output projections (cross-attention and the
    # fused block). Zero keeps the untrained module an exact identity.
    proj_init_scale: float = 0.0

    def __post_init__(self):
        if len(self.selected_layers) != len(self.sigmas) or len(self.selected_layers) < 1:
            raise ConfigError(
                "selected_layers and sigmas must have equal length m >= 1"
            )
        if any(s <= 0 for s in self.sigmas):
            raise ConfigError("all sigmas must be positive")
        self.conv_weights = np.asarray(self.conv_weights, dtype=np.float64)
        if self.conv_weights.shape != (2, 2):
            raise ConfigError("conv_weights must be a 2x2 array")


class SemanticIntegrator:
    """Holds the seeded cross-attention and fused-block weights for one config."""

    def __init__(self, cfg: SIMConfig, embed_dim: int):
        self.cfg = cfg
        self.embed_dim = embed_dim
        self.xattn = AttentionWeights.create(
            keyed_rng(cfg.seed, _TAG_XATTN), embed_dim, out_scale=cfg.proj_init_scale
        )
        self.fused_block = TransformerBlock(
            keyed_rng(cfg.seed, _TAG_FUSED),
            embed_dim,
            cfg.heads,
            out_scale=cfg.proj_init_scale,
        )

    def integrate_semantics(
        self,
        proposal_embeddings: np.ndarray,
        enhanced_layers: Sequence[np.ndarray],
        trace: dict | None = None,
    ) -> np.ndarray:
        """Cross-attend proposal embeddings (queries) over the concatenated
        enhanced grids (keys/values), applied residually."""
        f_n = np.asarray(proposal_embeddings, dtype=np.float64)
        if f_n.ndim != 2:
            raise ShapeError(f"proposal embeddings must be NxC, got {f_n.shape}")
        if len(enhanced_layers) < 1:
            raise ShapeError("need at least one enhanced layer grid")
        c = f_n.shape[1]
        flat = []
        for grid in enhanced_layers:
            grid = np.asarray(grid, dtype=np.float64)
            if grid.shape[-1] != c:
                raise ShapeError(
                    f"grid channels {grid.shape[-1]} != embedding dim {c}"
                )
            flat.append(grid.reshape(-1, c))
        keys_values = np.concatenate(flat, axis=0)
        attn = multi_head_attention(f_n, keys_values, self.xattn, self.cfg.heads, trace)
        if trace is not None:
            trace.setdefault("attention_context", []).append(attn.context)
        return f_n + attn.output

    def fuse_cls(
        self,
        proposal_embeddings: np.ndarray,
        cls_final: np.ndarray,
        trace: dict | None = None,
    ) -> np.ndarray:
        """Add gamma * final [CLS] (broadcast over rows), then run the fused block."""
        f_n = np.asarray(proposal_embeddings, dtype=np.float64)
        cls_final = np.asarray(cls_final, dtype=np.float64)
        if cls_final.shape != (f_n.shape[1],):
            raise ShapeError(
                f"cls vector shape {cls_final.shape} != (C,) with C={f_n.shape[1]}"
            )
        return self.fused_block(f_n + self.cfg.gamma * cls_final[None, :], trace)

    def calibrate(
        self,
        proposal_embeddings: np.ndarray,
        layer_features: List[LayerFeatures],
        trace: dict | None = None,
    ) -> np.ndarray:
        """Full calibration path over a whole-image forward's layer features."""
        num_layers = len(layer_features)
        for layer in self.cfg.selected_layers:
            if not 1 <= layer <= num_layers:
                raise ConfigError(
                    f"selected layer {layer} outside [1..{num_layers}]"
                )
        enhanced = []
        for layer, sigma in zip(self.cfg.selected_layers, self.cfg.sigmas):
            grid = layer_features[layer - 1].spatial
            kernel = make_frequency_kernel(grid.shape[0], grid.shape[1], sigma)
            enhanced.append(low_frequency_enhance(grid, kernel, self.cfg.conv_weights))
        fused = self.integrate_semantics(proposal_embeddings, enhanced, trace)
        return self.fuse_cls(fused, layer_features[-1].cls, trace)
