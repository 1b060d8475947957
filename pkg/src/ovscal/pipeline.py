"""Two-stage assembly: synthetic proposals, embedding calibration, masked
sub-image classification, score ensembling and per-pixel label assignment.

The text bank is a seeded stand-in for a language tower: unit-norm random
vectors, with hierarchically related classes built from their parents'
vectors plus noise so parent/child confusions actually occur.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .contextual_shift import (
    CSConfig,
    MaskProposal,
    build_clean_context,
    crop_and_mask,
    cs_forward,
)
from .encoder import ToyEncoder
from .errors import ConfigError, ContractError, DegenerateEmbeddingError, ShapeError
from .metrics import IGNORE, AssociationMatrix
from .seeding import keyed_rng
from .sim import SemanticIntegrator, SIMConfig

_TAG_BANK = 21
_TAG_PROPOSALS = 22


@dataclass
class TextBank:
    class_names: List[str]
    vectors: np.ndarray  # (K, C), unit rows
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]


@dataclass
class EnsembleConfig:
    lam: float = 0.7  # weight of the sub-image (CLIP-branch) scores
    temperature: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass
class ProposalSet:
    masks: np.ndarray  # (N, H, W) in {0, 1}
    embeddings: np.ndarray  # (N, C)
    class_ids: np.ndarray  # (N,) true GT class per proposal (audit only)


@dataclass
class NoiseConfig:
    mask_flip_rate: float = 0.0
    embed_noise: float = 0.0
    # Probability that a proposal of a class with related parents is
    # embedded as its first parent instead of itself.
    parent_swap_rate: float = 0.0


def build_text_bank(
    class_names: Sequence[str],
    hierarchy: Optional[AssociationMatrix] = None,
    seed: int = 0,
    dim: int = 64,
    relation_noise: float = 0.3,
) -> TextBank:
    """Seeded unit vectors; related classes get normalized(mean of related
    rows + noise) so their cosine to each parent stays >= 0.5."""
    names = list(class_names)
    if len(set(names)) != len(names):
        raise ConfigError("duplicate class names in text bank")
    k = len(names)
    if k < 1:
        raise ConfigError("need at least one class")
    rng = keyed_rng(seed, _TAG_BANK)
    base = rng.standard_normal((k, dim))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    vectors = base.copy()
    if hierarchy is not None:
        if hierarchy.num_classes != k:
            raise ConfigError("hierarchy size does not match class count")
        for q in range(k):
            related = hierarchy.related(q)
            if related.size == 0:
                continue
            noise = rng.standard_normal(dim)
            noise *= relation_noise / np.sqrt(dim)
            v = base[related].mean(axis=0) + noise
            vectors[q] = v / np.linalg.norm(v)
    return TextBank(class_names=names, vectors=vectors, seed=seed)


def classify_embedding(
    embedding: np.ndarray, bank: TextBank, temperature: float
) -> np.ndarray:
    """softmax(cosine(e, bank rows) / temperature)."""
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != (bank.vectors.shape[1],):
        raise ShapeError(f"embedding shape {e.shape} != (C,)")
    norm = np.linalg.norm(e)
    if not np.isfinite(norm) or norm < 1e-12:
        raise DegenerateEmbeddingError("cannot classify a zero/non-finite embedding")
    cos = bank.vectors @ (e / norm)
    z = cos / temperature
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def ensemble_scores(
    model_probs: np.ndarray, clip_probs: np.ndarray, lam: float
) -> np.ndarray:
    """Geometric ensemble: combined ~ model^(1-lam) * clip^lam, renormalized."""
    model_probs = np.asarray(model_probs, dtype=np.float64)
    clip_probs = np.asarray(clip_probs, dtype=np.float64)
    if model_probs.shape != clip_probs.shape or model_probs.ndim != 1:
        raise ShapeError("probability vectors must be 1-D and equally sized")
    for name, p in (("model", model_probs), ("clip", clip_probs)):
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-4:
            raise ContractError(f"{name} scores are not a probability vector")
    if lam == 0.0:
        return model_probs.copy()
    if lam == 1.0:
        return clip_probs.copy()
    combined = model_probs ** (1.0 - lam) * clip_probs**lam
    return combined / combined.sum()


def assign_labels(masks: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Per pixel, sum each covering proposal's class probabilities and take
    the argmax (ties to the smallest class id). Uncovered pixels -> IGNORE."""
    masks = np.asarray(masks)
    probs = np.asarray(probs, dtype=np.float64)
    if masks.ndim != 3 or probs.ndim != 2 or masks.shape[0] != probs.shape[0]:
        raise ShapeError("masks must be (N, H, W) and probs (N, K)")
    scores = np.einsum("nhw,nk->hwk", masks.astype(np.float64), probs)
    labels = scores.argmax(axis=-1).astype(np.uint16)
    covered = masks.any(axis=0)
    labels[~covered] = IGNORE
    return labels


def _boundary(region: np.ndarray) -> np.ndarray:
    """Pixels adjacent (4-conn) to the opposite value, on either side."""
    struct = ndimage.generate_binary_structure(2, 1)
    dil = ndimage.binary_dilation(region, struct)
    ero = ndimage.binary_erosion(region, struct)
    return dil & ~ero


def synth_proposals(
    gt: np.ndarray,
    bank: TextBank,
    noise: NoiseConfig,
    seed: int,
    hierarchy: Optional[AssociationMatrix] = None,
) -> ProposalSet:
    """One proposal per GT class present: its region (with optional
    boundary-pixel flips) and the class's bank vector (with optional noise
    or parent-vector substitution)."""
    gt = np.asarray(gt)
    classes = sorted(int(c) for c in np.unique(gt) if c != IGNORE)
    rng = keyed_rng(seed, _TAG_PROPOSALS)
    dim = bank.vectors.shape[1]
    masks, embeddings, ids = [], [], []
    for c in classes:
        region = gt == c
        mask = region.copy()
        if noise.mask_flip_rate > 0:
            bidx = np.nonzero(_boundary(region))
            flips = rng.random(bidx[0].size) < noise.mask_flip_rate
            mask[bidx[0][flips], bidx[1][flips]] ^= True
            if not mask.any():
                mask = region.copy()
        embed_class = c
        if noise.parent_swap_rate > 0 and hierarchy is not None:
            related = hierarchy.related(c)
            if related.size > 0 and rng.random() < noise.parent_swap_rate:
                embed_class = int(related[0])
        emb = bank.vectors[embed_class].copy()
        if noise.embed_noise > 0:
            emb = emb + rng.normal(0.0, noise.embed_noise, dim)
        masks.append(mask.astype(np.uint8))
        embeddings.append(emb)
        ids.append(c)
    return ProposalSet(
        masks=np.stack(masks),
        embeddings=np.stack(embeddings),
        class_ids=np.asarray(ids, dtype=np.int64),
    )


@dataclass
class PipelineAudit:
    proposals: ProposalSet = None
    calibrated_embeddings: np.ndarray = None
    model_probs: np.ndarray = None
    clip_probs: np.ndarray = None
    combined_probs: np.ndarray = None
    records: List[dict] = field(default_factory=list)


def run_pipeline(
    image: np.ndarray,
    gt: np.ndarray,
    bank: TextBank,
    encoder: ToyEncoder,
    sim_cfg: SIMConfig,
    cs_cfg: CSConfig,
    ens_cfg: EnsembleConfig,
    noise: NoiseConfig,
    seed: int,
    hierarchy: Optional[AssociationMatrix] = None,
) -> tuple[np.ndarray, PipelineAudit]:
    """Full per-image pipeline; returns the predicted label map and an
    audit record of every stage's outputs."""
    audit = PipelineAudit()
    proposals = synth_proposals(gt, bank, noise, seed, hierarchy)
    audit.proposals = proposals
    n = proposals.masks.shape[0]

    feats = encoder.forward(image)
    integrator = SemanticIntegrator(sim_cfg, encoder.cfg.embed_dim)
    calibrated = integrator.calibrate(proposals.embeddings, feats)
    audit.calibrated_embeddings = calibrated
    model_probs = np.stack(
        [classify_embedding(calibrated[i], bank, ens_cfg.temperature) for i in range(n)]
    )

    clean = build_clean_context(encoder, image)
    clip_probs = np.empty_like(model_probs)
    for i in range(n):
        prop = MaskProposal(mask=proposals.masks[i], proposal_id=i)
        sub, sub_mask = crop_and_mask(image, prop, cs_cfg)
        result = cs_forward(sub, sub_mask, clean, cs_cfg, encoder, proposal_id=i)
        clip_probs[i] = classify_embedding(result.cls_final, bank, ens_cfg.temperature)

    combined = np.stack(
        [ensemble_scores(model_probs[i], clip_probs[i], ens_cfg.lam) for i in range(n)]
    )
    audit.model_probs = model_probs
    audit.clip_probs = clip_probs
    audit.combined_probs = combined
    audit.records = [
        {
            "proposal": i,
            "true_class": int(proposals.class_ids[i]),
            "model_probs": model_probs[i].tolist(),
            "clip_probs": clip_probs[i].tolist(),
            "combined_probs": combined[i].tolist(),
        }
        for i in range(n)
    ]
    labels = assign_labels(proposals.masks, combined)
    return labels, audit
