"""Synthetic open-vocabulary segmentation mechanisms and evaluation engine."""

from .contextual_shift import (
    CleanContext,
    CSConfig,
    MaskProposal,
    background_patches,
    build_clean_context,
    crop_and_mask,
    cs_forward,
    replacement_plan,
)
from .encoder import EncoderConfig, LayerFeatures, ToyEncoder
from .errors import (
    ConfigError,
    ContractError,
    DegenerateEmbeddingError,
    EmptyMaskError,
    OvscalError,
    ShapeError,
)
from .metrics import (
    IGNORE,
    AssociationMatrix,
    ConfusionCounts,
    accumulate_confusion,
    balance_factor,
    iou,
    load_association,
    report,
    sg_iou,
)
from .pipeline import (
    EnsembleConfig,
    NoiseConfig,
    ProposalSet,
    TextBank,
    assign_labels,
    build_text_bank,
    classify_embedding,
    ensemble_scores,
    run_pipeline,
    synth_proposals,
)
from .scenes import DEMO_CLASS_NAMES, DEMO_RELATIONS, SceneConfig, generate_scene
from .sim import (
    FrequencyKernel,
    SemanticIntegrator,
    SIMConfig,
    low_frequency_enhance,
    make_frequency_kernel,
)

__all__ = [name for name in dir() if not name.startswith("_")]
