"""Stain normalization, test-time ensembling, and nuclei instance scoring.

The package wraps a pluggable predictor (precomputed map files or an
external command) with everything around it: Macenko-style stain
estimation and normalization, contrast-based reference selection, seeded
train-time normalization draws, the weighted test-time ensemble, watershed
post-processing, and Dice/AJI/PQ evaluation.
"""

from .augment import AugmentationDraw, AugmentationPlan, apply_augmentation, sample_branch
from .errors import StainsegError
from .metrics import MetricsReport, aji, dice, pq, score_pair
from .postprocess import PostprocessParams, instances_from_maps
from .stain import (
    NormalizationParams,
    ReferenceProfile,
    StainBasis,
    build_reference_profile,
    estimate_stain_basis,
    normalize_to_reference,
    od_to_rgb,
    rgb_to_od,
)
from .tta import EnsembleSpec, ensemble, make_variants, pad_white, run_ttsn

__version__ = "0.1.0"

__all__ = [
    "AugmentationDraw",
    "AugmentationPlan",
    "EnsembleSpec",
    "MetricsReport",
    "NormalizationParams",
    "PostprocessParams",
    "ReferenceProfile",
    "StainBasis",
    "StainsegError",
    "aji",
    "apply_augmentation",
    "build_reference_profile",
    "dice",
    "ensemble",
    "estimate_stain_basis",
    "instances_from_maps",
    "make_variants",
    "normalize_to_reference",
    "od_to_rgb",
    "pad_white",
    "pq",
    "rgb_to_od",
    "run_ttsn",
    "sample_branch",
    "score_pair",
]
