"""Seeded non-deterministic train-time stain normalization.

Each training image is routed either to passthrough (default probability 0.5)
or to normalization against one of R reference profiles, the remaining
probability split evenly. Sampling uses one counter-based RNG stream per
(seed, epoch, item) so parallel data loading stays order-independent and
reruns are bit-identical.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StainsegError
from .stain import NormalizationParams, ReferenceProfile, normalize_to_reference

log = logging.getLogger(__name__)

# Recorded in plan JSON so draw streams stay auditable.
RNG_ALGORITHM = "philox4x64/seedseq(seed,epoch,item)"


@dataclass
class AugmentationPlan:
    """Discrete distribution over {passthrough, normalize-to-ref_0..R-1}."""

    references: list[ReferenceProfile]
    p_passthrough: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.references:
            raise ValueError("plan needs at least one reference profile")
        if not 0.0 <= self.p_passthrough <= 1.0:
            raise ValueError(f"p_passthrough must be in [0, 1], got {self.p_passthrough}")

    @property
    def branch_probabilities(self) -> np.ndarray:
        """[p_passthrough, per-reference...]; sums to 1."""
        r = len(self.references)
        per_ref = (1.0 - self.p_passthrough) / r
        return np.array([self.p_passthrough] + [per_ref] * r)


@dataclass(frozen=True)
class AugmentationDraw:
    """One sampled branch: reference_index is None for passthrough."""

    reference_index: int | None
    rng_stream_id: str = ""

    @property
    def is_passthrough(self) -> bool:
        return self.reference_index is None


def item_rng(seed: int, epoch: int, item: int) -> np.random.Generator:
    """Independent counter-based stream for one (seed, epoch, item) triple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, epoch, item))))


def sample_branch(
    plan: AugmentationPlan, rng: np.random.Generator, stream_id: str = ""
) -> AugmentationDraw:
    """Draw one branch from the plan, advancing rng deterministically.

    A single uniform is partitioned: [0, p) is passthrough, the rest splits
    evenly over the references, so branch frequencies match the plan exactly.
    """
    u = float(rng.random())
    p = plan.p_passthrough
    if u < p or p >= 1.0:
        return AugmentationDraw(reference_index=None, rng_stream_id=stream_id)
    r = len(plan.references)
    index = min(int((u - p) * r / (1.0 - p)), r - 1)
    return AugmentationDraw(reference_index=index, rng_stream_id=stream_id)


def draw_for_item(plan: AugmentationPlan, epoch: int, item: int) -> AugmentationDraw:
    """Sample the branch for one (epoch, item) from its dedicated stream."""
    stream_id = f"seed={plan.seed}/epoch={epoch}/item={item}"
    return sample_branch(plan, item_rng(plan.seed, epoch, item), stream_id)


def apply_augmentation(
    img: np.ndarray,
    draw: AugmentationDraw,
    plan: AugmentationPlan,
    params: NormalizationParams,
    fallback_passthrough: bool = True,
) -> np.ndarray:
    """Apply a sampled branch: passthrough returns the image unchanged.

    Normalization failure on a pathological tile falls back to passthrough
    with a warning by default; training must not abort on one bad tile. Pass
    fallback_passthrough=False to propagate the error instead.
    """
    if draw.is_passthrough:
        return img
    index = draw.reference_index
    if not 0 <= index < len(plan.references):
        raise ValueError(f"draw reference index {index} outside plan (R={len(plan.references)})")
    try:
        return normalize_to_reference(img, plan.references[index], params)
    except StainsegError as exc:
        if not fallback_passthrough:
            raise
        log.warning("normalization failed (%s); falling back to passthrough", exc)
        warnings.warn(f"normalization failed, passthrough used: {exc}", stacklevel=2)
        return img


def materialize_offline(
    images: list[np.ndarray],
    ref: ReferenceProfile,
    params: NormalizationParams,
    mode: str,
    ids: list[str] | None = None,
) -> list[np.ndarray]:
    """Materialize the offline normalization datasets.

    mode "replace" normalizes every image to ref; mode "extend" returns the
    originals followed by their normalized copies (size doubled). A failed
    image raises a StainsegError naming the image id.
    """
    if mode not in ("replace", "extend"):
        raise ValueError(f"mode must be 'replace' or 'extend', got {mode!r}")
    ids = ids if ids is not None else [str(i) for i in range(len(images))]
    if len(ids) != len(images):
        raise ValueError("ids and images must have the same length")
    normalized: list[np.ndarray] = []
    for image_id, img in zip(ids, images):
        try:
            normalized.append(normalize_to_reference(img, ref, params))
        except StainsegError as exc:
            raise type(exc)(f"image {image_id!r}: {exc}") from exc
    if mode == "replace":
        return normalized
    return list(images) + normalized


# ---------------------------------------------------------------------------
# Plan JSON: {p_passthrough, references: [profile paths], seed, rng_algorithm}

def plan_to_json(plan: AugmentationPlan, reference_paths: list[str | Path]) -> str:
    if len(reference_paths) != len(plan.references):
        raise ValueError("one path per reference profile required")
    return json.dumps(
        {
            "p_passthrough": plan.p_passthrough,
            "references": [str(p) for p in reference_paths],
            "seed": plan.seed,
            "rng_algorithm": RNG_ALGORITHM,
        },
        indent=2,
    ) + "\n"


def plan_from_json(text: str, base_dir: str | Path | None = None) -> AugmentationPlan:
    """Load a plan, reading each referenced profile JSON from disk."""
    from .stain import profile_from_json

    doc = json.loads(text)
    base = Path(base_dir) if base_dir is not None else Path(".")
    refs = []
    for p in doc["references"]:
        path = Path(p)
        if not path.is_absolute():
            path = base / path
        refs.append(profile_from_json(path.read_text()))
    return AugmentationPlan(
        references=refs,
        p_passthrough=float(doc["p_passthrough"]),
        seed=int(doc["seed"]),
    )
