"""Deterministic test-time stain normalization and morphological TTA.

A test image is expanded into variants: the original, one stain-normalized
copy per reference profile, and optionally 90-degree-rotated / horizontally
flipped copies of each. A predictor runs on every variant and the prediction
maps are merged by a weighted average (weight 50 for the original, 7.14 per
stain-normalized variant, morphological sub-variants splitting their stain
variant's weight equally).
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .errors import (
    DimensionMismatch,
    EmptyInput,
    PredictorFailure,
    StainsegError,
    TargetTooSmall,
)
from .stain import NormalizationParams, ReferenceProfile, normalize_to_reference

log = logging.getLogger(__name__)

# Output channel layout every predictor must honor.
MAP_CHANNELS = ("probability", "distance")


@dataclass
class EnsembleSpec:
    """Variant set and weights for test-time ensembling."""

    references: list[ReferenceProfile] = field(default_factory=list)
    weight_original: float = 50.0
    weight_per_reference: float = 7.14
    rot90: bool = False
    hflip: bool = False

    def __post_init__(self):
        if self.weight_original <= 0.0 or self.weight_per_reference <= 0.0:
            raise ValueError("ensemble weights must be positive")

    @property
    def morph_factor(self) -> int:
        """Number of morphological sub-variants per stain variant (1, 2, or 4)."""
        return (2 if self.rot90 else 1) * (2 if self.hflip else 1)


@dataclass(frozen=True)
class MorphTransform:
    """Forward rot90 / horizontal-flip transform with an exact inverse."""

    rot90: bool = False
    hflip: bool = False

    def apply(self, arr: np.ndarray) -> np.ndarray:
        out = arr
        if self.rot90:
            out = np.rot90(out, 1, axes=(0, 1))
        if self.hflip:
            out = out[:, ::-1]
        return np.ascontiguousarray(out)

    def invert(self, arr: np.ndarray) -> np.ndarray:
        out = arr
        if self.hflip:
            out = out[:, ::-1]
        if self.rot90:
            out = np.rot90(out, -1, axes=(0, 1))
        return np.ascontiguousarray(out)

    @property
    def suffix(self) -> str:
        return {"": "", "r": "_r90", "h": "_hf", "rh": "_r90hf"}[
            ("r" if self.rot90 else "") + ("h" if self.hflip else "")
        ]


@dataclass(frozen=True)
class Variant:
    variant_id: str
    image: np.ndarray
    transform: MorphTransform
    weight: float


@dataclass(frozen=True)
class CropRecord:
    """Original dimensions of an image before white-padding."""

    width: int
    height: int


def pad_white(img: np.ndarray, target_w: int, target_h: int) -> tuple[np.ndarray, CropRecord]:
    """Place an image at the top-left of a white target_w x target_h canvas."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if target_w < w or target_h < h:
        raise TargetTooSmall(f"cannot pad {w}x{h} image to {target_w}x{target_h}")
    padded = np.full((target_h, target_w) + img.shape[2:], 255, dtype=img.dtype)
    padded[:h, :w] = img
    return padded, CropRecord(width=w, height=h)


def crop_to_record(arr: np.ndarray, record: CropRecord) -> np.ndarray:
    """Undo pad_white: take the original top-left region back out."""
    return np.ascontiguousarray(arr[: record.height, : record.width])


def _morph_transforms(spec: EnsembleSpec) -> list[MorphTransform]:
    out = [MorphTransform()]
    if spec.rot90:
        out.append(MorphTransform(rot90=True))
    if spec.hflip:
        out.append(MorphTransform(hflip=True))
    if spec.rot90 and spec.hflip:
        out.append(MorphTransform(rot90=True, hflip=True))
    return out


def canonical_variant_ids(spec: EnsembleSpec) -> list[str]:
    """All variant ids in the fixed accumulation order (stain-major)."""
    ids = []
    for stain_key in ["orig"] + [f"ref{i}" for i in range(len(spec.references))]:
        for t in _morph_transforms(spec):
            ids.append(stain_key + t.suffix)
    return ids


def variant_weight(variant_id: str, spec: EnsembleSpec) -> float:
    """Weight of one variant: stain-variant weight split over its morphs."""
    stain_key = variant_id.split("_", 1)[0]
    if stain_key == "orig":
        base = spec.weight_original
    elif stain_key.startswith("ref") and stain_key[3:].isdigit():
        index = int(stain_key[3:])
        if index >= len(spec.references):
            raise ValueError(f"variant {variant_id!r} references profile {index}, spec has {len(spec.references)}")
        base = spec.weight_per_reference
    else:
        raise ValueError(f"unrecognized variant id {variant_id!r}")
    return base / spec.morph_factor


def make_variants(
    img: np.ndarray,
    spec: EnsembleSpec,
    params: NormalizationParams,
    drop_failed: bool = False,
) -> list[Variant]:
    """Expand one image into its stain and morphological variants.

    A stain variant whose normalization fails is dropped with a warning when
    drop_failed is set (its weight disappears and the ensemble renormalizes);
    otherwise the error propagates.
    """
    stain_images: list[tuple[str, np.ndarray]] = [("orig", img)]
    for i, ref in enumerate(spec.references):
        try:
            stain_images.append((f"ref{i}", normalize_to_reference(img, ref, params)))
        except StainsegError as exc:
            if not drop_failed:
                raise
            log.warning("variant ref%d dropped: %s", i, exc)
    variants = []
    for stain_key, stain_img in stain_images:
        for t in _morph_transforms(spec):
            variants.append(
                Variant(
                    variant_id=stain_key + t.suffix,
                    image=t.apply(stain_img),
                    transform=t,
                    weight=variant_weight(stain_key + t.suffix, spec),
                )
            )
    return variants


def ensemble(maps: list[tuple[str, np.ndarray]], spec: EnsembleSpec) -> np.ndarray:
    """Weighted average of prediction maps, float64, fixed accumulation order.

    Maps arrive keyed by variant id (inverse morphological transforms already
    applied). Accumulation runs in canonical variant order regardless of the
    input ordering so permuting the list is bit-neutral. The result is
    clipped to the per-pixel envelope of the inputs, which keeps the convex-
    combination guarantee exact despite accumulation rounding.
    """
    if not maps:
        raise EmptyInput("ensemble needs at least one map")
    order = {vid: i for i, vid in enumerate(canonical_variant_ids(spec))}
    for vid, _ in maps:
        if vid not in order:
            raise ValueError(f"variant id {vid!r} not in this ensemble's variant set")
    ordered = sorted(maps, key=lambda kv: order[kv[0]])

    shape = ordered[0][1].shape
    for vid, m in ordered:
        if m.shape != shape:
            raise DimensionMismatch(
                f"variant {vid!r} map shape {m.shape} does not match {shape}"
            )

    total = sum(variant_weight(vid, spec) for vid, _ in ordered)
    acc = np.zeros(shape, dtype=np.float64)
    lo = np.full(shape, np.inf)
    hi = np.full(shape, -np.inf)
    for vid, m in ordered:
        m64 = np.asarray(m, dtype=np.float64)
        acc += (variant_weight(vid, spec) / total) * m64
        np.minimum(lo, m64, out=lo)
        np.maximum(hi, m64, out=hi)
    return np.clip(acc, lo, hi)


# ---------------------------------------------------------------------------
# Predictor boundary

class MapDirectoryPredictor:
    """Serves precomputed maps named <image_id>__<variant_id>.f32m."""

    def __init__(self, directory: str | Path, channels: int = len(MAP_CHANNELS)):
        self.directory = Path(directory)
        self.channels = channels

    def predict(self, img: np.ndarray, image_id: str, variant_id: str) -> np.ndarray:
        path = self.directory / f"{image_id}__{variant_id}.f32m"
        if not path.is_file():
            raise PredictorFailure(variant_id, f"map file not found: {path}")
        out = dataio.read_f32m(path)
        if out.shape[2] != self.channels:
            raise PredictorFailure(
                variant_id, f"{path}: expected {self.channels} channels, got {out.shape[2]}"
            )
        return out


class ExternalCommandPredictor:
    """Runs a command template with {input} and {output} placeholders.

    The variant image is written as a PNG, the command must write an F32M
    map to the output path and exit 0.
    """

    def __init__(self, template: str, channels: int = len(MAP_CHANNELS)):
        if "{input}" not in template or "{output}" not in template:
            raise ValueError("command template needs {input} and {output} placeholders")
        self.template = template
        self.channels = channels

    def predict(self, img: np.ndarray, image_id: str, variant_id: str) -> np.ndarray:
        with tempfile.TemporaryDirectory(prefix="stainseg-pred-") as tmp:
            in_path = Path(tmp) / f"{image_id}__{variant_id}.png"
            out_path = Path(tmp) / f"{image_id}__{variant_id}.f32m"
            dataio.write_rgb(img, in_path)
            argv = [
                a.replace("{input}", str(in_path)).replace("{output}", str(out_path))
                for a in shlex.split(self.template)
            ]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise PredictorFailure(
                    variant_id, f"command exited {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            if not out_path.is_file():
                raise PredictorFailure(variant_id, "command wrote no output map")
            out = dataio.read_f32m(out_path)
        if out.shape[2] != self.channels:
            raise PredictorFailure(
                variant_id, f"expected {self.channels} channels, got {out.shape[2]}"
            )
        return out


def resolve_predictor(spec_str: str):
    """Parse a predictor handle: 'map-dir:<path>' or 'cmd:<template>'."""
    if spec_str.startswith("map-dir:"):
        return MapDirectoryPredictor(spec_str[len("map-dir:"):])
    if spec_str.startswith("cmd:"):
        return ExternalCommandPredictor(spec_str[len("cmd:"):])
    raise ValueError(f"predictor must be 'map-dir:<path>' or 'cmd:<template>', got {spec_str!r}")


def run_ttsn(
    img: np.ndarray,
    predictor,
    spec: EnsembleSpec,
    params: NormalizationParams,
    image_id: str = "image",
    pad_to: int | None = None,
    drop_failed: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Full test-time pipeline for one image.

    Variants are built, white-padded to pad_to x pad_to when requested,
    predicted, cropped back, inverse-transformed and ensembled. Returns the
    merged (probability, distance) maps as float64 (H, W) arrays.

    A PredictorFailure is fatal unless drop_failed is set, in which case the
    variant is dropped and the remaining weights renormalize.
    """
    variants = make_variants(img, spec, params, drop_failed=drop_failed)
    maps: list[tuple[str, np.ndarray]] = []
    for v in variants:
        vimg = v.image
        record = None
        if pad_to is not None:
            vimg, record = pad_white(vimg, pad_to, pad_to)
        try:
            out = predictor.predict(vimg, image_id, v.variant_id)
        except PredictorFailure:
            if not drop_failed:
                raise
            log.warning("variant %s dropped: predictor failed", v.variant_id)
            continue
        if record is not None:
            out = crop_to_record(out, record)
        if out.shape[:2] != v.image.shape[:2]:
            raise DimensionMismatch(
                f"variant {v.variant_id!r}: predictor returned {out.shape[:2]}, "
                f"expected {v.image.shape[:2]}"
            )
        maps.append((v.variant_id, v.transform.invert(out)))
    merged = ensemble(maps, spec)
    return merged[:, :, 0], merged[:, :, 1]
