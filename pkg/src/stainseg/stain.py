"""Macenko color deconvolution: optical-density transforms, stain-basis
estimation, per-pixel saturation solves, and normalization of a source image
to a reference stain profile.

Images are numpy arrays throughout: RGB images are (H, W, 3) uint8, OD images
and saturation maps are float64. All operations are pure functions and
deterministic, so they are safe to call concurrently on distinct images.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStainCloud, ParseError, SingularBasis, TooFewTissuePixels

# Minimum number of above-threshold pixels required for basis estimation.
MIN_TISSUE_PIXELS = 100

# Relative second-eigenvalue floor below which the OD cloud counts as rank-1.
_DEGENERATE_EIGENVALUE_RATIO = 1e-9

# Two stain vectors closer than this in |cosine| are treated as parallel.
_PARALLEL_COS_LIMIT = 1.0 - 1e-6


@dataclass(frozen=True)
class NormalizationParams:
    """Constants of the Macenko procedure.

    io is the background transmitted intensity on the 8-bit scale, beta the
    OD threshold separating tissue from background, alpha the robust angle
    percentile (1.0 means the 1st/99th percentiles) and sat_percentile the
    percentile used to scale stain saturations.
    """

    io: float = 255.0
    beta: float = 0.15
    alpha: float = 1.0
    sat_percentile: float = 99.0

    def __post_init__(self):
        if not 1.0 <= self.io <= 255.0:
            raise ValueError(f"io must be in [1, 255], got {self.io}")
        if not 0.0 < self.beta < self.od_max:
            raise ValueError(f"beta must be in (0, {self.od_max:.4g}), got {self.beta}")
        if not 0.0 < self.alpha < 50.0:
            raise ValueError(f"alpha must be in (0, 50), got {self.alpha}")
        if not 50.0 < self.sat_percentile <= 100.0:
            raise ValueError(
                f"sat_percentile must be in (50, 100], got {self.sat_percentile}"
            )

    @property
    def od_max(self) -> float:
        """Largest reachable OD value, -log10(1/io)."""
        return math.log10(self.io)


@dataclass(frozen=True)
class StainBasis:
    """Unit stain vectors in OD space, hematoxylin before eosin.

    The ordering is deterministic: v_h is the vector with the smaller red
    component; if the red components differ by less than 1e-9 the one with
    the smaller green component is hematoxylin.
    """

    v_h: np.ndarray
    v_e: np.ndarray

    def __post_init__(self):
        for name, v in (("v_h", self.v_h), ("v_e", self.v_e)):
            arr = np.asarray(v, dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
            if abs(np.linalg.norm(arr) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be unit-norm")
            if np.any(arr < 0.0):
                raise ValueError(f"{name} must be componentwise non-negative")
        cos = float(np.dot(self.v_h, self.v_e))
        if abs(cos) >= _PARALLEL_COS_LIMIT:
            raise SingularBasis(f"stain vectors are parallel (cos={cos:.9f})")
        if not _h_before_e(self.v_h, self.v_e):
            raise ValueError("vectors violate the H-before-E ordering invariant")

    @property
    def matrix(self) -> np.ndarray:
        """Stain vectors as columns of a 3x2 matrix."""
        return np.stack([self.v_h, self.v_e], axis=1)

    @classmethod
    def from_unordered(cls, a: np.ndarray, b: np.ndarray) -> "StainBasis":
        """Build a basis from two unit vectors, applying the H/E ordering."""
        if _h_before_e(a, b):
            return cls(v_h=a, v_e=b)
        return cls(v_h=b, v_e=a)


def _h_before_e(a: np.ndarray, b: np.ndarray) -> bool:
    """True when (a, b) already satisfies the H-before-E ordering."""
    if abs(float(a[0]) - float(b[0])) >= 1e-9:
        return float(a[0]) < float(b[0])
    return float(a[1]) <= float(b[1])


@dataclass(frozen=True)
class ReferenceProfile:
    """Target of normalization: a stain basis plus per-stain saturation scale.

    max_sat holds the sat_percentile saturations of (sH, sE) measured on the
    reference image.
    """

    basis: StainBasis
    max_sat: np.ndarray
    source_id: str = ""
    params: NormalizationParams = field(default_factory=NormalizationParams)

    def __post_init__(self):
        arr = np.asarray(self.max_sat, dtype=np.float64)
        object.__setattr__(self, "max_sat", arr)
        if arr.shape != (2,):
            raise ValueError(f"max_sat must be a 2-vector, got shape {arr.shape}")
        if np.any(arr <= 0.0):
            raise ValueError("max_sat must be componentwise positive")


def _log_scale(log_base: float) -> float:
    """Factor converting base-10 OD values to base-`log_base` OD values."""
    return math.log(10.0) / math.log(log_base)


def rgb_to_od(img: np.ndarray, params: NormalizationParams, log_base: float = 10.0) -> np.ndarray:
    """Convert an 8-bit RGB image to optical density.

    Per channel od = -log_base(max(v, 1) / io); the clamp removes the v=0
    singularity. The log base is configurable only to demonstrate that it
    cancels across the full normalization pipeline.
    """
    v = np.maximum(np.asarray(img, dtype=np.float64), 1.0)
    return -np.log(v / params.io) / math.log(log_base)


def od_to_rgb(od: np.ndarray, params: NormalizationParams, log_base: float = 10.0) -> np.ndarray:
    """Convert optical density back to 8-bit RGB.

    v = clamp(round(io * base^(-od)), 0, 255) with round-half-up, fixed for
    bit-reproducibility.
    """
    v = params.io * np.power(log_base, -np.asarray(od, dtype=np.float64))
    return np.clip(np.floor(v + 0.5), 0.0, 255.0).astype(np.uint8)


def tissue_mask(od: np.ndarray, params: NormalizationParams, log_base: float = 10.0) -> np.ndarray:
    """Boolean mask of pixels whose max-channel OD exceeds beta.

    beta is specified in base-10 OD units and rescaled for other bases so the
    same pixels are selected regardless of the base.
    """
    beta = params.beta * _log_scale(log_base)
    return np.max(np.abs(od), axis=-1) > beta


def estimate_stain_basis(
    od: np.ndarray, params: NormalizationParams, log_base: float = 10.0
) -> StainBasis:
    """Estimate the two-stain basis of an OD image (Macenko procedure).

    Tissue pixels (max-channel OD above beta) are projected onto the plane of
    the two dominant eigenvectors of their second-moment matrix; the alpha
    and (100 - alpha) percentile angles within that plane give the robust
    extreme directions, which are mapped back to 3-space, made non-negative,
    normalized, and ordered H before E.

    Raises:
        TooFewTissuePixels: fewer than MIN_TISSUE_PIXELS pixels above beta.
        DegenerateStainCloud: the pixel cloud is effectively single-stain.
    """
    flat = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    tissue = flat[np.max(np.abs(flat), axis=1) > params.beta * _log_scale(log_base)]
    if tissue.shape[0] < MIN_TISSUE_PIXELS:
        raise TooFewTissuePixels(
            f"{tissue.shape[0]} tissue pixels, need at least {MIN_TISSUE_PIXELS}"
        )

    # Eigen-decomposition of the 3x3 second-moment matrix is equivalent to an
    # SVD of the pixel matrix for direction recovery but needs O(1) memory.
    moment = tissue.T @ tissue / tissue.shape[0]
    eigvals, eigvecs = np.linalg.eigh(moment)
    if eigvals[1] < _DEGENERATE_EIGENVALUE_RATIO * eigvals[2]:
        raise DegenerateStainCloud(
            f"second eigenvalue {eigvals[1]:.3e} below "
            f"{_DEGENERATE_EIGENVALUE_RATIO} x dominant {eigvals[2]:.3e}"
        )

    plane = eigvecs[:, [2, 1]].copy()
    # Orient the dominant axis toward the cloud so projections fall in a
    # half-plane and angle percentiles are well defined; orient the second
    # axis deterministically as well.
    proj = tissue @ plane
    if proj[:, 0].sum() < 0.0:
        plane[:, 0] = -plane[:, 0]
        proj[:, 0] = -proj[:, 0]
    if plane[0, 1] < 0.0:
        plane[:, 1] = -plane[:, 1]
        proj[:, 1] = -proj[:, 1]

    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [params.alpha, 100.0 - params.alpha])
    v_lo = plane @ np.array([math.cos(lo), math.sin(lo)])
    v_hi = plane @ np.array([math.cos(hi), math.sin(hi)])
    return StainBasis.from_unordered(_positive_unit(v_lo), _positive_unit(v_hi))


def _positive_unit(v: np.ndarray) -> np.ndarray:
    """Flip, clamp, and renormalize a direction into the non-negative octant."""
    if v.sum() < 0.0:
        v = -v
    v = np.clip(v, 0.0, None)
    norm = np.linalg.norm(v)
    if norm <= 0.0:
        raise DegenerateStainCloud("extreme direction collapsed to zero")
    return v / norm


def compute_saturations(od: np.ndarray, basis: StainBasis, clamp: bool = True) -> np.ndarray:
    """Per-pixel least-squares stain saturations, shape (H, W, 2).

    Solves od = sH * v_h + sE * v_e in the least-squares sense via the 2x2
    normal equations. Negative solutions are clamped to 0 unless clamp is
    False (the raw solution is needed to verify the in-plane residual).
    """
    od = np.asarray(od, dtype=np.float64)
    v = basis.matrix
    gram = v.T @ v
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] * gram[1, 0]
    if det < 1e-12:
        raise SingularBasis(f"normal-equations determinant {det:.3e} is singular")
    gram_inv = np.array(
        [[gram[1, 1], -gram[0, 1]], [-gram[1, 0], gram[0, 0]]], dtype=np.float64
    ) / det
    sats = od.reshape(-1, 3) @ v @ gram_inv.T
    if clamp:
        np.maximum(sats, 0.0, out=sats)
    return sats.reshape(od.shape[:-1] + (2,))


def build_reference_profile(
    img: np.ndarray,
    params: NormalizationParams,
    source_id: str = "",
    log_base: float = 10.0,
) -> ReferenceProfile:
    """Estimate a reference profile (basis + percentile saturations) from an image."""
    od = rgb_to_od(img, params, log_base)
    basis = estimate_stain_basis(od, params, log_base)
    sats = compute_saturations(od, basis)
    max_sat = np.percentile(sats.reshape(-1, 2), params.sat_percentile, axis=0)
    if np.any(max_sat <= 0.0):
        raise DegenerateStainCloud(
            f"percentile saturation is zero per stain: {max_sat.tolist()}"
        )
    return ReferenceProfile(basis=basis, max_sat=max_sat, source_id=source_id, params=params)


def normalize_to_reference(
    src: np.ndarray,
    ref: ReferenceProfile,
    params: NormalizationParams,
    log_base: float = 10.0,
) -> np.ndarray:
    """Normalize a source image to a reference profile (Macenko method).

    The source's own basis is estimated, its saturations are scaled per stain
    by ref.max_sat / src_max_sat, and the image is rebuilt in the reference
    basis. Stain-estimation errors propagate; callers that prefer passthrough
    behavior catch them (see augment.apply_augmentation).
    """
    od = rgb_to_od(src, params, log_base)
    src_basis = estimate_stain_basis(od, params, log_base)
    sats = compute_saturations(od, src_basis)
    src_max = np.percentile(sats.reshape(-1, 2), params.sat_percentile, axis=0)
    if np.any(src_max <= 0.0):
        raise DegenerateStainCloud(
            f"source percentile saturation is zero per stain: {src_max.tolist()}"
        )
    scaled = sats * (ref.max_sat / src_max)
    od_out = scaled @ ref.basis.matrix.T
    return od_to_rgb(od_out, params, log_base)


# ---------------------------------------------------------------------------
# Reference-profile JSON persistence.
#
# Floats are printed at 17 significant digits so profiles round-trip
# bit-exactly; json.dumps would use the shortest repr instead, so the writer
# is hand-rolled for this small fixed schema.

def _f17(x: float) -> str:
    return format(float(x), ".17g")


def profile_to_json(profile: ReferenceProfile) -> str:
    """Serialize a ReferenceProfile to its JSON interchange form."""
    p = profile.params
    vh = ", ".join(_f17(x) for x in profile.basis.v_h)
    ve = ", ".join(_f17(x) for x in profile.basis.v_e)
    ms = ", ".join(_f17(x) for x in profile.max_sat)
    return (
        "{\n"
        f'  "source_id": {json.dumps(profile.source_id)},\n'
        f'  "vH": [{vh}],\n'
        f'  "vE": [{ve}],\n'
        f'  "max_sat": [{ms}],\n'
        f'  "params": {{"Io": {_f17(p.io)}, "beta": {_f17(p.beta)}, '
        f'"alpha": {_f17(p.alpha)}, "sat_percentile": {_f17(p.sat_percentile)}}}\n'
        "}\n"
    )


def profile_from_json(text: str) -> ReferenceProfile:
    """Parse a ReferenceProfile from its JSON interchange form."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"reference profile is not valid JSON: {exc}") from exc
    try:
        params = NormalizationParams(
            io=float(doc["params"]["Io"]),
            beta=float(doc["params"]["beta"]),
            alpha=float(doc["params"]["alpha"]),
            sat_percentile=float(doc["params"]["sat_percentile"]),
        )
        basis = StainBasis(
            v_h=np.array(doc["vH"], dtype=np.float64),
            v_e=np.array(doc["vE"], dtype=np.float64),
        )
        return ReferenceProfile(
            basis=basis,
            max_sat=np.array(doc["max_sat"], dtype=np.float64),
            source_id=str(doc.get("source_id", "")),
            params=params,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"reference profile JSON malformed: {exc}") from exc
