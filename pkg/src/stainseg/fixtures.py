"""Synthetic data for tests, demos, and the end-to-end smoke fixture.

Scenes are rendered from a known two-stain optical-density model: nuclei as
disks carrying mostly the first stain, a tissue wash of the second stain
everywhere. Rendering the test split with a rotated stain pair produces a
color shift that a fixed predictor calibrated on the training stains
handles poorly, which is exactly the situation the test-time normalization
ensemble is meant to repair.

The stain-prior mock predictor lives here too: it projects an image onto a
stored reference basis and maps the first-stain saturation to a pseudo
probability, plus a per-component normalized distance transform. It is a
stand-in for a trained model with a known failure mode, not a segmenter of
any real merit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import dataio
from .dataio import DatasetManifest, ManifestEntry
from .stain import (
    NormalizationParams,
    ReferenceProfile,
    build_reference_profile,
    compute_saturations,
    od_to_rgb,
    profile_to_json,
    rgb_to_od,
)

# Fixed rendering stains (unit OD directions). The first carries nuclei,
# the second the tissue wash; red components keep them well separated.
NUCLEUS_STAIN = np.array([0.20, 0.80, 0.56])
TISSUE_STAIN = np.array([0.72, 0.53, 0.45])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def rotate_stain_pair(a: np.ndarray, b: np.ndarray, degrees: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotate both stains inside their common plane by the same angle.

    Components are clipped at zero afterwards so the result is still a
    plausible stain direction, then re-normalized.
    """
    a = _unit(np.asarray(a, dtype=float))
    b = _unit(np.asarray(b, dtype=float))
    u1 = a
    u2 = _unit(b - (b @ u1) * u1)
    theta = np.deg2rad(degrees)

    def rot(v: np.ndarray) -> np.ndarray:
        c1, c2 = v @ u1, v @ u2
        c1r = c1 * np.cos(theta) - c2 * np.sin(theta)
        c2r = c1 * np.sin(theta) + c2 * np.cos(theta)
        out = np.clip(c1r * u1 + c2r * u2, 0.0, None)
        return _unit(out)

    return rot(a), rot(b)


def render_scene(
    rng: np.random.Generator,
    size: int = 64,
    n_nuclei: int = 6,
    nucleus_stain: np.ndarray = NUCLEUS_STAIN,
    tissue_stain: np.ndarray = TISSUE_STAIN,
    params: NormalizationParams | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One synthetic tile: RGB image plus ground-truth instance labels.

    Nuclei are disks; a deliberately close pair is placed first so every
    scene contains at least one touching boundary for the watershed to cut.
    Overlap resolves to the nearest center, radius-scaled.
    """
    params = params or NormalizationParams()
    yy, xx = np.mgrid[0:size, 0:size]

    centers: list[tuple[float, float]] = []
    radii: list[float] = []
    margin = 6
    # Touching pair around a random anchor.
    r0 = rng.uniform(5.0, 7.0)
    ax = rng.uniform(margin + 2 * r0, size - margin - 2 * r0)
    ay = rng.uniform(margin + r0, size - margin - r0)
    gap = rng.uniform(1.4, 1.7)
    centers += [(ay, ax - r0 * gap / 2), (ay, ax + r0 * gap / 2)]
    radii += [r0, r0]
    # Remaining nuclei rejection-sampled away from existing ones.
    attempts = 0
    while len(centers) < n_nuclei and attempts < 400:
        attempts += 1
        r = rng.uniform(4.0, 7.0)
        cy = rng.uniform(margin, size - margin)
        cx = rng.uniform(margin, size - margin)
        if all((cy - y) ** 2 + (cx - x) ** 2 > (r + rr - 2.0) ** 2 for (y, x), rr in zip(centers, radii)):
            centers.append((cy, cx))
            radii.append(r)

    labels = np.zeros((size, size), dtype=np.int32)
    claim = np.full((size, size), np.inf)
    for i, ((cy, cx), r) in enumerate(zip(centers, radii), start=1):
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / r
        inside = d <= 1.0
        take = inside & (d < claim)
        labels[take] = i
        claim[take] = d[take]

    sat_h = rng.uniform(0.0, 0.03, size=(size, size))
    sat_e = rng.uniform(0.25, 0.40, size=(size, size))
    sat_e[labels > 0] *= 0.6
    cores = np.zeros((size, size), dtype=bool)
    for i in range(1, len(centers) + 1):
        level = rng.uniform(0.6, 0.85)
        m = labels == i
        sat_h[m] = level + rng.normal(0.0, 0.02, size=int(m.sum()))
        cores |= m & (claim <= 0.55)

    # Texture noise lives in saturation space, never off the stain plane,
    # so a scene is an exact two-stain mixture of its rendering vectors.
    sat_h = np.clip(sat_h + rng.normal(0.0, 0.002, size=sat_h.shape), 0.0, None)
    sat_e = np.clip(sat_e + rng.normal(0.0, 0.002, size=sat_e.shape), 0.0, None)
    # Dense cores hold a fixed H:E ratio (applied after the jitter, so it
    # is exact). Besides looking like chromatin, this concentrates angular
    # mass at the extreme stain direction, which percentile-based basis
    # estimation expects real tissue to have - the counterpart of the
    # near-pure wash between nuclei.
    sat_e[cores] = sat_h[cores] * 0.12

    od = sat_h[..., None] * _unit(nucleus_stain) + sat_e[..., None] * _unit(tissue_stain)
    return od_to_rgb(od, params), labels


# ---------------------------------------------------------------------------
# Stain-prior mock predictor

def load_prior(path: str | Path) -> ReferenceProfile:
    from .stain import profile_from_json

    return profile_from_json(Path(path).read_text())


def stain_prior_predict(
    img: np.ndarray, prior: ReferenceProfile, params: NormalizationParams | None = None
) -> np.ndarray:
    """(H, W, 2) float32 probability + distance maps from a stain prior."""
    params = params or prior.params
    od = rgb_to_od(img, params)
    sats = compute_saturations(od, prior.basis)
    s_h = sats[..., 0] / prior.max_sat[0]
    prob = 1.0 / (1.0 + np.exp(-12.0 * (s_h - 0.35)))

    fg = prob >= 0.5
    edt = ndimage.distance_transform_edt(fg)
    comps, n = ndimage.label(fg)
    dist = np.zeros_like(edt)
    for c in range(1, n + 1):
        m = comps == c
        peak = edt[m].max()
        if peak > 0:
            dist[m] = edt[m] / peak
    return np.stack([prob, dist], axis=-1).astype(np.float32)


# ---------------------------------------------------------------------------
# Fixture dataset

ORGANS = ("bladder", "breast", "colon", "kidney", "liver", "prostate", "stomach")


def make_fixture(
    out_dir: str | Path,
    seed: int = 0,
    n_train: int = 7,
    n_test: int = 4,
    size: int = 64,
    shift_degrees: float = 20.0,
    organs: tuple[str, ...] = ORGANS,
    params: NormalizationParams | None = None,
) -> Path:
    """Write a complete synthetic dataset under out_dir.

    Training tiles use the base stain pair; test tiles use the pair rotated
    by shift_degrees. Produces images/, masks/, manifest.json, and
    prior.json (a reference profile fitted to the first training tile, for
    the stain-prior mock predictor). Returns the manifest path.

    The defaults are tuned so the stain-prior predictor nearly aces the
    training stains and drops below the 0.5 probability threshold on the
    shifted test stains, while one reference per organ (seven) gives the
    default-weighted ensemble enough mass to recover the detections.
    """
    params = params or NormalizationParams()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    shifted = rotate_stain_pair(NUCLEUS_STAIN, TISSUE_STAIN, shift_degrees)

    entries = []
    first_train: np.ndarray | None = None
    for split, count, stains in (
        ("train", n_train, (NUCLEUS_STAIN, TISSUE_STAIN)),
        ("test", n_test, shifted),
    ):
        for i in range(count):
            rng = np.random.Generator(
                np.random.Philox(np.random.SeedSequence((seed, int(split == "test"), i)))
            )
            img, labels = render_scene(
                rng, size=size, nucleus_stain=stains[0], tissue_stain=stains[1], params=params
            )
            image_id = f"{split}_{i:02d}"
            img_path = out / "images" / f"{image_id}.png"
            mask_path = out / "masks" / f"{image_id}.png"
            dataio.write_rgb(img, img_path)
            dataio.write_labels(labels, mask_path)
            entries.append(
                ManifestEntry(
                    image_id=image_id,
                    image_path=img_path,
                    mask_path=mask_path,
                    organ=organs[i % len(organs)] if split == "train" else None,
                    split=split,
                )
            )
            if first_train is None:
                first_train = img

    manifest = DatasetManifest(name="synthetic-stain-shift", entries=entries)
    manifest_path = out / "manifest.json"
    dataio.save_manifest(manifest, manifest_path)

    prior = build_reference_profile(first_train, params, source_id="train_00")
    (out / "prior.json").write_text(profile_to_json(prior))

    meta = {
        "seed": seed,
        "size": size,
        "shift_degrees": shift_degrees,
        "n_train": n_train,
        "n_test": n_test,
    }
    (out / "fixture.json").write_text(json.dumps(meta, indent=2) + "\n")
    return manifest_path
