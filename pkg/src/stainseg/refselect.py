"""Automatic reference-image selection by nuclei-vs-background contrast.

For each annotated image the mean grayscale intensity is computed separately
over nuclei pixels (any instance id > 0) and background pixels; images with
the largest absolute difference win, one (or k) per organ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRegion

# ITU-R BT.601 luma weights; the contrast statistic needs a single scalar
# intensity per pixel.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class AnnotatedImage:
    image: np.ndarray
    mask: np.ndarray
    organ: str
    image_id: str

    def __post_init__(self):
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(
                f"{self.image_id}: mask shape {self.mask.shape} does not match "
                f"image shape {self.image.shape[:2]}"
            )


@dataclass(frozen=True)
class ContrastScore:
    image_id: str
    organ: str
    mean_nuclei: float
    mean_background: float

    @property
    def score(self) -> float:
        return abs(self.mean_background - self.mean_nuclei)


def contrast_score(img: AnnotatedImage) -> ContrastScore:
    """Score one annotated image by nuclei/background mean-intensity contrast.

    Raises EmptyRegion when the mask is all-foreground or all-background.
    """
    gray = np.asarray(img.image, dtype=np.float64) @ _LUMA
    fg = np.asarray(img.mask) > 0
    n_fg = int(fg.sum())
    if n_fg == 0 or n_fg == fg.size:
        raise EmptyRegion(
            f"{img.image_id}: mask needs both nuclei and background pixels"
        )
    return ContrastScore(
        image_id=img.image_id,
        organ=img.organ,
        mean_nuclei=float(gray[fg].mean()),
        mean_background=float(gray[~fg].mean()),
    )


def select_references(
    images: list[AnnotatedImage], k_per_organ: int = 1
) -> list[AnnotatedImage]:
    """Pick the k highest-contrast images per organ.

    Deterministic regardless of input order: ties in score break by
    lexicographic image id, and the output is ordered by organ name, then
    score descending.
    """
    if k_per_organ < 1:
        raise ValueError(f"k_per_organ must be >= 1, got {k_per_organ}")
    scored: dict[str, list[tuple[ContrastScore, AnnotatedImage]]] = {}
    for img in images:
        scored.setdefault(img.organ, []).append((contrast_score(img), img))

    selected: list[AnnotatedImage] = []
    for organ in sorted(scored):
        group = sorted(scored[organ], key=lambda sc: (-sc[0].score, sc[0].image_id))
        selected.extend(img for _, img in group[:k_per_organ])
    return selected


def score_table(images: list[AnnotatedImage]) -> list[ContrastScore]:
    """Contrast scores for every image, ordered by organ then score descending."""
    rows = [contrast_score(img) for img in images]
    rows.sort(key=lambda sc: (sc.organ, -sc.score, sc.image_id))
    return rows
